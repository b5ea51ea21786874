"""Command-line runner: ``train``, ``evaluate``, ``bounds`` and ``verify``.

Each command reads one TOML config (or the ``manifest.json`` of an earlier
run), writes its artifacts under ``--out`` and finishes with a manifest that
echoes the resolved config.

Exit codes: 0 ok, 2 config error, 3 numeric failure, 4 missing checkpoint,
5 bound precondition violated, 6 property failure.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

from .errors import ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECKPOINT, EXIT_PRECONDITION, EXIT_PROPERTY = 0, 2, 3, 4, 5, 6

log = logging.getLogger("advlyap")

# ---------------------------------------------------------------- config schema
# Defaults double as type declarations; ``None`` means "required or optional
# without default" and is type-checked loosely.

SYSTEM = {"name": "pendulum", "m": 1.0, "l": 1.0, "b": 2.0, "g": 9.81, "rho": 1.0, "wrap_dims": [0]}
ADVERSARY = {"kind": "lipschitz", "eps_x": 0.1, "eps_u": 0.0}

SCHEMA = {
    "train": {
        "train": {"mode": "adversarial", "eta": 0.4, "lam": 0.1, "epochs": 500, "batch_size": 1000,
                  "base_lr": 0.005, "alternations": 5, "inner_epochs": 100, "horizon": 8.0, "dt": 0.05,
                  "n_train": 1000, "ic_lo": [-2.0, -2.0], "ic_hi": [2.0, 2.0], "seed": 0, "hidden": 20,
                  "name": "certificate", "loss_scaling": "batch"},
        "system": SYSTEM,
        "adversary": ADVERSARY,
    },
    "evaluate": {
        "evaluate": {"certificates": {}, "greedy_certificate": "", "classes": [1, 2, 3, 4], "eps": 0.1,
                     "n_test": 1000, "seed": 1, "ic_lo": [-2.0, -2.0], "ic_hi": [2.0, 2.0], "horizon": 8.0,
                     "dt": 0.05, "retained": 160, "eta_grid": [], "perturbed_m": 1.1, "perturbed_l": 1.1},
        "system": SYSTEM,
    },
    "bounds": {
        "ediss": {"beta": 1.0, "rho": 1.0, "gamma": 1.0, "mode": "ct"},
        "constants": {"L_V": 0.0, "L_gradV": 0.0, "B_V": 0.0, "B_gradV": 0.0, "B_X": 0.0, "B_htilde": 0.0,
                      "checkpoint": "", "grid_lo": [-3.0, -3.0], "grid_hi": [3.0, 3.0], "grid_points": 21},
        "bounds": {"kinds": ["norm_bounded", "lipschitz", "combined"], "eps_u": 0.0, "eps_x": 0.0, "nu": 0.0,
                   "eta": 0.4, "n": 1000, "xi_norm": 0.0, "Rn": -1.0, "tau": 0.1, "B_h": 1.0, "delta": 0.05,
                   "K": 1.0, "inner_const": 1.0, "k": 648, "C": 1.0},
        "system": SYSTEM,
    },
    "verify": {
        "verify": {"trials": 1000, "ediss_trials": 200, "seed": 0, "rhos": [0.5, 1.0, 2.0], "eps_u": 0.1,
                   "eps_x": 0.5, "dt_rho": 0.8, "dt_eps_u": 0.1, "dt_eps_x": 0.1, "t_max": 12,
                   "claims": []},
    },
}

CLAIM_KEYS = {"system_rho": 1.0, "beta": 1.0, "rho": 1.0, "gamma": 1.0}


def _load_toml(path):
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _typecheck(section, key, default, value):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, list):
        ok = isinstance(value, list)
    elif isinstance(default, dict):
        ok = isinstance(value, dict)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"[{section}] {key}: expected {type(default).__name__}, got {value!r}")
    return value


def resolve_config(command, raw: dict) -> dict:
    """Merge ``raw`` over the defaults; unknown sections or keys are errors."""
    schema = SCHEMA[command]
    unknown = set(raw) - set(schema)
    if unknown:
        raise ConfigError(f"unknown section(s) for '{command}': {sorted(unknown)}")
    out = {}
    for section, defaults in schema.items():
        given = raw.get(section, {})
        if not isinstance(given, dict):
            raise ConfigError(f"[{section}] must be a table")
        bad = set(given) - set(defaults)
        if bad:
            raise ConfigError(f"unknown key(s) in [{section}]: {sorted(bad)}")
        sec = copy.deepcopy(defaults)
        for k, v in given.items():
            sec[k] = _typecheck(section, k, defaults[k], v)
        out[section] = sec
    return out


def load_config(command, path) -> dict:
    if path is None:
        return resolve_config(command, {})
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    try:
        if path.suffix == ".json":
            doc = json.loads(path.read_text())
            if doc.get("command") != command:
                raise ConfigError(f"manifest {path} was written by '{doc.get('command')}', not '{command}'")
            raw = doc["config"]
        else:
            raw = _load_toml(path)
    except ConfigError:
        raise
    except Exception as exc:  # parse errors of either format
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return resolve_config(command, raw)


# ---------------------------------------------------------------- helpers

def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _fmt(v):
    return f"{v:.17g}" if isinstance(v, float) else str(v)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(v) for v in r) + "\n")


def _write_manifest(out: Path, command, cfg, outputs, extra=None):
    import numpy as np

    from . import __version__
    from .certnet import BACKEND
    doc = {"command": command, "version": __version__, "config": cfg, "backend": BACKEND,
           "numpy": np.__version__,
           "outputs": {Path(p).name: _sha256(p) for p in outputs}}
    if extra:
        doc.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _system(sec):
    from .sim import PendulumParams, pendulum_field, scalar_decay_field
    name = sec["name"]
    if name == "pendulum":
        try:
            params = PendulumParams(sec["m"], sec["l"], sec["b"], sec["g"])
        except ValueError as exc:
            raise ConfigError(f"[system] {exc}") from None
        return pendulum_field(params), params, list(sec["wrap_dims"])
    if name == "scalar_decay":
        if not sec["rho"] > 0:
            raise ConfigError("[system] rho must be positive")
        return scalar_decay_field(sec["rho"]), None, []
    raise ConfigError(f"[system] unknown system {name!r}")


def _adversary(sec):
    from .adversary import AdversarySpec, TubeKind
    try:
        kind = TubeKind(sec["kind"])
        return AdversarySpec(kind, eps_u=sec["eps_u"], eps_x=sec["eps_x"])
    except ValueError as exc:
        raise ConfigError(f"[adversary] {exc}") from None


# ---------------------------------------------------------------- train

def cmd_train(cfg, out: Path) -> int:
    import numpy as np

    from .certnet import MlpArchitecture, dumps_checkpoint, init_params
    from .errors import NonFiniteLoss, NonFiniteState
    from .sim import sample_initial_conditions
    from .trainer import TrainConfig, nominal_dataset, train_adversarial, train_nominal

    t = cfg["train"]
    f, _, wrap = _system(cfg["system"])
    spec = _adversary(cfg["adversary"])
    if t["mode"] not in ("nominal", "adversarial"):
        raise ConfigError("[train] mode must be 'nominal' or 'adversarial'")
    if len(t["ic_lo"]) != f.dim or len(t["ic_hi"]) != f.dim:
        raise ConfigError(f"[train] ic box must have {f.dim} entries")
    if t["epochs"] < 1 or t["inner_epochs"] < 1 or t["n_train"] < 1 or t["hidden"] < 1:
        raise ConfigError("[train] epochs, inner_epochs, n_train and hidden must be >= 1")
    try:
        tc = TrainConfig(eta=t["eta"], lam=t["lam"], epochs=t["epochs"], batch_size=t["batch_size"],
                         base_lr=t["base_lr"], alternations=t["alternations"], inner_epochs=t["inner_epochs"],
                         adversary=spec, horizon=t["horizon"], dt=t["dt"], n_train=t["n_train"],
                         ic_lo=tuple(t["ic_lo"]), ic_hi=tuple(t["ic_hi"]), seed=t["seed"],
                         loss_scaling=t["loss_scaling"])
        ics = sample_initial_conditions(t["n_train"], t["ic_lo"], t["ic_hi"], t["seed"])
    except ValueError as exc:
        raise ConfigError(f"[train] {exc}") from None
    if t["mode"] == "adversarial" and spec.kind.value == "none":
        raise ConfigError("[adversary] adversarial training needs kind norm_bounded, lipschitz or combined")
    init = init_params(MlpArchitecture(f.dim, t["hidden"]), t["seed"])
    name = t["name"]
    out.mkdir(parents=True, exist_ok=True)

    def hook(epoch, loss, lr):
        if epoch % 50 == 0:
            log.info("epoch %d loss %.6g lr %.3g", epoch, loss, lr)

    start = time.time()
    try:
        if t["mode"] == "nominal":
            data = nominal_dataset(f, ics, tc, wrap)
            if len(data) < tc.batch_size:
                log.info("batch_size %d exceeds %d samples; using full batches", tc.batch_size, len(data))
            res = train_nominal(data, tc, init, epoch_hook=hook)
        else:
            res = train_adversarial(ics, f, tc, init, wrap, epoch_hook=hook)
    except (NonFiniteLoss, NonFiniteState) as exc:
        diag = {"error": type(exc).__name__, "message": str(exc),
                "epoch": getattr(exc, "epoch", None), "step": getattr(exc, "step", None)}
        last = getattr(exc, "params", None)
        if last is not None:
            (out / f"{name}.last_finite.json").write_text(dumps_checkpoint(last))
        (out / "diagnostic.json").write_text(json.dumps(diag, indent=2) + "\n")
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    ckpt = out / f"{name}.json"
    ckpt.write_text(dumps_checkpoint(res.params))
    loss_csv = out / f"{name}_loss.csv"
    _write_csv(loss_csv, ["epoch", "loss", "lr"], res.history)
    extra = {"dataset_sha256": [d.content_hash() for d in res.datasets],
             "phases": [{"start_loss": a, "end_loss": b} for a, b in res.phase_losses],
             "inner_minimizations": res.inner_minimizations, "rerollouts": res.rerollouts,
             "training_adversary": spec.to_dict(), "n_params": int(init.theta.size),
             "wall_seconds": round(time.time() - start, 3)}
    _write_manifest(out, "train", cfg, [ckpt, loss_csv], extra)
    log.info("wrote %s (%d epochs) with training adversary %s", ckpt, len(res.history), spec.to_dict())
    return EXIT_OK


# ---------------------------------------------------------------- evaluate

CLASS_NAMES = {1: "greedy", 2: "radial", 3: "linearized", 4: "perturbed_params"}


def evaluation_classes(f, params, wrap, ev, certs):
    """``{class: (field, disturbance, spec)}`` for the requested classes."""
    from .adversary import AdversarySpec, greedy_disturbance, radial_disturbance, zero_disturbance
    from .sim import PendulumParams, linearized_pendulum_field, pendulum_field

    eps = ev["eps"]
    out = {}
    for c in ev["classes"]:
        if c == 1:
            key = ev["greedy_certificate"] or next(iter(certs))
            if key not in certs:
                raise ConfigError(f"[evaluate] greedy_certificate {key!r} is not among the certificates")
            spec = AdversarySpec.lipschitz(eps)
            out[c] = (f, greedy_disturbance(certs[key], spec), spec)
        elif c == 2:
            out[c] = (f, radial_disturbance(eps), AdversarySpec.lipschitz(eps))
        elif c in (3, 4):
            if params is None:
                raise ConfigError(f"[evaluate] class {c} needs the pendulum system")
            if c == 3:
                out[c] = (linearized_pendulum_field(params), zero_disturbance(), AdversarySpec.none())
            else:
                pp = PendulumParams(ev["perturbed_m"], ev["perturbed_l"], params.b, params.g)
                out[c] = (pendulum_field(pp), zero_disturbance(), AdversarySpec.none())
        else:
            raise ConfigError(f"[evaluate] unknown perturbation class {c}; use 1-4")
    return out


def cmd_evaluate(cfg, out: Path) -> int:
    import numpy as np

    from .adversary import perturbed_rollout_many
    from .certnet import load_checkpoint
    from .errors import CheckpointError, NonFiniteState
    from .sim import sample_initial_conditions
    from .violation import default_eta_grid, satisfaction_rates

    ev = cfg["evaluate"]
    f, params, wrap = _system(cfg["system"])
    if not ev["certificates"]:
        raise ConfigError("[evaluate] certificates table is empty")
    if ev["n_test"] < 1 or ev["retained"] < 1:
        raise ConfigError("[evaluate] n_test and retained must be >= 1")
    certs = {}
    for name, path in ev["certificates"].items():
        if not Path(path).exists():
            log.error("checkpoint %s for %s not found", path, name)
            return EXIT_CHECKPOINT
        try:
            certs[name] = load_checkpoint(path)
        except CheckpointError as exc:
            log.error("%s", exc)
            return EXIT_CHECKPOINT
    grid = ev["eta_grid"] or list(default_eta_grid())
    try:
        xis = sample_initial_conditions(ev["n_test"], ev["ic_lo"], ev["ic_hi"], ev["seed"])
    except ValueError as exc:
        raise ConfigError(f"[evaluate] {exc}") from None
    classes = evaluation_classes(f, params, wrap, ev, certs)
    out.mkdir(parents=True, exist_ok=True)
    written, summary = [], {}
    for c, (field, dist, spec) in classes.items():
        try:
            trajs = perturbed_rollout_many(field, dist, spec, xis, ev["horizon"], ev["dt"], wrap)
        except NonFiniteState as exc:
            log.error("class %d rollout diverged: %s", c, exc)
            return EXIT_NUMERIC
        trajs = [tr.head(ev["retained"]) for tr in trajs]
        for name, V in certs.items():
            rows = satisfaction_rates(trajs, V, grid)
            path = out / f"satisfaction_{name}_class{c}.csv"
            _write_csv(path, ["eta", "traj_rate", "point_rate", "certificate", "perturbation_class"],
                       [(e, tr, pr, name, c) for e, tr, pr in rows])
            written.append(path)
            at = [r for r in rows if abs(r[0] - 0.4) < 1e-12]
            if at:
                summary[f"{name}/class{c}"] = {"traj_rate": at[0][1], "point_rate": at[0][2]}
    _write_manifest(out, "evaluate", cfg, written,
                    {"class_names": {str(c): CLASS_NAMES[c] for c in classes}, "rates_at_eta_0.4": summary})
    for k, v in summary.items():
        log.info("%s: trajectory rate %.3f, point rate %.4f at eta=0.4", k, v["traj_rate"], v["point_rate"])
    return EXIT_OK


# ---------------------------------------------------------------- bounds

def cmd_bounds(cfg, out: Path) -> int:
    import numpy as np

    from . import theory
    from .adversary import TubeKind
    from .certnet import load_checkpoint
    from .errors import CheckpointError, InvalidDomain

    e, c, b = cfg["ediss"], cfg["constants"], cfg["bounds"]
    try:
        p = theory.EdissParams(e["beta"], e["rho"], e["gamma"], e["mode"])
    except ValueError as exc:
        raise ConfigError(f"[ediss] {exc}") from None
    if c["checkpoint"]:
        if not Path(c["checkpoint"]).exists():
            log.error("checkpoint %s not found", c["checkpoint"])
            return EXIT_CHECKPOINT
        try:
            V = load_checkpoint(c["checkpoint"])
        except CheckpointError as exc:
            log.error("%s", exc)
            return EXIT_CHECKPOINT
        f, _, _ = _system(cfg["system"])
        axes = [np.linspace(lo, hi, c["grid_points"]) for lo, hi in zip(c["grid_lo"], c["grid_hi"])]
        S = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
        corners = np.array(np.meshgrid(*[[lo, hi] for lo, hi in zip(c["grid_lo"], c["grid_hi"])])).reshape(len(axes), -1).T
        consts = theory.estimate_regularity_constants([V], f, S, corners, eta=b["eta"])
        source = "estimated"
    else:
        try:
            consts = theory.RegularityConstants(c["L_V"], c["L_gradV"], c["B_V"], c["B_gradV"], c["B_X"],
                                                c["B_htilde"])
        except ValueError as exc:
            raise ConfigError(f"[constants] {exc}") from None
        source = "given"
    if b["n"] < 1:
        raise ConfigError("[bounds] n must be >= 1")
    clauses = []
    try:
        for kind in b["kinds"]:
            kind = TubeKind(kind)
            if p.mode == theory.Mode.CT:
                dev = theory.deviation_bound_ct(kind, p, b["eps_u"], b["eps_x"], b["xi_norm"])
                rad = theory.rademacher_additive_ct(kind, consts, p, b["eps_u"], b["eps_x"], b["nu"], b["eta"], b["n"])
            else:
                dev = theory.deviation_bound_dt(kind, p, b["eps_u"], b["eps_x"], b["xi_norm"])
                rad = theory.rademacher_additive_dt(kind, consts, p, b["eps_u"], b["eps_x"], b["nu"], b["eta"], b["n"])
            clauses += [dev, rad]
    except ValueError as exc:
        raise ConfigError(f"[bounds] {exc}") from None
    Rn = b["Rn"] if b["Rn"] >= 0 else theory.parametric_rademacher_estimate(b["k"], b["C"], b["n"])
    report = {"ediss": p.to_dict(), "constants": consts.to_dict(), "constants_source": source,
              "clauses": [cl.to_dict() for cl in clauses],
              "Rn_nominal": Rn, "Rn_source": "given" if b["Rn"] >= 0 else "parametric C*sqrt(k/n) proxy",
              "K": b["K"], "note": "generalization values hold up to the universal constant K"}
    gens = {}
    for cl in clauses:
        if cl.formula_id.endswith(tuple(f"rademacher_{k}" for k in b["kinds"])) and cl.ok:
            try:
                gens[cl.formula_id] = theory.gen_bound(Rn + cl.value, b["tau"], b["B_h"], b["n"], b["delta"],
                                                       b["K"], b["inner_const"])
            except InvalidDomain as exc:
                gens[cl.formula_id] = None
                report["gen_bound_error"] = str(exc)
    report["gen_bound"] = gens
    report["lipschitz_htilde_dt_offset"] = theory.lipschitz_bound_htilde(0.0, 0.0, theory.Mode.DT)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "bounds.json"
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    _write_manifest(out, "bounds", cfg, [path])
    bad = [cl for cl in clauses if not cl.ok]
    for cl in bad:
        print(f"precondition violated: {cl.formula_id}: {cl.reason}", file=sys.stderr)
    return EXIT_PRECONDITION if bad else EXIT_OK


# ---------------------------------------------------------------- verify

def _junit(path, cases):
    from xml.sax.saxutils import escape, quoteattr
    fails = sum(1 for c in cases if not c["passed"])
    total_t = sum(c["seconds"] for c in cases)
    lines = ['<?xml version="1.0" encoding="utf-8"?>',
             f'<testsuite name="advlyap.verify" tests="{len(cases)}" failures="{fails}" time="{total_t:.3f}">']
    for c in cases:
        lines.append(f'  <testcase classname="advlyap.verify" name={quoteattr(c["name"])} time="{c["seconds"]:.3f}">')
        if not c["passed"]:
            lines.append(f'    <failure message={quoteattr(c["message"])}>{escape(c["message"])}</failure>')
        lines.append("  </testcase>")
    lines.append("</testsuite>")
    Path(path).write_text("\n".join(lines) + "\n")


def cmd_verify(cfg, out: Path) -> int:
    from . import theory
    from .adversary import AdversarySpec
    from .sim import scalar_decay_field

    v = cfg["verify"]
    if v["trials"] < 1 or v["ediss_trials"] < 1:
        raise ConfigError("[verify] trials and ediss_trials must be >= 1")
    if v["t_max"] < 2:
        raise ConfigError("[verify] t_max must be >= 2")
    claims = []
    for i, cl in enumerate(v["claims"]):
        if not isinstance(cl, dict) or set(cl) - set(CLAIM_KEYS):
            raise ConfigError(f"[verify] claims[{i}] must be a table with keys {sorted(CLAIM_KEYS)}")
        claims.append({**CLAIM_KEYS, **{k: float(x) for k, x in cl.items()}})
    cases = []

    def case(name, fn):
        t0 = time.time()
        try:
            ok, msg = fn()
        except Exception as exc:  # a crashing check is a failed property
            ok, msg = False, f"{type(exc).__name__}: {exc}"
        cases.append({"name": name, "passed": bool(ok), "message": msg, "seconds": time.time() - t0})
        log.info("%s %s %s", "PASS" if ok else "FAIL", name, msg)

    seed = v["seed"]
    for rho in v["rhos"]:
        f = scalar_decay_field(rho)

        def ediss_ok(f=f, rho=rho):
            r = theory.verify_ediss(f, theory.EdissParams(1.0, rho, 1.0), v["ediss_trials"], seed)
            return r.passed, f"max ratio {r.max_ratio:.12g}"

        def overclaim_rejected(f=f, rho=rho):
            r = theory.verify_ediss(f, theory.EdissParams(1.0, 2 * rho, 1.0), v["ediss_trials"], seed)
            return not r.passed, f"over-claimed decay flagged in {r.failures}/{r.trials} trials"

        case(f"ediss_scalar_rho{rho:g}", ediss_ok)
        case(f"ediss_overclaim_rejected_rho{rho:g}", overclaim_rejected)
    for cl in claims:
        def claim_ok(cl=cl):
            r = theory.verify_ediss(scalar_decay_field(cl["system_rho"]),
                                    theory.EdissParams(cl["beta"], cl["rho"], cl["gamma"]), v["ediss_trials"], seed)
            return r.passed, f"max ratio {r.max_ratio:.12g}"
        case(f"ediss_claim_beta{cl['beta']:g}_rho{cl['rho']:g}_gamma{cl['gamma']:g}_on_rho{cl['system_rho']:g}",
             claim_ok)

    ct = theory.EdissParams(1.0, 1.0, 1.0)
    dt_rho = v["dt_rho"]
    dtp = theory.EdissParams(1.0, dt_rho, 1.0, "dt")
    ct_specs = {"norm_bounded": AdversarySpec.norm_bounded(v["eps_u"]), "lipschitz": AdversarySpec.lipschitz(v["eps_x"]),
                "combined": AdversarySpec.combined(v["eps_x"], v["eps_u"])}
    dt_specs = {"norm_bounded": AdversarySpec.norm_bounded(v["dt_eps_u"]),
                "lipschitz": AdversarySpec.lipschitz(v["dt_eps_x"]),
                "combined": AdversarySpec.combined(v["dt_eps_x"], v["dt_eps_u"])}
    for name, spec in ct_specs.items():
        def dev_ct(spec=spec):
            r = theory.verify_deviation_bound(scalar_decay_field(1.0), ct, spec, v["trials"], seed)
            return r.passed, f"{r.failures} violations, max deviation/bound {r.max_ratio:.6g}"
        case(f"deviation_ct_{name}", dev_ct)
    for name, spec in dt_specs.items():
        def dev_dt(spec=spec, name=name):
            r = theory.verify_deviation_bound(lambda x: dt_rho * x, dtp, spec, v["trials"], seed)
            msg = f"{r.failures} violations, max deviation/bound {r.max_ratio:.6g}"
            ok = r.passed
            if name == "lipschitz":
                ok = ok and r.details["tightness"] <= 1e-9
                msg += f", worst-case tightness {r.details['tightness']:.3g}"
            return ok, msg
        case(f"deviation_dt_{name}", dev_dt)

    def binomial():
        rows = theory.binomial_check(v["t_max"])
        bad = [(t, j) for t, j, a, b in rows if a != b]
        return not bad, f"{len(rows)} pairs, mismatches {bad}"

    def peaks():
        errs = [max(abs(theory.peak_t_exp(r)[0] - 1 / r), abs(theory.peak_t_exp(r)[1] - 1 / (r * math.e)))
                for r in (0.5, 1.0, 2.0)]
        return max(errs) <= 1e-12, f"max abs error {max(errs):.3g}"

    case("nested_sum_binomial", binomial)
    case("peak_t_exp_ct", peaks)
    out.mkdir(parents=True, exist_ok=True)
    xml = out / "verify_junit.xml"
    _junit(xml, cases)
    report = out / "verify.json"
    report.write_text(json.dumps({"cases": [{k: c[k] for k in ("name", "passed", "message")} for c in cases]},
                                 indent=2) + "\n")
    _write_manifest(out, "verify", cfg, [xml, report])
    return EXIT_OK if all(c["passed"] for c in cases) else EXIT_PROPERTY


# ---------------------------------------------------------------- entry point

COMMANDS = {"train": cmd_train, "evaluate": cmd_evaluate, "bounds": cmd_bounds, "verify": cmd_verify}
SEED_TARGET = {"train": ("train", "seed"), "evaluate": ("evaluate", "seed"), "verify": ("verify", "seed")}


def build_parser():
    ap = argparse.ArgumentParser(prog="advlyap", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="TOML config, or a manifest.json from an earlier run")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--threads", type=int, default=1, help="cap on worker threads (results do not change)")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        log.error("--threads must be >= 1")
        return EXIT_CONFIG
    if "numpy" not in sys.modules:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        cfg = load_config(args.command, args.config)
        if args.seed is not None and args.command in SEED_TARGET:
            sec, key = SEED_TARGET[args.command]
            cfg[sec][key] = args.seed
        return COMMANDS[args.command](cfg, Path(args.out))
    except ConfigError as exc:
        log.error("config error: %s", exc)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
