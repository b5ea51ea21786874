"""Acceptance criteria 1-8, one verdict line each (see the terminal summary).

Tolerances are the ones the criteria state; nothing is relaxed here.
"""
import csv
import math
import time
from pathlib import Path

import numpy as np
import pytest

from advlyap import cli, theory
from advlyap.adversary import AdversarySpec, greedy_disturbance
from advlyap.certnet import MlpArchitecture, grad_theta, init_params
from advlyap.sim import pendulum_field, scalar_decay_field
from advlyap.theory import EdissParams, Mode, RegularityConstants

from conftest import record

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
ETA = 0.4
EPS = 0.1  # training budget, reused for perturbation classes 1 and 2


# ---------------------------------------------------------------- criteria 1 and 7

def desk_pipeline(root: Path):
    """Train V_nom and V_adv at desk scale and evaluate both on classes 1-4."""
    assert cli.main(["train", "--config", str(CONFIGS / "desk_nominal.toml"), "--out", str(root)]) == 0
    assert cli.main(["train", "--config", str(CONFIGS / "desk_adversarial.toml"), "--out", str(root)]) == 0
    ev = root / "evaluate.toml"
    ev.write_text(f"""
[evaluate]
certificates = {{ V_nom = "{root / 'V_nom.json'}", V_adv = "{root / 'V_adv.json'}" }}
greedy_certificate = "V_adv"
classes = [1, 2, 3, 4]
eps = {EPS}
n_test = 1000
seed = 1
""")
    assert cli.main(["evaluate", "--config", str(ev), "--out", str(root / "eval")]) == 0
    return root


@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    t0 = time.time()
    a = desk_pipeline(tmp_path_factory.mktemp("run_a"))
    elapsed = time.time() - t0
    b = desk_pipeline(tmp_path_factory.mktemp("run_b"))
    return a, b, elapsed


def rate_at(path: Path, eta: float):
    with path.open() as fh:
        for row in csv.DictReader(fh):
            if abs(float(row["eta"]) - eta) < 1e-12:
                return float(row["traj_rate"])
    raise AssertionError(f"eta={eta} missing from {path}")


def test_criterion_1_robustness_separation(desk_runs):
    root, _, elapsed = desk_runs
    rates = {(cert, c): rate_at(root / "eval" / f"satisfaction_{cert}_class{c}.csv", ETA)
             for cert in ("V_nom", "V_adv") for c in (1, 2, 3, 4)}
    adv_ok = all(rates["V_adv", c] >= 0.95 for c in (1, 2, 3, 4))
    nom_ok = all(rates["V_nom", c] <= 0.05 for c in (1, 2, 3, 4))
    time_ok = elapsed <= 15 * 60
    detail = ("V_adv " + " ".join(f"c{c}={rates['V_adv', c]:.3f}" for c in (1, 2, 3, 4))
              + " | V_nom " + " ".join(f"c{c}={rates['V_nom', c]:.3f}" for c in (1, 2, 3, 4))
              + f" | {elapsed:.0f}s")
    record(1, adv_ok and nom_ok and time_ok, detail)
    assert nom_ok, detail
    assert time_ok, detail
    assert adv_ok, detail


def test_criterion_7_determinism(desk_runs):
    a, b, _ = desk_runs
    names = ["V_nom.json", "V_adv.json", "V_nom_loss.csv", "V_adv_loss.csv"]
    names += [f"eval/satisfaction_{cert}_class{c}.csv" for cert in ("V_nom", "V_adv") for c in (1, 2, 3, 4)]
    differing = [n for n in names if (a / n).read_bytes() != (b / n).read_bytes()]
    record(7, not differing, f"{len(names)} artifacts compared, {len(differing)} differ")
    assert not differing


# ---------------------------------------------------------------- criterion 2

def test_criterion_2_gradient_oracle():
    t0 = time.time()
    rng = np.random.default_rng(2)
    arch = MlpArchitecture(2, 20)
    f = pendulum_field()
    worst_x = worst_th = 0.0
    for i in range(50):
        V = init_params(arch, 1000 + i)
        x = rng.uniform(-2, 2, size=2)
        g = V.grad(x)
        h = 1e-5
        fd = np.array([(V.value(x + h * e) - V.value(x - h * e)) / (2 * h) for e in np.eye(2)])
        worst_x = max(worst_x, np.linalg.norm(g - fd) / np.linalg.norm(fd))

        X = rng.uniform(-2, 2, size=(8, 2))
        U = f(0.0, X)
        _, gt = grad_theta(V, X, U, ETA, 0.1)
        idx = rng.choice(V.theta.size, 20, replace=False)
        ht = 1e-6
        fdt = np.empty(idx.size)
        for j, k in enumerate(idx):
            e = np.zeros_like(V.theta)
            e[k] = ht
            lp, _ = grad_theta(V.with_theta(V.theta + e), X, U, ETA, 0.1)
            lm, _ = grad_theta(V.with_theta(V.theta - e), X, U, ETA, 0.1)
            fdt[j] = (lp - lm) / (2 * ht)
        worst_th = max(worst_th, np.linalg.norm(gt[idx] - fdt) / np.linalg.norm(fdt))
    ok = worst_x <= 1e-5 and worst_th <= 1e-5
    record(2, ok, f"max rel err grad_x {worst_x:.2e}, grad_theta {worst_th:.2e} ({time.time() - t0:.1f}s)")
    assert ok


# ---------------------------------------------------------------- criterion 3

def test_criterion_3_deviation_bounds():
    t0 = time.time()
    ct = EdissParams(1.0, 1.0, 1.0)
    dtp = EdissParams(1.0, 0.8, 1.0, Mode.DT)
    f_ct = scalar_decay_field(1.0)

    def f_dt(x):
        return 0.8 * x

    cases = {
        "CT norm-bounded": (f_ct, ct, AdversarySpec.norm_bounded(0.1)),
        "CT Lipschitz": (f_ct, ct, AdversarySpec.lipschitz(0.5)),
        "CT combined": (f_ct, ct, AdversarySpec.combined(0.5, 0.1)),
        "DT norm-bounded": (f_dt, dtp, AdversarySpec.norm_bounded(0.1)),
        "DT Lipschitz": (f_dt, dtp, AdversarySpec.lipschitz(0.1)),
        "DT combined": (f_dt, dtp, AdversarySpec.combined(0.1, 0.1)),
    }
    failed, tight = [], None
    for name, (sys_, p, spec) in cases.items():
        r = theory.verify_deviation_bound(sys_, p, spec, 1000, seed=0)
        if not (r.passed and r.trials == 1000):
            failed.append(f"{name}: {r.failures} violations")
        if name == "DT Lipschitz":
            tight = r.details["tightness"]
    elapsed = time.time() - t0
    ok = not failed and tight <= 1e-9 and elapsed <= 60
    record(3, ok, f"6 tubes x 1000 trials, {len(failed)} failing, DT Lipschitz tightness {tight:.1e}, {elapsed:.1f}s")
    assert not failed, failed
    assert tight <= 1e-9
    assert elapsed <= 60


# ---------------------------------------------------------------- criterion 4

def test_criterion_4_combinatorial_identities():
    t0 = time.time()
    mismatches = [(t, j) for t in range(2, 13) for j in range(1, t)
                  if theory.nested_sum_count(t, j) != math.comb(t, j)]
    peak_err = max(max(abs(theory.peak_t_exp(r)[0] - 1 / r), abs(theory.peak_t_exp(r)[1] - 1 / (r * math.e)))
                   for r in (0.5, 1.0, 2.0))
    elapsed = time.time() - t0
    ok = not mismatches and peak_err <= 1e-12 and elapsed < 1.0
    record(4, ok, f"binomial mismatches {mismatches}, peak err {peak_err:.1e}, {elapsed:.3f}s")
    assert ok


# ---------------------------------------------------------------- criterion 5

def test_criterion_5_ediss_certification():
    t0 = time.time()
    lines, ok = [], True
    for rho in (0.5, 1.0, 2.0):
        f = scalar_decay_field(rho)
        good = theory.verify_ediss(f, EdissParams(1.0, rho, 1.0), 200, seed=0)
        bad = theory.verify_ediss(f, EdissParams(1.0, 2 * rho, 1.0), 200, seed=0)
        ok &= good.passed and not bad.passed
        lines.append(f"rho={rho:g}: ratio {good.max_ratio:.6f}, over-claim {bad.failures}/200 flagged")
    record(5, ok, "; ".join(lines) + f" ({time.time() - t0:.1f}s)")
    assert ok


# ---------------------------------------------------------------- criterion 6

def test_criterion_6_bound_calculator_regression():
    E = math.e
    ones = RegularityConstants(L_V=1.0, L_gradV=1.0, B_gradV=1.0)
    dt_half = EdissParams(1.0, 0.5, 1.0, Mode.DT)
    corners = [[-2, -2], [-2, 2], [2, -2], [2, 2]]
    checks = {
        "ct norm-bounded deviation": (theory.deviation_bound_ct("norm_bounded", EdissParams(1, 1, 1), eps_u=0.1).value, 0.1),
        "ct Lipschitz deviation": (theory.deviation_bound_ct("lipschitz", EdissParams(1, 2, 1), eps_x=1.0, xi_norm=1.0).value, 1 / E),
        "ct norm-bounded additive": (theory.rademacher_additive_ct("norm_bounded", ones, EdissParams(1, 1, 1), eps_u=0.1, eta=0.4, n=100).value, 0.024),
        "ct zero budget": (theory.rademacher_additive_ct("lipschitz", ones, EdissParams(1, 1, 1), n=100).value, 0.0),
        "ct nu only": (theory.rademacher_additive_ct("norm_bounded", ones, EdissParams(1, 1, 1), nu=0.5, n=4).value, 0.25),
        "dt norm-bounded additive": (theory.rademacher_additive_dt("norm_bounded", RegularityConstants(L_V=1.0), dt_half, eps_u=0.1, eta=0.9, n=100).value, 0.0362),
        "dt Lipschitz additive": (theory.rademacher_additive_dt("lipschitz", RegularityConstants(L_V=1.0, B_X=2.0), dt_half, eps_x=0.2, eta=0.9, n=1).value, 3.02),
        "gen bound": (theory.gen_bound(0.0, 0.1, 1.0, 100, 0.05, 1.0), math.log(math.log(10) / 0.05) / 100),
        "gen bound 1/n": (theory.gen_bound(0.0, 0.1, 1.0, 200, 0.05), theory.gen_bound(0.0, 0.1, 1.0, 100, 0.05) / 2),
        "L_htilde ct": (theory.lipschitz_bound_htilde(2.0, 0.5), 2.5),
        "L_htilde dt": (theory.lipschitz_bound_htilde(2.0, mode=Mode.DT), 4.0),
        "nested 5,2": (theory.nested_sum_count(5, 2), 10),
        "nested 3,1": (theory.nested_sum_count(3, 1), 3),
        "nested 2,1": (theory.nested_sum_count(2, 1), 2),
        "peak ct rho=1 t": (theory.peak_t_exp(1.0)[0], 1.0),
        "peak ct rho=1 value": (theory.peak_t_exp(1.0)[1], 1 / E),
        "peak ct rho=2 t": (theory.peak_t_exp(2.0)[0], 0.5),
        "peak ct rho=2 value": (theory.peak_t_exp(2.0)[1], 1 / (2 * E)),
        "peak dt rho=1/e": (theory.peak_t_exp(1 / E, Mode.DT)[1], 1.0),
        "B_X corners": (theory.estimate_regularity_constants([init_params(MlpArchitecture(2), 0)], None, corners, corners).B_X, 2 * math.sqrt(2)),
        "parametric k=n": (theory.parametric_rademacher_estimate(648, 1.0, 648), 1.0),
        "parametric 4,2,100": (theory.parametric_rademacher_estimate(4, 2.0, 100), 0.4),
        "parametric n=100": (theory.parametric_rademacher_estimate(1, 1.0, 100), 0.1),
        "parametric n=400": (theory.parametric_rademacher_estimate(1, 1.0, 400), 0.05),
    }
    bad = [k for k, (got, want) in checks.items() if got is None or abs(got - want) > 1e-12]

    # precondition_violated exactly when gamma*eps_x >= rho (CT) or rho + gamma*eps_x >= 1 (DT)
    wrong = []
    c = RegularityConstants(L_V=1.0, L_gradV=1.0, B_gradV=1.0, B_X=1.0)
    for rho in (0.5, 1.0, 2.0):
        for gamma in (0.5, 1.0, 2.0):
            for ex in (0.0, 0.25, 0.5, 1.0, 2.0, 4.0):
                p = EdissParams(1.0, rho, gamma)
                expect_violated = gamma * ex >= rho
                for kind in ("lipschitz", "combined"):
                    for r in (theory.deviation_bound_ct(kind, p, 0.1, ex, 1.0),
                              theory.rademacher_additive_ct(kind, c, p, 0.1, ex, 0.0, 0.4, 10)):
                        if (r.validity == "precondition_violated") != expect_violated or (r.value is None) != expect_violated:
                            wrong.append(("ct", rho, gamma, ex, kind))
    for rho in (0.25, 0.5, 0.75):
        for gamma in (0.5, 1.0):
            for ex in (0.0, 0.25, 0.5, 1.0):
                p = EdissParams(1.0, rho, gamma, Mode.DT)
                expect_violated = rho + gamma * ex >= 1.0
                for kind in ("lipschitz", "combined"):
                    for r in (theory.deviation_bound_dt(kind, p, 0.1, ex, 1.0),
                              theory.rademacher_additive_dt(kind, c, p, 0.1, ex, 0.0, 0.4, 10)):
                        if (r.validity == "precondition_violated") != expect_violated or (r.value is None) != expect_violated:
                            wrong.append(("dt", rho, gamma, ex, kind))
    ok = not bad and not wrong
    record(6, ok, f"{len(checks)} substitutions, mismatches {bad}; precondition grid errors {len(wrong)}")
    assert not bad, bad
    assert not wrong, wrong


# ---------------------------------------------------------------- criterion 8

def test_criterion_8_greedy_optimality():
    rng = np.random.default_rng(8)
    arch = MlpArchitecture(2, 20)
    worst_gap = math.inf
    failures = 0
    for i in range(100):
        V = init_params(arch, 5000 + i)
        x = rng.uniform(-2, 2, size=2)
        g = V.grad(x)
        eps = rng.uniform(0.01, 1.0)
        for spec, radius in ((AdversarySpec.lipschitz(eps), eps * np.linalg.norm(x)),
                             (AdversarySpec.norm_bounded(eps), eps)):
            best = g @ greedy_disturbance(V, spec)(0.0, x)
            dirs = rng.normal(size=(10_000, 2))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            cand = dirs * radius * np.sqrt(rng.random((10_000, 1)))  # uniform in the budget ball
            top = float(np.max(cand @ g))
            worst_gap = min(worst_gap, best - top)
            failures += top > best
    record(8, failures == 0, f"100 pairs x 2 tubes x 1e4 samples, {failures} beaten, min margin {worst_gap:.2e}")
    assert failures == 0
