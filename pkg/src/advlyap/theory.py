"""Closed-form E-dISS deviation bounds, Rademacher additive terms and their
numerical checks, in continuous (CT) and discrete (DT) time.

Every bound is returned as a :class:`BoundResult` that either carries a value
or the reason its precondition failed; nothing here raises for a violated
stability precondition.
"""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .adversary import AdversarySpec, Disturbance, TubeKind, dt_perturbed_rollout_many, perturbed_rollout_many
from .errors import DomainError, InvalidDomain
from .sim import VectorField, integrate


class Mode(str, enum.Enum):
    CT = "ct"
    DT = "dt"


@dataclass(frozen=True)
class EdissParams:
    beta: float
    rho: float
    gamma: float
    mode: Mode = Mode.CT

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if not self.beta > 0 or not self.gamma > 0 or not self.rho > 0:
            raise ValueError("beta, rho and gamma must be positive")
        if self.mode == Mode.DT and not self.rho < 1:
            raise ValueError("discrete-time E-dISS needs 0 < rho < 1")

    def to_dict(self):
        return {"beta": self.beta, "rho": self.rho, "gamma": self.gamma, "mode": self.mode.value}


@dataclass(frozen=True)
class RegularityConstants:
    L_V: float = 0.0
    L_gradV: float = 0.0
    B_V: float = 0.0
    B_gradV: float = 0.0
    B_X: float = 0.0
    B_htilde: float = 0.0

    def __post_init__(self):
        for k, v in self.to_dict().items():
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{k} must be finite and non-negative, got {v}")

    def to_dict(self):
        return {"L_V": self.L_V, "L_gradV": self.L_gradV, "B_V": self.B_V,
                "B_gradV": self.B_gradV, "B_X": self.B_X, "B_htilde": self.B_htilde}


@dataclass
class BoundResult:
    formula_id: str
    value: Optional[float] = None
    inputs: dict = field(default_factory=dict)
    validity: str = "ok"
    reason: str = ""
    precondition: str = ""

    @property
    def ok(self):
        return self.validity == "ok"

    def to_dict(self):
        return {"formula_id": self.formula_id, "value": self.value, "validity": self.validity,
                "reason": self.reason, "precondition": self.precondition, "inputs": self.inputs}


def _violated(fid, inputs, reason, pre):
    return BoundResult(fid, None, inputs, "precondition_violated", reason, pre)


def _kind(kind):
    kind = TubeKind(kind)
    if kind == TubeKind.NONE:
        raise ValueError("bounds need a non-trivial tube kind")
    return kind


def _need_mode(p: EdissParams, mode: Mode):
    if p.mode != mode:
        raise ValueError(f"expected {mode.value.upper()} E-dISS parameters, got {p.mode.value.upper()}")


# ---------------------------------------------------------------- CT bounds

CT_PRE = "gamma*eps_x < rho"
DT_PRE = "rho + gamma*eps_x < 1"


def deviation_bound_ct(kind, p: EdissParams, eps_u=0.0, eps_x=0.0, xi_norm=0.0) -> BoundResult:
    """Bound on ``sup_t |phi_t - phi~_t|`` for the CT tubes."""
    kind = _kind(kind)
    _need_mode(p, Mode.CT)
    b, r, g = p.beta, p.rho, p.gamma
    inputs = dict(kind=kind.value, **p.to_dict(), eps_u=eps_u, eps_x=eps_x, xi_norm=xi_norm)
    fid = f"ct_deviation_{kind.value}"
    if kind == TubeKind.NORM_BOUNDED:
        return BoundResult(fid, g * eps_u / r, inputs, precondition="none")
    if not g * eps_x < r:
        return _violated(fid, inputs, f"γε < ρ required (gamma*eps_x = {g * eps_x:.6g} >= rho = {r:.6g})", CT_PRE)
    q = g * eps_x / r
    if kind == TubeKind.LIPSCHITZ:
        val = q / (1.0 - q) * b * math.exp(-1.0) * xi_norm
    else:
        val = (g * eps_u / r + q * b * math.exp(-1.0) * xi_norm) / (1.0 - q)
    return BoundResult(fid, val, inputs, precondition=CT_PRE)


def rademacher_additive_ct(kind, c: RegularityConstants, p: EdissParams, eps_u=0.0, eps_x=0.0,
                           nu=0.0, eta=0.0, n=1) -> BoundResult:
    """Additive term in ``R_n(H~) <= R_n(H) + term`` (CT clauses as printed)."""
    kind = _kind(kind)
    _need_mode(p, Mode.CT)
    if n < 1:
        raise ValueError("n must be >= 1")
    b, r, g = p.beta, p.rho, p.gamma
    inputs = dict(kind=kind.value, **p.to_dict(), **c.to_dict(), eps_u=eps_u, eps_x=eps_x,
                  nu=nu, eta=eta, n=n)
    fid = f"ct_rademacher_{kind.value}"
    lip = c.L_gradV + eta * c.L_V
    if kind == TubeKind.NORM_BOUNDED:
        inner = lip * g * eps_u / r + c.B_gradV * eps_u + nu
        return BoundResult(fid, inner / math.sqrt(n), inputs, precondition="none")
    if not g * eps_x < r:
        return _violated(fid, inputs, f"γε < ρ required (gamma*eps_x = {g * eps_x:.6g} >= rho = {r:.6g})", CT_PRE)
    q = g * eps_x / r
    ex = eps_x
    if kind == TubeKind.LIPSCHITZ:
        inner = ((lip + c.B_gradV * ex) * q / (1.0 - q) * math.exp(-1.0) * c.B_X * b * ex
                 + c.B_gradV * c.B_X * b * ex + nu)
    else:
        inner = ((lip + c.B_gradV * ex) * (g * eps_u / r + q * math.exp(-1.0) * c.B_X * b * ex) / (1.0 - q)
                 + c.B_gradV * b * ex * c.B_X + c.B_gradV * eps_u + nu)
    return BoundResult(fid, inner / math.sqrt(n), inputs, precondition=CT_PRE)


# ---------------------------------------------------------------- DT bounds

def deviation_bound_dt(kind, p: EdissParams, eps_u=0.0, eps_x=0.0, xi_norm=0.0,
                       t: Optional[int] = None) -> BoundResult:
    """DT deviation bound.  The Lipschitz clause is time dependent,
    ``beta |xi| (rho + gamma eps)^t``; with ``t=None`` its supremum over
    ``t >= 0`` (attained at ``t = 0``) is returned."""
    kind = _kind(kind)
    _need_mode(p, Mode.DT)
    b, r, g = p.beta, p.rho, p.gamma
    inputs = dict(kind=kind.value, **p.to_dict(), eps_u=eps_u, eps_x=eps_x, xi_norm=xi_norm, t=t)
    fid = f"dt_deviation_{kind.value}"
    if kind == TubeKind.NORM_BOUNDED:
        return BoundResult(fid, g * eps_u / (1.0 - r), inputs, precondition="none")
    if not r + g * eps_x < 1.0:
        return _violated(fid, inputs, f"ρ + γε < 1 required (rho + gamma*eps_x = {r + g * eps_x:.6g} >= 1)", DT_PRE)
    if kind == TubeKind.LIPSCHITZ:
        return BoundResult(fid, b * xi_norm * (r + g * eps_x) ** (0 if t is None else t), inputs,
                           precondition=DT_PRE)
    peak = peak_t_exp(r, Mode.DT)[1]
    val = (1.0 - r) / (1.0 - (r + g * eps_x)) * g * (b * peak * xi_norm * eps_x + eps_u / (1.0 - r))
    return BoundResult(fid, val, inputs, precondition=DT_PRE)


def rademacher_additive_dt(kind, c: RegularityConstants, p: EdissParams, eps_u=0.0, eps_x=0.0,
                           nu=0.0, eta=0.0, n=1) -> BoundResult:
    kind = _kind(kind)
    _need_mode(p, Mode.DT)
    if n < 1:
        raise ValueError("n must be >= 1")
    b, r, g = p.beta, p.rho, p.gamma
    inputs = dict(kind=kind.value, **p.to_dict(), **c.to_dict(), eps_u=eps_u, eps_x=eps_x,
                  nu=nu, eta=eta, n=n)
    fid = f"dt_rademacher_{kind.value}"
    if kind == TubeKind.NORM_BOUNDED:
        inner = (1.0 + eta ** 2) * c.L_V * g * eps_u / (1.0 - r) + nu
        return BoundResult(fid, inner / math.sqrt(n), inputs, precondition="none")
    if not r + g * eps_x < 1.0:
        return _violated(fid, inputs, f"ρ + γε < 1 required (rho + gamma*eps_x = {r + g * eps_x:.6g} >= 1)", DT_PRE)
    if kind == TubeKind.LIPSCHITZ:
        inner = c.L_V * b * c.B_X * (r + g * eps_x + eta ** 2) + nu
    else:
        peak = peak_t_exp(r, Mode.DT)[1]
        inner = ((1.0 + eta ** 2) * c.L_V
                 * ((1.0 - r) / (1.0 - (r + g * eps_x)) * g * b * c.B_X * eps_x * peak
                    + g * eps_u / (1.0 - r)) + nu)
    return BoundResult(fid, inner / math.sqrt(n), inputs, precondition=DT_PRE)


# ---------------------------------------------------------------- scalar results

def gen_bound(Rn: float, tau: float, B_h: float, n: int, delta: float, K: float = 1.0,
              inner_const: float = 1.0) -> float:
    """``K (log^3(n)/tau^2 Rn^2 + log(log(c B_h/tau)/delta)/n)``, up to the universal ``K``.

    ``inner_const`` is the factor ``c`` on ``B_h`` inside the nested log
    (1 by default; 4 is also common).
    """
    if not K > 0:
        raise InvalidDomain("K must be positive")
    if not 0 < delta < 1:
        raise InvalidDomain("delta must lie in (0, 1)")
    if not tau > 0:
        raise InvalidDomain("tau must be positive")
    if n < 2:
        raise InvalidDomain("n must be >= 2")
    if Rn < 0:
        raise InvalidDomain("Rn must be non-negative")
    ratio = inner_const * B_h / tau
    if not ratio > math.e:
        raise InvalidDomain(f"B_h/tau = {ratio:.6g} must exceed e for the nested log")
    return K * (math.log(n) ** 3 / tau ** 2 * Rn ** 2 + math.log(math.log(ratio) / delta) / n)


def lipschitz_bound_htilde(L_h: float, B_delta: float = 0.0, mode=Mode.CT) -> float:
    """``L_h + B_delta`` in CT, ``L_h + 2`` in DT."""
    if L_h < 0:
        raise ValueError("L_h must be non-negative")
    if Mode(mode) == Mode.DT:
        return L_h + 2.0
    if B_delta < 0:
        raise ValueError("B_delta must be non-negative")
    return L_h + B_delta


def nested_sum_count(t: int, j: int) -> int:
    """Count the terms of the nested index sum by enumeration.

    Outer index ``k1`` runs over ``1..t-1``, each middle ``k_i`` over
    ``1..k_{i-1}-1`` and the innermost over ``0..k_{j-1}-1``.
    """
    if not (isinstance(t, (int, np.integer)) and isinstance(j, (int, np.integer))):
        raise DomainError("t and j must be integers")
    if not 1 <= j <= t - 1:
        raise DomainError(f"need 1 <= j <= t-1, got t={t}, j={j}")

    def count(upper, depth):
        # indices at this depth run below ``upper``; the last one may reach 0
        if depth == j:
            return upper
        return sum(count(k, depth + 1) for k in range(1, upper))

    return count(t, 1)


def peak_t_exp(rho: float, mode=Mode.CT):
    """``(t*, max_t t e^{-rho t})`` in CT; in DT the continuous relaxation
    ``max_t t rho^{t-1} = 1/(e rho ln(1/rho))`` at ``t* = 1/ln(1/rho)``."""
    mode = Mode(mode)
    if mode == Mode.CT:
        if not rho > 0:
            raise DomainError("rho must be positive")
        return 1.0 / rho, 1.0 / (rho * math.e)
    if not 0 < rho < 1:
        raise DomainError("discrete-time peak needs 0 < rho < 1")
    lg = math.log(1.0 / rho)
    return 1.0 / lg, 1.0 / (math.e * rho * lg)


def parametric_rademacher_estimate(k: int, C: float, n: int) -> float:
    """Order-of-magnitude proxy ``C sqrt(k/n)``; not a certified bound."""
    if k < 1 or n < 1 or not C > 0:
        raise ValueError("need k >= 1, n >= 1 and C > 0")
    return C * math.sqrt(k / n)


# ---------------------------------------------------------------- contraction

@dataclass
class ContractionResult:
    passed: bool
    ediss: Optional[EdissParams] = None
    counterexample: Optional[np.ndarray] = None
    reason: str = ""
    points_checked: int = 0


LMI_TOL = 1e-9


def check_contraction(f: VectorField, M: Callable, lam: float, mu: float, L: float, grid,
                      fd_step: float = 1e-6) -> ContractionResult:
    """Grid check of ``mu I <= M(x) <= L I`` and ``J^T M + M J + Mdot <= -2 lam M``.

    ``Mdot`` is the derivative of ``M`` along the flow, by central differences
    (exactly zero for a constant metric).  Only the listed states are tested.
    """
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise ValueError("grid must be non-empty")
    if not 0 < mu <= L:
        raise ValueError("need 0 < mu <= L")
    for i, x in enumerate(grid):
        Mx = np.atleast_2d(np.asarray(M(x), dtype=float))
        Ms = 0.5 * (Mx + Mx.T)
        ev = np.linalg.eigvalsh(Ms)
        if ev[0] < mu - LMI_TOL or ev[-1] > L + LMI_TOL:
            return ContractionResult(False, counterexample=x.copy(), points_checked=i + 1,
                                     reason=f"metric eigenvalues [{ev[0]:.6g}, {ev[-1]:.6g}] outside [{mu}, {L}]")
        J = np.atleast_2d(f.jacobian(x))
        fx = np.atleast_1d(np.asarray(f(0.0, x), dtype=float))
        Mdot = (np.atleast_2d(M(x + fd_step * fx)) - np.atleast_2d(M(x - fd_step * fx))) / (2 * fd_step)
        S = J.T @ Ms + Ms @ J + 0.5 * (Mdot + Mdot.T) + 2.0 * lam * Ms
        top = np.linalg.eigvalsh(0.5 * (S + S.T))[-1]
        if top > LMI_TOL:
            return ContractionResult(False, counterexample=x.copy(), points_checked=i + 1,
                                     reason=f"contraction LMI max eigenvalue {top:.6g} > 0")
    k = math.sqrt(L / mu)
    return ContractionResult(True, EdissParams(k, lam, k), points_checked=len(grid))


# ---------------------------------------------------------------- random signals

class SmoothSignal:
    """Per-trial smooth scalar signals in ``[-1, 1]``: ``tanh`` of a random
    sum of sinusoids.  Row ``i`` of a batched call belongs to trial ``i``."""

    def __init__(self, rng: np.random.Generator, n: int, n_modes: int = 4, max_freq: float = 3.0):
        self.amp = rng.normal(size=(n, n_modes))
        self.freq = rng.uniform(0.0, max_freq, size=(n, n_modes))
        self.phase = rng.uniform(0.0, 2 * math.pi, size=(n, n_modes))

    def __call__(self, t):
        return np.tanh(np.sum(self.amp * np.sin(self.freq * t + self.phase), axis=-1))


def _unit_rows(rng, n, p):
    d = rng.normal(size=(n, p))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _tube_realization(spec: AdversarySpec, rng, n, p, worst_first=True):
    """Random causal tube members, one per trial; trial 0 saturates the budget
    with ``delta = eps_x x + eps_u sign`` when ``worst_first``."""
    a = SmoothSignal(rng, n)
    bsig = SmoothSignal(rng, n)
    direc = _unit_rows(rng, n, p)
    ex, eu = spec.eps_x, spec.eps_u
    if worst_first:
        direc[0] = 1.0 / math.sqrt(p)

    def coeffs(t):
        ca, cb = a(t), bsig(t)
        if worst_first:
            ca = ca.copy()
            cb = cb.copy()
            ca[0] = cb[0] = 1.0
        return ca, cb

    def parts(t, x):
        ca, cb = coeffs(t)
        return ex * ca[:, None] * x, eu * cb[:, None] * direc

    def fn(t, x):
        dx, du = parts(t, x)
        return dx + du

    return Disturbance(fn, parts if spec.kind == TubeKind.COMBINED else None, name="random_tube")


# ---------------------------------------------------------------- E-dISS check

@dataclass
class VerifyReport:
    passed: bool
    trials: int
    max_ratio: float
    failures: int
    details: dict = field(default_factory=dict)


RATIO_TOL = 1e-6


def verify_ediss(f, p: EdissParams, trials: int, seed: int = 0, signal_scale: float = 1.0,
                 horizon: float = 10.0, dt: float = 0.01, ic_box: float = 2.0,
                 dim: int = 1) -> VerifyReport:
    """Check the E-dISS inequality on random initial-condition pairs and signals.

    CT: ``f`` is a :class:`VectorField`; the right-hand side
    ``beta |x0 - y0| e^{-rho t} + gamma int e^{-rho (t-s)} |u_s| ds`` is
    integrated as ``z' = -rho z + gamma |u|`` alongside the two trajectories
    by the same RK4 steps.  DT: ``f`` is a map and the sum is accumulated
    exactly.  Passes iff ``max LHS/RHS <= 1 + 1e-6``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    pdim = f.dim if p.mode == Mode.CT else dim
    x0 = rng.uniform(-ic_box, ic_box, size=(trials, pdim))
    y0 = rng.uniform(-ic_box, ic_box, size=(trials, pdim))
    amp = signal_scale * rng.uniform(0.0, 1.0, size=trials)
    sig = [SmoothSignal(rng, trials) for _ in range(pdim)]
    b, r, g = p.beta, p.rho, p.gamma

    def u_of(t):
        return amp[:, None] * np.stack([s(t) for s in sig], axis=1)

    if p.mode == Mode.CT:
        def aug(t, s):
            x, y = s[:, :pdim], s[:, pdim:2 * pdim]
            u = u_of(t)
            return np.concatenate([f(t, x), f(t, y) + u,
                                   (-r * s[:, -1] + g * np.linalg.norm(u, axis=1))[:, None]], axis=1)
        z0 = b * np.linalg.norm(x0 - y0, axis=1)
        _, S = integrate(VectorField(2 * pdim + 1, aug, name="ediss_pair"),
                         np.concatenate([x0, y0, z0[:, None]], axis=1), horizon, dt)
        lhs = np.linalg.norm(S[:, :, :pdim] - S[:, :, pdim:2 * pdim], axis=2)
        rhs = S[:, :, -1]
    else:
        steps = int(round(horizon))
        x, y = x0.copy(), y0.copy()
        z = b * np.linalg.norm(x0 - y0, axis=1)
        lhs = [np.linalg.norm(x - y, axis=1)]
        rhs = [z.copy()]
        for k in range(steps):
            u = u_of(float(k))
            x, y = np.asarray(f(x)), np.asarray(f(y)) + u
            z = r * z + g * np.linalg.norm(u, axis=1)
            lhs.append(np.linalg.norm(x - y, axis=1))
            rhs.append(z.copy())
        lhs, rhs = np.stack(lhs, axis=1), np.stack(rhs, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rhs > 0, lhs / np.where(rhs > 0, rhs, 1.0), np.where(lhs > 0, np.inf, 0.0))
    per_trial = ratio.max(axis=1)
    fails = int(np.sum(per_trial > 1.0 + RATIO_TOL))
    return VerifyReport(fails == 0, trials, float(per_trial.max()), fails,
                        {"ediss": p.to_dict(), "seed": seed, "horizon": horizon, "dt": dt})


# ---------------------------------------------------------------- deviation check

DEV_RTOL = 1e-9
DEV_ATOL = 1e-12


def verify_deviation_bound(system, p: EdissParams, spec: AdversarySpec, trials: int, seed: int = 0,
                           horizon: Optional[float] = None, dt: float = 0.01, ic_box: float = 2.0,
                           dim: int = 1) -> VerifyReport:
    """Empirical deviation between nominal and perturbed trajectories against
    the closed-form bound, one random tube realization per trial.

    CT: ``system`` is a :class:`VectorField`.  DT: ``system`` maps a batch of
    states to the next one and ``horizon`` counts steps.  The nominal
    solution must have the origin as equilibrium for the Lipschitz clauses.
    Trial 0 is the budget-saturating ``delta = eps_x x (+ eps_u)`` adversary;
    for the DT Lipschitz tube the report also records its tightness
    ``max_t |bound_t - |phi~_t||``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    kind = TubeKind(spec.kind)
    rng = np.random.default_rng(seed)
    pdim = system.dim if p.mode == Mode.CT else dim
    xis = rng.uniform(-ic_box, ic_box, size=(trials, pdim))
    xis[0] = abs(xis[0])
    xi_norm = np.linalg.norm(xis, axis=1)
    details = {"kind": kind.value, "ediss": p.to_dict(), "spec": spec.to_dict(), "seed": seed}
    if kind == TubeKind.NONE:
        return VerifyReport(True, trials, 0.0, 0, details)
    d = _tube_realization(spec, rng, trials, pdim)

    if p.mode == Mode.CT:
        pre = deviation_bound_ct(kind, p, spec.eps_u, spec.eps_x, 1.0)
        if not pre.ok:
            raise ValueError(f"bound precondition violated: {pre.reason}")
        horizon = float(math.ceil(12.0 / p.rho)) if horizon is None else horizon
        _, nom = integrate(system, xis, horizon, dt)
        pert = np.stack([tr.states for tr in perturbed_rollout_many(system, d, spec, xis, horizon, dt)])
        dev_t = np.linalg.norm(nom - pert, axis=2)
        dev = dev_t.max(axis=1)
        bounds = np.array([deviation_bound_ct(kind, p, spec.eps_u, spec.eps_x, xn).value for xn in xi_norm]
                          if kind != TubeKind.NORM_BOUNDED else
                          [deviation_bound_ct(kind, p, spec.eps_u, spec.eps_x, 0.0).value] * trials)
        ok = dev <= bounds * (1.0 + DEV_RTOL) + DEV_ATOL
        ratio = dev / np.maximum(bounds, 1e-300)
    else:
        steps = int(30 if horizon is None else horizon)
        nom = np.stack([tr.states for tr in dt_perturbed_rollout_many(
            system, Disturbance(lambda t, x: np.zeros_like(x), name="zero"), AdversarySpec.none(), xis, steps)])
        pert = np.stack([tr.states for tr in dt_perturbed_rollout_many(system, d, spec, xis, steps)])
        dev_t = np.linalg.norm(nom - pert, axis=2)
        ts = np.arange(steps + 1)
        if kind == TubeKind.LIPSCHITZ:
            res = deviation_bound_dt(kind, p, spec.eps_u, spec.eps_x, 1.0, 0)
            if not res.ok:
                raise ValueError(f"bound precondition violated: {res.reason}")
            base = p.rho + p.gamma * spec.eps_x
            bound_t = p.beta * xi_norm[:, None] * base ** ts[None, :]
            ok = np.all(dev_t <= bound_t * (1.0 + DEV_RTOL) + DEV_ATOL, axis=1)
            ratio = np.max(dev_t / np.maximum(bound_t, 1e-300), axis=1)
            # worst case delta = eps x on x+ = rho x: |phi~_t| equals the bound
            details["tightness"] = float(np.max(np.abs(bound_t[0] - np.linalg.norm(pert[0], axis=1))))
        else:
            res = [deviation_bound_dt(kind, p, spec.eps_u, spec.eps_x, xn) for xn in xi_norm]
            if not res[0].ok:
                raise ValueError(f"bound precondition violated: {res[0].reason}")
            bounds = np.array([r_.value for r_ in res])
            dev = dev_t.max(axis=1)
            ok = dev <= bounds * (1.0 + DEV_RTOL) + DEV_ATOL
            ratio = dev / np.maximum(bounds, 1e-300)
    fails = int(np.sum(~ok))
    return VerifyReport(fails == 0, trials, float(np.max(ratio)), fails, details)


# ---------------------------------------------------------------- regularity constants

def _vg(V, X):
    return V.value_and_grad(X)


def _max_quotient(vals, X):
    """Largest ``|v_a - v_b| / |x_a - x_b|`` over distinct grid pairs."""
    n = len(X)
    if n < 2:
        return 0.0
    best = 0.0
    vals = np.asarray(vals, dtype=float)
    for start in range(0, n, 256):
        xa = X[start:start + 256, None, :]
        dist = np.linalg.norm(xa - X[None, :, :], axis=2)
        num = np.abs(vals[start:start + 256, None] - vals[None, :])
        mask = dist > 0
        if np.any(mask):
            best = max(best, float(np.max(num[mask] / dist[mask])))
    return best


def estimate_regularity_constants(V_samples: Sequence, f: Optional[VectorField], S_grid, X_grid,
                                  eta: float = 0.0) -> RegularityConstants:
    """Grid maxima over ``S`` for every certificate supplied.

    These are lower bounds on the true suprema.  ``B_htilde`` is taken as the
    largest ``|<grad V, f> + eta V|`` on the grid.
    """
    S = np.atleast_2d(np.asarray(S_grid, dtype=float))
    Xg = np.atleast_2d(np.asarray(X_grid, dtype=float))
    if S.size == 0 or Xg.size == 0 or not V_samples:
        raise ValueError("grids and certificate list must be non-empty")
    BV = BG = LV = LG = BH = 0.0
    F = None if f is None else np.asarray(f(0.0, S), dtype=float)
    for V in V_samples:
        vals, G = _vg(V, S)
        BV = max(BV, float(np.max(np.abs(vals))))
        BG = max(BG, float(np.max(np.linalg.norm(G, axis=1))))
        LV = max(LV, _max_quotient(vals, S))
        if F is not None:
            flow = np.einsum("ni,ni->n", G, F)
            LG = max(LG, _max_quotient(flow, S))
            BH = max(BH, float(np.max(np.abs(flow + eta * vals))))
    BX = float(np.max(np.linalg.norm(Xg, axis=1)))
    return RegularityConstants(L_V=LV, L_gradV=LG, B_V=BV, B_gradV=BG, B_X=BX, B_htilde=BH)


def sup_norm_V(V1, V2, grid) -> float:
    """Grid estimate of ``sup_x |(V1 - V2, grad V1 - grad V2)|`` (stacked Euclidean)."""
    X = np.atleast_2d(np.asarray(grid, dtype=float))
    v1, g1 = _vg(V1, X)
    v2, g2 = _vg(V2, X)
    return float(np.max(np.sqrt((v1 - v2) ** 2 + np.sum((g1 - g2) ** 2, axis=1))))


def binomial_check(t_max: int = 12):
    """``(t, j, count, C(t, j))`` for every admissible pair up to ``t_max``."""
    return [(t, j, nested_sum_count(t, j), math.comb(t, j))
            for t, j in itertools.chain.from_iterable(((t, j) for j in range(1, t)) for t in range(2, t_max + 1))]
