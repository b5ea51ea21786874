"""Perturbation tubes, disturbance realizations and perturbed rollouts.

A :class:`Disturbance` is a causal map ``(t, x) -> delta`` evaluated on
stacks of states.  Every evaluation inside a perturbed rollout is audited
against the :class:`AdversarySpec` budget.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from .errors import BudgetViolation, NonFiniteState
from .sim import Trajectory, VectorField, _check_grid, _require_finite, _wrap, integrate

GRAD_FLOOR = 1e-12
BUDGET_SLACK = 1e-9


class TubeKind(str, enum.Enum):
    NONE = "none"
    NORM_BOUNDED = "norm_bounded"
    LIPSCHITZ = "lipschitz"
    COMBINED = "combined"


class Strategy(str, enum.Enum):
    GREEDY = "greedy"
    RADIAL = "radial"
    FIXED_SIGNAL = "fixed_signal"
    CUSTOM = "custom"


@dataclass(frozen=True)
class AdversarySpec:
    """Tube kind plus budgets.

    ``eps_u`` is the instantaneous norm budget, ``eps_x`` the linear-growth
    rate.  Budgets a kind does not use are forced to zero.
    """

    kind: TubeKind = TubeKind.NONE
    eps_u: float = 0.0
    eps_x: float = 0.0
    strategy: Strategy = Strategy.GREEDY

    def __post_init__(self):
        object.__setattr__(self, "kind", TubeKind(self.kind))
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        if self.eps_u < 0 or self.eps_x < 0:
            raise ValueError("budgets must be non-negative")
        if self.kind in (TubeKind.NONE, TubeKind.LIPSCHITZ):
            object.__setattr__(self, "eps_u", 0.0)
        if self.kind in (TubeKind.NONE, TubeKind.NORM_BOUNDED):
            object.__setattr__(self, "eps_x", 0.0)

    @classmethod
    def none(cls):
        return cls(TubeKind.NONE)

    @classmethod
    def norm_bounded(cls, eps, strategy=Strategy.GREEDY):
        return cls(TubeKind.NORM_BOUNDED, eps_u=eps, strategy=strategy)

    @classmethod
    def lipschitz(cls, eps, strategy=Strategy.GREEDY):
        return cls(TubeKind.LIPSCHITZ, eps_x=eps, strategy=strategy)

    @classmethod
    def combined(cls, eps_x, eps_u, strategy=Strategy.GREEDY):
        return cls(TubeKind.COMBINED, eps_u=eps_u, eps_x=eps_x, strategy=strategy)

    def to_dict(self):
        return {"kind": self.kind.value, "eps_u": self.eps_u, "eps_x": self.eps_x,
                "strategy": self.strategy.value}


class Disturbance:
    """Causal disturbance ``delta(t, x)``.

    ``parts_fn`` returns the ``(delta_x, delta_u)`` decomposition for the
    combined tube; when absent the whole disturbance is attributed to the
    part matching the adversary kind.
    """

    def __init__(self, fn: Callable, parts_fn: Optional[Callable] = None, name: str = "custom"):
        self.fn = fn
        self.parts_fn = parts_fn
        self.name = name

    def __call__(self, t, x):
        return self.fn(t, np.asarray(x, dtype=float))

    def parts(self, t, x):
        if self.parts_fn is None:
            return None
        return self.parts_fn(t, np.asarray(x, dtype=float))

    def __repr__(self):
        return f"Disturbance({self.name})"


def zero_disturbance() -> Disturbance:
    return Disturbance(lambda t, x: np.zeros_like(x), name="zero")


def _unit_grad(V, x):
    G = np.atleast_2d(V.grad(x))
    norm = np.linalg.norm(G, axis=-1, keepdims=True)
    safe = np.where(norm < GRAD_FLOOR, 1.0, norm)
    unit = np.where(norm < GRAD_FLOOR, 0.0, G / safe)
    return unit.reshape(np.shape(x))


def greedy_disturbance(V, spec: AdversarySpec) -> Disturbance:
    """Budget-saturating disturbance along ``grad V``.

    Lipschitz: ``eps_x |x| grad V / |grad V|``; norm-bounded:
    ``eps_u grad V / |grad V|``; combined: the sum of both, with the
    decomposition exposed through ``parts``.  Zero where ``|grad V| < 1e-12``.
    """
    kind = spec.kind
    if kind == TubeKind.NONE:
        return zero_disturbance()
    ex, eu = spec.eps_x, spec.eps_u

    def parts(t, x):
        u = _unit_grad(V, x)
        nx = np.linalg.norm(x, axis=-1, keepdims=True)
        return ex * nx * u, eu * u

    if kind == TubeKind.LIPSCHITZ:
        return Disturbance(lambda t, x: parts(t, x)[0], name=f"greedy_lipschitz({ex})")
    if kind == TubeKind.NORM_BOUNDED:
        return Disturbance(lambda t, x: parts(t, x)[1], name=f"greedy_norm({eu})")

    def fn(t, x):
        dx, du = parts(t, x)
        return dx + du

    return Disturbance(fn, parts, name=f"greedy_combined({ex},{eu})")


def radial_disturbance(eps_x: float) -> Disturbance:
    """``delta(x) = eps_x x``: pushes straight away from the origin."""
    if eps_x < 0:
        raise ValueError("eps_x must be non-negative")
    return Disturbance(lambda t, x: eps_x * x, name=f"radial({eps_x})")


def fixed_signal(signal) -> Disturbance:
    """Open-loop disturbance: a constant vector or a function of time only."""
    if callable(signal):
        def fn(t, x):
            return np.broadcast_to(np.asarray(signal(t), dtype=float), np.shape(x)).copy()
    else:
        val = np.asarray(signal, dtype=float)

        def fn(t, x):
            return np.broadcast_to(val, np.shape(x)).copy()
    return Disturbance(fn, name="fixed_signal")


class BudgetCheck(NamedTuple):
    passed: bool
    slack: float  # smallest (budget - |delta|); negative means outside the tube


def _norms(a):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    with np.errstate(over="ignore"):
        n = np.sqrt(np.einsum("ni,ni->n", a, a))
    if np.all(np.isfinite(n)):
        return n
    # huge but finite entries overflow when squared; rescale those rows
    m = np.max(np.abs(a), axis=-1)
    safe = np.where(m > 0, m, 1.0)
    return m * np.linalg.norm(a / safe[:, None], axis=-1)


def budget_check(delta, x, spec: AdversarySpec, parts=None) -> BudgetCheck:
    """Check tube membership of ``delta`` at state(s) ``x``; never raises."""
    nd = _norms(delta)
    nx = _norms(x)
    kind = spec.kind
    if kind == TubeKind.NONE:
        budget = np.zeros_like(nd)
        ok = nd == 0.0
        return BudgetCheck(bool(np.all(ok)), float(np.min(budget - nd)))
    if kind == TubeKind.NORM_BOUNDED:
        budget = np.full_like(nd, spec.eps_u)
        used = nd
    elif kind == TubeKind.LIPSCHITZ:
        budget = spec.eps_x * nx
        used = nd
    else:
        if parts is not None:
            dx, du = parts
            ndx, ndu = _norms(dx), _norms(du)
            ok_x = ndx <= spec.eps_x * nx * (1.0 + BUDGET_SLACK)
            ok_u = ndu <= spec.eps_u * (1.0 + BUDGET_SLACK)
            sum_ok = np.allclose(np.atleast_2d(dx) + np.atleast_2d(du), np.atleast_2d(delta),
                                 rtol=BUDGET_SLACK, atol=0.0)
            slack = min(float(np.min(spec.eps_x * nx - ndx)), float(np.min(spec.eps_u - ndu)))
            return BudgetCheck(bool(np.all(ok_x) and np.all(ok_u) and sum_ok), slack)
        # without a declared split, a valid one exists iff |delta| <= eps_x|x| + eps_u
        budget = spec.eps_x * nx + spec.eps_u
        used = nd
    ok = used <= budget * (1.0 + BUDGET_SLACK)
    return BudgetCheck(bool(np.all(ok)), float(np.min(budget - used)))


def _audited(d: Disturbance, spec: AdversarySpec):
    def fn(t, x):
        with np.errstate(over="ignore", invalid="ignore"):
            delta = d(t, x)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(delta))):
            raise NonFiniteState(f"{d.name} produced a non-finite disturbance at t={t:.6g}")
        res = budget_check(delta, x, spec, d.parts(t, x) if spec.kind == TubeKind.COMBINED else None)
        if not res.passed:
            raise BudgetViolation(f"{d.name} left the {spec.kind.value} tube at t={t:.6g} "
                                  f"(slack {res.slack:.3g})", res.slack)
        return delta
    return fn


def perturbed_rollout_many(f: VectorField, d: Disturbance, spec: AdversarySpec, xis,
                           horizon: float, dt: float, wrap_dims=None, check_budget: bool = True):
    """RK4 rollouts of ``xdot = f(x) + delta(t, x)`` from each initial condition."""
    xis = _wrap(np.array(np.atleast_2d(xis), dtype=float), wrap_dims)
    if spec.kind == TubeKind.NONE and d.name == "zero":
        dist = None
        field = f
    else:
        dist = _audited(d, spec) if check_budget else d

        def fn(t, x):
            return f(t, x) + dist(t, x)
        field = VectorField(f.dim, fn, name=f"{f.name}+{d.name}")
    times, states = integrate(field, xis, horizon, dt, wrap_dims)
    trajs = []
    n_ic, n_t, p = states.shape
    # per-sample disturbance, evaluated at the stored (wrapped) states
    nominal = np.empty_like(states)
    deltas = np.zeros_like(states)
    for k in range(n_t):
        nominal[:, k] = f(times[k], states[:, k])
        if dist is not None:
            deltas[:, k] = dist(times[k], states[:, k])
    for i in range(n_ic):
        trajs.append(Trajectory(times, states[i], nominal[i] + deltas[i], states[i, 0].copy(),
                                deltas[i].copy()))
    return trajs


def perturbed_rollout(f: VectorField, d: Disturbance, spec: AdversarySpec, xi, horizon: float,
                      dt: float, wrap_dims=None) -> Trajectory:
    return perturbed_rollout_many(f, d, spec, [xi], horizon, dt, wrap_dims)[0]


def dt_perturbed_rollout_many(f_map, d: Disturbance, spec: AdversarySpec, xis, steps: int,
                              check_budget: bool = True):
    """Iterate ``x+ = f_map(x) + delta(t, x)``; ``derivs`` holds increments."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x = np.array(np.atleast_2d(xis), dtype=float)
    dist = _audited(d, spec) if check_budget else d
    n_ic, p = x.shape
    states = np.empty((n_ic, steps + 1, p))
    deltas = np.zeros((n_ic, steps + 1, p))
    states[:, 0] = x
    for k in range(steps):
        delta = dist(float(k), x)
        deltas[:, k] = delta
        x = np.asarray(f_map(x)) + delta
        _require_finite(x, "state", k)
        states[:, k + 1] = x
    times = np.arange(steps + 1, dtype=float)
    incr = np.zeros_like(states)
    incr[:, :-1] = states[:, 1:] - states[:, :-1]
    return [Trajectory(times, states[i], incr[i], states[i, 0].copy(), deltas[i], discrete=True)
            for i in range(n_ic)]


def dt_perturbed_rollout(f_map, d: Disturbance, spec: AdversarySpec, xi, steps: int) -> Trajectory:
    return dt_perturbed_rollout_many(f_map, d, spec, [xi], steps)[0]


def dt_rollout(f_map, xi, steps: int) -> Trajectory:
    return dt_perturbed_rollout(f_map, zero_disturbance(), AdversarySpec.none(), xi, steps)
