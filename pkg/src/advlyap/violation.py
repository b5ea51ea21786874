"""Violation functionals, feasibility and satisfaction-rate sweeps.

Continuous-time suprema are taken over the rollout sample grid.  Adversarial
values are computed over a finite set of tube realizations and are therefore
lower bounds on the true supremum over the tube.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .adversary import AdversarySpec, Disturbance, perturbed_rollout_many
from .certnet import decrease_terms
from .sim import Trajectory, sample_initial_conditions


@dataclass
class ViolationReport:
    value: float
    samples: np.ndarray
    worst_index: int
    worst_time: float
    eta: float
    nu: float = 0.0
    tau: float = 0.0
    lower_bound: bool = False


def sample_violations(traj: Trajectory, V, eta: float) -> np.ndarray:
    """Per-sample ``<grad V(x_t), xdot_t> + eta V(x_t)``."""
    return decrease_terms(V, traj.states, traj.derivs, eta)


def violation_report(traj: Trajectory, V, eta: float) -> ViolationReport:
    s = sample_violations(traj, V, eta)
    k = int(np.argmax(s))
    return ViolationReport(float(s[k]), s, k, float(traj.times[k]), eta)


def h_nominal(traj: Trajectory, V, eta: float) -> float:
    return float(np.max(sample_violations(traj, V, eta)))


def h_adversarial(xi, V, f, adversary_set, eta: float, nu: float, horizon: float, dt: float,
                  wrap_dims=None) -> float:
    """Max of the decrease scan over the supplied tube realizations, minus ``nu``.

    ``adversary_set`` is a sequence of ``(Disturbance, AdversarySpec)``.
    The result lower-bounds the supremum over the whole tube.
    """
    return float(h_adversarial_many([xi], V, f, adversary_set, eta, nu, horizon, dt, wrap_dims)[0])


def h_adversarial_many(xis, V, f, adversary_set, eta, nu, horizon, dt, wrap_dims=None):
    if not adversary_set:
        raise ValueError("adversary_set must be non-empty")
    best = None
    for d, spec in adversary_set:
        trajs = perturbed_rollout_many(f, d, spec, xis, horizon, dt, wrap_dims)
        vals = np.array([h_nominal(tr, V, eta) for tr in trajs])
        best = vals if best is None else np.maximum(best, vals)
    return best - nu


def feasibility_check(h_values, tau: float = 0.0):
    """``(feasible, violations)``: feasible iff every value is <= -tau."""
    h = np.asarray(h_values, dtype=float)
    violations = int(np.sum(h > -tau))
    return violations == 0, violations


def empirical_risk(h_values, tau: float) -> float:
    """Zero-one loss ``mean(1{h > -tau})``."""
    h = np.asarray(h_values, dtype=float)
    return float(np.mean(h > -tau)) if h.size else 0.0


def default_eta_grid():
    return np.linspace(0.0, 1.0, 51)


def satisfaction_rates(trajs: Sequence[Trajectory], V, eta_grid):
    """Rows ``(eta, trajectory_rate, point_rate)``.

    Since ``V >= 0`` each sample's value ``a + eta V`` is non-decreasing in
    ``eta``, so both rates are non-increasing along the grid.
    """
    eta_grid = list(eta_grid)
    if not eta_grid or not trajs:
        return []
    flow, val = [], []
    for tr in trajs:
        V_s, G = V.value_and_grad(tr.states)
        flow.append(np.einsum("ni,ni->n", G, tr.derivs))
        val.append(V_s)
    flow = np.stack(flow)
    val = np.stack(val)
    rows = []
    for eta in eta_grid:
        s = flow + eta * val
        rows.append((float(eta), float(np.mean(np.max(s, axis=1) <= 0.0)), float(np.mean(s <= 0.0))))
    return rows


def wilson_interval(k: int, n: int, z: float = 1.959963984540054):
    if n <= 0:
        raise ValueError("n must be positive")
    phat = k / n
    denom = 1.0 + z * z / n
    centre = (phat + z * z / (2 * n)) / denom
    half = z * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    lo = 0.0 if k == 0 else max(0.0, centre - half)
    hi = 1.0 if k == n else min(1.0, centre + half)
    return lo, hi


def estimate_generalization_error(V, f, adversary_set, n_test: int, eta: float, nu: float,
                                  seed: int, box_lo, box_hi, horizon: float = 8.0,
                                  dt: float = 0.05, wrap_dims=None):
    """Monte Carlo estimate of ``P[h_nu(xi, V) > 0]`` with a 95% Wilson interval."""
    if n_test < 1:
        raise ValueError("n_test must be >= 1")
    xis = sample_initial_conditions(n_test, box_lo, box_hi, seed)
    h = h_adversarial_many(xis, V, f, adversary_set, eta, nu, horizon, dt, wrap_dims)
    k = int(np.sum(h > 0.0))
    return k / n_test, wilson_interval(k, n_test)


def h_dt(traj: Trajectory, V, eta: float) -> float:
    """Discrete-time violation ``max_t V(x_{t+1}) - eta^2 V(x_t)``."""
    if len(traj.times) < 2:
        raise ValueError("need at least two samples")
    if not 0.0 < eta < 1.0:
        raise ValueError("discrete-time rate must satisfy 0 < eta < 1")
    v = np.atleast_1d(_values(V, traj.states))
    return float(np.max(v[1:] - eta * eta * v[:-1]))


def _values(V, X):
    if hasattr(V, "value"):
        return V.value(X)
    return np.asarray([V(x) for x in X])
