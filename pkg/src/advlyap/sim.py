"""Dynamical systems and fixed-step trajectory generation.

Vector fields are vectorized: ``f(t, x)`` accepts a single state of shape
``(p,)`` or a stack of states of shape ``(n, p)`` and returns an array of
the same shape.  That lets one RK4 loop advance every initial condition of
a dataset at once.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InvalidBox, NonFiniteState

FD_STEP = 1e-6


@dataclass(frozen=True)
class VectorField:
    """Autonomous (or time-varying) vector field ``xdot = f(t, x)``."""

    dim: int
    fn: Callable[[float, np.ndarray], np.ndarray]
    jac: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "field"

    def __call__(self, t, x):
        return self.fn(t, np.asarray(x, dtype=float))

    def jacobian(self, x, t=0.0):
        """Analytic Jacobian if attached, else a central finite difference."""
        x = np.asarray(x, dtype=float)
        if self.jac is not None:
            return np.asarray(self.jac(x), dtype=float)
        return fd_jacobian(lambda z: self.fn(t, z), x, FD_STEP)


def fd_jacobian(fn, x, step=FD_STEP):
    x = np.asarray(x, dtype=float)
    p = x.shape[0]
    out = np.empty((np.asarray(fn(x)).shape[0], p))
    for k in range(p):
        e = np.zeros(p)
        e[k] = step
        out[:, k] = (np.asarray(fn(x + e)) - np.asarray(fn(x - e))) / (2.0 * step)
    return out


@dataclass(frozen=True)
class PendulumParams:
    m: float = 1.0
    l: float = 1.0
    b: float = 2.0
    g: float = 9.81

    def __post_init__(self):
        if not (self.m > 0 and self.l > 0 and self.g > 0 and self.b >= 0):
            raise ValueError(f"invalid pendulum parameters: {self}")


def pendulum_field(params: PendulumParams = PendulumParams()) -> VectorField:
    """Damped pendulum ``m l^2 th'' + b th' + m g l sin(th) = 0`` in state ``(th, th')``."""
    m, l, b, g = params.m, params.l, params.b, params.g
    inertia = m * l * l
    grav = m * g * l

    def fn(t, x):
        th = x[..., 0]
        om = x[..., 1]
        out = np.empty_like(x)
        out[..., 0] = om
        out[..., 1] = -(b * om + grav * np.sin(th)) / inertia
        return out

    def jac(x):
        return np.array([[0.0, 1.0], [-grav * math.cos(x[0]) / inertia, -b / inertia]])

    return VectorField(2, fn, jac, name="pendulum")


def linearized_pendulum_field(params: PendulumParams = PendulumParams()) -> VectorField:
    """Linearization of the damped pendulum at the origin."""
    J = np.array([[0.0, 1.0], [-params.g / params.l, -params.b / (params.m * params.l**2)]])

    def fn(t, x):
        out = np.empty_like(x)
        out[..., 0] = J[0, 0] * x[..., 0] + J[0, 1] * x[..., 1]
        out[..., 1] = J[1, 0] * x[..., 0] + J[1, 1] * x[..., 1]
        return out

    return VectorField(2, fn, lambda x: J.copy(), name="linearized_pendulum")


def linear_field(A) -> VectorField:
    A = np.atleast_2d(np.asarray(A, dtype=float))

    def fn(t, x):
        return x @ A.T

    return VectorField(A.shape[0], fn, lambda x: A.copy(), name="linear")


def scalar_decay_field(rho: float) -> VectorField:
    """One-dimensional ``xdot = -rho x``."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    return VectorField(1, lambda t, x: -rho * x, lambda x: np.array([[-rho]]), name=f"decay({rho})")


def wrap_angle(a):
    """Map angles to the half-open interval (-pi, pi]."""
    return np.pi - np.mod(np.pi - a, 2.0 * np.pi)


@dataclass
class Trajectory:
    """Samples of one rollout on a uniform time grid.

    For discrete-time rollouts ``derivs[k]`` holds the increment
    ``x[k+1] - x[k]`` (zero on the last row) and ``discrete`` is set.
    """

    times: np.ndarray
    states: np.ndarray
    derivs: np.ndarray
    initial_condition: np.ndarray
    disturbances: Optional[np.ndarray] = None
    discrete: bool = False

    def __post_init__(self):
        n = len(self.times)
        if self.states.shape[0] != n or self.derivs.shape[0] != n:
            raise ValueError("states/derivs/times length mismatch")

    @property
    def dt(self):
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    @property
    def dim(self):
        return self.states.shape[1]

    def head(self, n: int) -> "Trajectory":
        """First ``n`` samples."""
        d = None if self.disturbances is None else self.disturbances[:n]
        return Trajectory(self.times[:n], self.states[:n], self.derivs[:n],
                          self.initial_condition, d, self.discrete)


def _check_grid(horizon, dt):
    if not dt > 0:
        raise ValueError("dt must be positive")
    n = int(round(horizon / dt))
    if n < 1 or abs(n * dt - horizon) > 1e-9 * max(1.0, abs(horizon)):
        raise ValueError(f"horizon {horizon} is not a positive integer multiple of dt {dt}")
    return n


def _require_finite(arr, what, step=None):
    if not np.all(np.isfinite(arr)):
        where = "" if step is None else f" at step {step}"
        raise NonFiniteState(f"non-finite {what}{where}", step=step)


def rk4_step(f, t, x, dt):
    """Classical fourth-order Runge-Kutta update of ``x`` over ``[t, t+dt]``."""
    x = np.asarray(x, dtype=float)
    k1 = f(t, x)
    _require_finite(k1, "RK4 stage 1")
    k2 = f(t + 0.5 * dt, x + 0.5 * dt * k1)
    _require_finite(k2, "RK4 stage 2")
    k3 = f(t + 0.5 * dt, x + 0.5 * dt * k2)
    _require_finite(k3, "RK4 stage 3")
    k4 = f(t + dt, x + dt * k3)
    _require_finite(k4, "RK4 stage 4")
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _wrap(x, wrap_dims):
    if wrap_dims:
        for d in wrap_dims:
            x[..., d] = wrap_angle(x[..., d])
    return x


def integrate(f, xi, horizon, dt, wrap_dims=None, step_hook=None):
    """RK4-integrate a stack of initial conditions.

    Returns ``(times, states)`` with ``states`` of shape ``(n_ic, N+1, p)``.
    ``step_hook(k, t, x)`` is called on every accepted sample (used by the
    adversary module to audit realized disturbances).
    """
    n = _check_grid(horizon, dt)
    x = np.array(np.atleast_2d(xi), dtype=float)
    times = dt * np.arange(n + 1)
    states = np.empty((x.shape[0], n + 1, x.shape[1]))
    states[:, 0] = x
    for k in range(n):
        try:
            x = rk4_step(f, times[k], x, dt)
        except NonFiniteState as exc:
            raise NonFiniteState(f"{exc} (rollout step {k})", step=k) from None
        _require_finite(x, "state", k)
        x = _wrap(x, wrap_dims)
        states[:, k + 1] = x
    return times, states


def rollout(f: VectorField, xi, horizon: float, dt: float, wrap_dims=None) -> Trajectory:
    """Nominal trajectory from one initial condition."""
    return rollout_many(f, [xi], horizon, dt, wrap_dims)[0]


def rollout_many(f: VectorField, xis, horizon, dt, wrap_dims=None):
    xis = np.array(np.atleast_2d(xis), dtype=float)
    xis = _wrap(xis.copy(), wrap_dims)
    times, states = integrate(f, xis, horizon, dt, wrap_dims)
    trajs = []
    for i in range(states.shape[0]):
        s = states[i]
        d = np.asarray(f(times[:, None], s))
        trajs.append(Trajectory(times, s, d, s[0].copy()))
    return trajs


def sample_initial_conditions(n: int, box_lo, box_hi, seed: int):
    """``n`` i.i.d. uniform draws from the box ``[lo, hi]``."""
    lo = np.asarray(box_lo, dtype=float)
    hi = np.asarray(box_hi, dtype=float)
    if lo.shape != hi.shape or not np.all(lo < hi):
        raise InvalidBox(f"need box_lo < box_hi componentwise, got {lo} and {hi}")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    return lo + (hi - lo) * rng.random((n, lo.shape[0]))


def write_trajectory_csv(path, traj: Trajectory):
    """Write ``t,x0..,dx0..[,d0..]`` rows with 17 significant digits."""
    p = traj.dim
    header = ["t"] + [f"x{i}" for i in range(p)] + [f"dx{i}" for i in range(p)]
    if traj.disturbances is not None:
        header += [f"d{i}" for i in range(p)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(len(traj.times)):
            row = [traj.times[k], *traj.states[k], *traj.derivs[k]]
            if traj.disturbances is not None:
                row += list(traj.disturbances[k])
            w.writerow([f"{v:.17g}" for v in row])


def read_trajectory_csv(path) -> Trajectory:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array([[float(v) for v in r] for r in rows[1:]])
    p = sum(1 for h in header if h.startswith("x"))
    dist = body[:, 1 + 2 * p:1 + 3 * p] if any(h.startswith("d") and not h.startswith("dx") for h in header) else None
    states = body[:, 1:1 + p]
    return Trajectory(body[:, 0], states, body[:, 1 + p:1 + 2 * p], states[0].copy(), dist)
