"""Neural certificate ``V(x) = x^T (L(x)^T L(x) + I) x``."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _backend
from ..errors import CheckpointError

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MlpArchitecture:
    """Two tanh hidden layers of width ``h``; output reshaped to ``(2p, p)``."""

    p: int
    h: int = 20

    def __post_init__(self):
        if self.p < 1 or self.h < 1:
            raise ValueError("p and h must be positive")

    @property
    def output_dim(self):
        return self.p * 2 * self.p

    @property
    def shapes(self):
        p, h, q = self.p, self.h, self.output_dim
        return [("W1", (h, p)), ("b1", (h,)), ("W2", (h, h)), ("b2", (h,)),
                ("W3", (q, h)), ("b3", (q,))]

    @property
    def n_params(self):
        return sum(int(np.prod(s)) for _, s in self.shapes)


class CertificateParams:
    """Flat parameter vector plus architecture.

    ``layers()`` gives structured views into the same buffer, so the
    structured/flat round trip is exact by construction.
    """

    def __init__(self, arch: MlpArchitecture, theta, backend=None):
        theta = np.array(theta, dtype=float).ravel()
        if theta.shape[0] != arch.n_params:
            raise ValueError(f"expected {arch.n_params} parameters, got {theta.shape[0]}")
        if not np.all(np.isfinite(theta)):
            raise ValueError("parameters must be finite")
        self.arch = arch
        self.theta = theta
        self._kern = _backend.get(backend) if backend else _backend.kernels

    @classmethod
    def from_layers(cls, arch: MlpArchitecture, layers: dict, backend=None):
        flat = np.concatenate([np.asarray(layers[name], dtype=float).reshape(shape).ravel()
                               for name, shape in arch.shapes])
        return cls(arch, flat, backend)

    def layers(self):
        out, i = {}, 0
        for name, shape in self.arch.shapes:
            size = int(np.prod(shape))
            out[name] = self.theta[i:i + size].reshape(shape)
            i += size
        return out

    def with_theta(self, theta):
        new = CertificateParams.__new__(CertificateParams)
        new.arch, new.theta, new._kern = self.arch, np.array(theta, dtype=float), self._kern
        return new

    def copy(self):
        return self.with_theta(self.theta.copy())

    def using(self, backend):
        return CertificateParams(self.arch, self.theta.copy(), backend)

    @property
    def p(self):
        return self.arch.p

    @property
    def h(self):
        return self.arch.h

    # batched evaluation; single states are promoted and squeezed back
    def value_and_grad(self, x):
        X = np.asarray(x, dtype=float)
        single = X.ndim == 1
        X = np.ascontiguousarray(np.atleast_2d(X))
        V, G = self._kern.value_and_grad(self.theta, self.p, self.h, X)
        return (V[0], G[0]) if single else (V, G)

    def value(self, x):
        return self.value_and_grad(x)[0]

    def grad(self, x):
        return self.value_and_grad(x)[1]

    def L_matrix(self, x):
        lay = self.layers()
        x = np.asarray(x, dtype=float)
        a1 = np.tanh(lay["W1"] @ x + lay["b1"])
        a2 = np.tanh(lay["W2"] @ a1 + lay["b2"])
        return (lay["W3"] @ a2 + lay["b3"]).reshape(2 * self.p, self.p)

    def __eq__(self, other):
        return (isinstance(other, CertificateParams) and self.arch == other.arch
                and np.array_equal(self.theta, other.theta))

    def __repr__(self):
        return f"CertificateParams(p={self.p}, h={self.h}, k={self.theta.size})"


def init_params(arch: MlpArchitecture, seed: int, backend=None) -> CertificateParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    layers = {}
    for name, shape in arch.shapes:
        if name.startswith("W"):
            fan_out, fan_in = shape
            lim = math.sqrt(6.0 / (fan_in + fan_out))
            layers[name] = rng.uniform(-lim, lim, size=shape)
        else:
            layers[name] = np.zeros(shape)
    return CertificateParams.from_layers(arch, layers, backend)


def quadratic_params(arch: MlpArchitecture, seed: int = 0, backend=None) -> CertificateParams:
    """Parameters with ``W3 = 0, b3 = 0`` so that ``L == 0`` and ``V = |x|^2``."""
    params = init_params(arch, seed, backend)
    lay = params.layers()
    lay["W3"][:] = 0.0
    lay["b3"][:] = 0.0
    return params


def eval_V(params: CertificateParams, x):
    return params.value(x)


def grad_x_V(params: CertificateParams, x):
    return params.grad(x)


def decrease_terms(params, X, U, eta):
    """Per-sample ``<grad V(x), xdot> + eta V(x)``."""
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
    U = np.ascontiguousarray(np.atleast_2d(np.asarray(U, dtype=float)))
    V, G = params.value_and_grad(X)
    return np.einsum("ni,ni->n", G, U) + eta * V


class QuadraticCertificate:
    """``V(x) = x^T P x`` with the same evaluation surface as :class:`CertificateParams`."""

    def __init__(self, P):
        P = np.atleast_2d(np.asarray(P, dtype=float))
        self.P = 0.5 * (P + P.T)
        self.p = self.P.shape[0]

    def value_and_grad(self, x):
        X = np.asarray(x, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        PX = X @ self.P
        V = np.einsum("ni,ni->n", X, PX)
        G = 2.0 * PX
        return (V[0], G[0]) if single else (V, G)

    def value(self, x):
        return self.value_and_grad(x)[0]

    def grad(self, x):
        return self.value_and_grad(x)[1]


def grad_theta(params: CertificateParams, X, U, eta: float, lam: float):
    """Surrogate loss ``sum relu(<grad V, xdot> + eta V) + lam |theta|^2`` and its gradient."""
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
    U = np.ascontiguousarray(np.atleast_2d(np.asarray(U, dtype=float)))
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    hinge, g = params._kern.loss_and_grad(params.theta, params.p, params.h, X, U, float(eta))
    th = params.theta
    return hinge + lam * float(th @ th), g + 2.0 * lam * th


def save_checkpoint(path, params: CertificateParams):
    with open(path, "w") as fh:
        fh.write(dumps_checkpoint(params))


def dumps_checkpoint(params: CertificateParams) -> str:
    # 17 significant digits round-trips float64 exactly
    theta = ",".join(f"{v:.17g}" for v in params.theta)
    return f'{{"version":{CHECKPOINT_VERSION},"arch":{{"p":{params.p},"h":{params.h}}},"theta":[{theta}]}}\n'


def load_checkpoint(path, expect_arch: Optional[MlpArchitecture] = None, backend=None) -> CertificateParams:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"{path}: not valid JSON ({exc})") from None
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    try:
        arch = MlpArchitecture(int(doc["arch"]["p"]), int(doc["arch"]["h"]))
        theta = doc["theta"]
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from None
    if expect_arch is not None and arch != expect_arch:
        raise CheckpointError(f"{path}: architecture {arch} does not match {expect_arch}")
    if len(theta) != arch.n_params:
        raise CheckpointError(f"{path}: expected {arch.n_params} parameters, found {len(theta)}")
    return CertificateParams(arch, theta, backend)
