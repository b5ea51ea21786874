"""Kernel backend selection.

``cython`` is the compiled extension, ``numpy`` the pure-Python fallback.
The compiled kernels win on small batches (rollouts, pointwise adversary
evaluation) where numpy call overhead dominates; numpy's batched BLAS wins
on training minibatches.  ``auto`` (the default when the extension is
built) dispatches on batch size.  ``ADVLYAP_BACKEND`` forces one of the
three names.
"""
import os
import types

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

# rows at which the numpy path overtakes the compiled one (benchmarks/bench_kernels.py)
AUTO_THRESHOLD = 64


def _auto_module(compiled, threshold=AUTO_THRESHOLD):
    def value_and_grad(theta, p, h, X):
        mod = compiled if X.shape[0] < threshold else _fallback
        return mod.value_and_grad(theta, p, h, X)

    def loss_and_grad(theta, p, h, X, U, eta):
        mod = compiled if X.shape[0] < threshold else _fallback
        return mod.loss_and_grad(theta, p, h, X, U, eta)

    return types.SimpleNamespace(value_and_grad=value_and_grad, loss_and_grad=loss_and_grad)


_BACKENDS = {"numpy": _fallback}
if _compiled is not None:
    _BACKENDS["cython"] = _compiled
    _BACKENDS["auto"] = _auto_module(_compiled)


def available():
    return sorted(_BACKENDS)


def default_name():
    return os.environ.get("ADVLYAP_BACKEND") or ("auto" if _compiled is not None else "numpy")


def get(name=None):
    name = name or default_name()
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} unavailable; have {available()}") from None


BACKEND = default_name()
kernels = get(BACKEND)
