"""Adam with a cosine-decayed step size."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimizerState:
    k: int
    base_lr: float = 0.005
    total_steps: float = math.inf
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.k)
        if self.v is None:
            self.v = np.zeros(self.k)

    def lr(self, step=None):
        """Cosine schedule from ``base_lr`` at step 0 to 0 at ``total_steps``."""
        s = self.step if step is None else step
        if math.isinf(self.total_steps):
            return self.base_lr
        frac = min(s / self.total_steps, 1.0)
        return self.base_lr * 0.5 * (1.0 + math.cos(math.pi * frac))


def adam_step(state: OptimizerState, theta, grad):
    """One bias-corrected Adam update; returns ``(theta', state)``.

    The state is updated in place and also returned.
    """
    grad = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite gradient")
    lr = state.lr()
    state.step += 1
    t = state.step
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    mhat = state.m / (1.0 - state.beta1 ** t)
    vhat = state.v / (1.0 - state.beta2 ** t)
    return theta - lr * mhat / (np.sqrt(vhat) + state.eps), state
