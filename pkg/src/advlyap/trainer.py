"""Nominal and alternating adversarial certificate training."""
from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .adversary import AdversarySpec, TubeKind, greedy_disturbance, perturbed_rollout_many
from .certnet import CertificateParams, OptimizerState, adam_step, grad_theta
from .errors import NonFiniteLoss, NonFiniteState, ShapeMismatch
from .sim import Trajectory, VectorField, rollout_many

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    eta: float = 0.4
    lam: float = 0.1
    epochs: int = 500
    batch_size: int = 1000
    base_lr: float = 0.005
    alternations: int = 5
    inner_epochs: int = 100
    adversary: AdversarySpec = field(default_factory=lambda: AdversarySpec.lipschitz(0.1))
    horizon: float = 8.0
    dt: float = 0.05
    n_train: int = 1000
    ic_lo: Tuple[float, ...] = (-2.0, -2.0)
    ic_hi: Tuple[float, ...] = (2.0, 2.0)
    seed: int = 0
    # "batch": each minibatch minimizes its own hinge sum + lam |theta|^2;
    # "dataset": unbiased minibatch estimate of the full-dataset objective
    loss_scaling: str = "batch"

    def __post_init__(self):
        if self.eta < 0 or self.lam < 0:
            raise ValueError("eta and lambda must be non-negative")
        if self.alternations < 1:
            raise ValueError("alternations must be >= 1")
        if self.epochs < 0 or self.inner_epochs < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.loss_scaling not in ("batch", "dataset"):
            raise ValueError("loss_scaling must be 'batch' or 'dataset'")

    @property
    def retained_steps(self):
        """Samples kept per trajectory: the grid points t = 0, dt, ..., T - dt."""
        return int(round(self.horizon / self.dt))

    def to_dict(self):
        d = asdict(self)
        d["adversary"] = self.adversary.to_dict()
        d["ic_lo"], d["ic_hi"] = list(self.ic_lo), list(self.ic_hi)
        return d


@dataclass
class Dataset:
    X: np.ndarray
    U: np.ndarray

    def __len__(self):
        return self.X.shape[0]

    def content_hash(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.X).tobytes())
        h.update(np.ascontiguousarray(self.U).tobytes())
        return h.hexdigest()


@dataclass
class TrainResult:
    params: CertificateParams
    history: List[Tuple[int, float, float]] = field(default_factory=list)  # (epoch, loss, lr)
    phase_losses: List[Tuple[float, float]] = field(default_factory=list)  # (start, end) per phase
    inner_minimizations: int = 0
    rerollouts: int = 0
    datasets: List[Dataset] = field(default_factory=list)


def build_dataset(trajs: Sequence[Trajectory], retain: Optional[int] = None) -> Dataset:
    """Concatenate ``(state, derivative)`` pairs in input order."""
    if len(trajs) == 0:
        return Dataset(np.empty((0, 0)), np.empty((0, 0)))
    shape = trajs[0].states.shape
    for tr in trajs:
        if tr.states.shape != shape:
            raise ShapeMismatch(f"trajectory grid {tr.states.shape} differs from {shape}")
    n = shape[0] if retain is None else retain
    X = np.concatenate([tr.states[:n] for tr in trajs])
    U = np.concatenate([tr.derivs[:n] for tr in trajs])
    return Dataset(np.ascontiguousarray(X), np.ascontiguousarray(U))


def dataset_loss(params: CertificateParams, data: Dataset, eta: float, lam: float,
                 chunk: int = 4096) -> float:
    total = 0.0
    for i in range(0, len(data), chunk):
        loss, _ = grad_theta(params, data.X[i:i + chunk], data.U[i:i + chunk], eta, 0.0)
        total += loss
    return total + lam * float(params.theta @ params.theta)


class _Minimizer:
    """Adam over shuffled minibatches; one run RNG and one cosine schedule.

    Shared across the phases of the alternating scheme so that the moments,
    the schedule and the shuffling stream continue where they stopped.
    """

    def __init__(self, params, config: TrainConfig, total_steps, rng, epoch_hook=None):
        self.params = params
        self.config = config
        self.state = OptimizerState(params.theta.size, base_lr=config.base_lr,
                                    total_steps=max(total_steps, 1))
        self.rng = rng
        self.epoch = 0
        self.history = []
        self.epoch_hook = epoch_hook

    def run(self, data: Dataset, epochs: int):
        cfg = self.config
        n = len(data)
        if n == 0:
            raise ValueError("empty dataset")
        bs = min(cfg.batch_size, n)
        for _ in range(epochs):
            perm = self.rng.permutation(n)
            epoch_loss = 0.0
            lr = self.state.lr()
            last_good = self.params
            for start in range(0, n, bs):
                idx = perm[start:start + bs]
                if cfg.loss_scaling == "batch":
                    loss, g = grad_theta(self.params, data.X[idx], data.U[idx], cfg.eta, cfg.lam)
                else:
                    hinge, g = grad_theta(self.params, data.X[idx], data.U[idx], cfg.eta, 0.0)
                    w = n / len(idx)
                    th = self.params.theta
                    loss = w * hinge + cfg.lam * float(th @ th)
                    g = w * g + 2.0 * cfg.lam * th
                if not (math.isfinite(loss) and np.all(np.isfinite(g))):
                    raise NonFiniteLoss(f"non-finite loss in epoch {self.epoch}",
                                        params=last_good, epoch=self.epoch)
                epoch_loss += loss
                theta, _ = adam_step(self.state, self.params.theta, g)
                if not np.all(np.isfinite(theta)):
                    raise NonFiniteLoss(f"non-finite parameters in epoch {self.epoch}",
                                        params=last_good, epoch=self.epoch)
                last_good = self.params
                self.params = self.params.with_theta(theta)
            self.history.append((self.epoch, epoch_loss, lr))
            if self.epoch_hook is not None:
                self.epoch_hook(self.epoch, epoch_loss, lr)
            self.epoch += 1
        return self.params


def _steps_per_epoch(n, batch_size):
    return math.ceil(n / min(batch_size, n)) if n else 0


def train_nominal(data: Dataset, config: TrainConfig, init: CertificateParams,
                  epochs: Optional[int] = None, epoch_hook=None) -> TrainResult:
    """Minimize the surrogate decrease loss on a fixed dataset."""
    epochs = config.epochs if epochs is None else epochs
    if len(data) == 0:
        raise ValueError("dataset is empty")
    if epochs == 0:
        return TrainResult(init.copy())
    rng = np.random.default_rng(config.seed)
    opt = _Minimizer(init.copy(), config, epochs * _steps_per_epoch(len(data), config.batch_size),
                     rng, epoch_hook)
    start = dataset_loss(opt.params, data, config.eta, config.lam)
    params = opt.run(data, epochs)
    end = dataset_loss(params, data, config.eta, config.lam)
    return TrainResult(params, opt.history, [(start, end)], inner_minimizations=1,
                       datasets=[data])


def nominal_dataset(f: VectorField, ics, config: TrainConfig, wrap_dims=None) -> Dataset:
    trajs = rollout_many(f, ics, config.horizon, config.dt, wrap_dims)
    return build_dataset(trajs, config.retained_steps)


def train_adversarial(ics, f: VectorField, config: TrainConfig, init: CertificateParams,
                      wrap_dims=None, epoch_hook=None, phase_hook=None) -> TrainResult:
    """Alternate certificate minimization with greedy adversarial re-rollouts.

    Nominal trajectories first; then ``m - 1`` rounds of (minimize, re-roll
    every trajectory from its original initial condition under the greedy
    disturbance of the current certificate); then a final minimization.
    """
    m = config.alternations
    if config.adversary.kind not in (TubeKind.LIPSCHITZ, TubeKind.NORM_BOUNDED, TubeKind.COMBINED):
        raise ValueError(f"adversarial training needs a non-trivial tube, got {config.adversary.kind}")
    ics = np.array(ics, dtype=float)
    data = nominal_dataset(f, ics, config, wrap_dims)
    n = len(data)
    total = m * config.inner_epochs * _steps_per_epoch(n, config.batch_size)
    rng = np.random.default_rng(config.seed)
    opt = _Minimizer(init.copy(), config, total, rng, epoch_hook)
    result = TrainResult(opt.params)
    for phase in range(m):
        start = dataset_loss(opt.params, data, config.eta, config.lam)
        opt.run(data, config.inner_epochs)
        end = dataset_loss(opt.params, data, config.eta, config.lam)
        result.phase_losses.append((start, end))
        result.inner_minimizations += 1
        result.datasets.append(data)
        if phase_hook is not None:
            phase_hook(phase, start, end)
        log.info("phase %d: loss %.6g -> %.6g", phase, start, end)
        if phase == m - 1:
            break
        d = greedy_disturbance(opt.params, config.adversary)
        try:
            trajs = perturbed_rollout_many(f, d, config.adversary, ics, config.horizon, config.dt,
                                           wrap_dims)
        except NonFiniteState as exc:
            raise NonFiniteState(
                f"adversarial re-rollout {phase + 1} diverged ({exc}); the budget "
                f"{config.adversary.to_dict()} likely destabilizes the system", step=exc.step) from None
        result.rerollouts += 1
        data = build_dataset(trajs, config.retained_steps)
    result.params = opt.params
    result.history = opt.history
    return result
