"""Nominal and adversarially robust Lyapunov certificates learned from
trajectories, with E-dISS deviation and Rademacher generalization bounds.

Submodules: ``sim``, ``adversary``, ``certnet``, ``trainer``, ``violation``,
``theory`` and ``cli``.  The names below are re-exported lazily so that the
command-line entry point can configure threading before numpy loads.
"""
import importlib

__version__ = "0.1.0"

_EXPORTS = {
    "AdversarySpec": "adversary", "TubeKind": "adversary", "greedy_disturbance": "adversary",
    "perturbed_rollout": "adversary", "CertificateParams": "certnet", "MlpArchitecture": "certnet",
    "init_params": "certnet", "load_checkpoint": "certnet", "Trajectory": "sim", "VectorField": "sim",
    "pendulum_field": "sim", "rollout": "sim", "TrainConfig": "trainer", "train_adversarial": "trainer",
    "train_nominal": "trainer",
}

__all__ = ["__version__", *_EXPORTS]


def __getattr__(name):
    if name in _EXPORTS:
        return getattr(importlib.import_module(f".{_EXPORTS[name]}", __name__), name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
