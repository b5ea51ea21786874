"""Certificate function class, exact gradients and the optimizer."""
from ._backend import BACKEND, available as available_backends
from .model import (
    CertificateParams,
    MlpArchitecture,
    QuadraticCertificate,
    decrease_terms,
    dumps_checkpoint,
    eval_V,
    grad_theta,
    grad_x_V,
    init_params,
    load_checkpoint,
    quadratic_params,
    save_checkpoint,
)
from .optim import OptimizerState, adam_step

__all__ = [
    "BACKEND", "available_backends", "CertificateParams", "MlpArchitecture", "QuadraticCertificate", "decrease_terms",
    "dumps_checkpoint", "eval_V", "grad_theta", "grad_x_V", "init_params", "load_checkpoint",
    "quadratic_params", "save_checkpoint", "OptimizerState", "adam_step",
]
