"""Exception types shared across the package."""


class AdvLyapError(Exception):
    """Base class for all package errors."""


class NonFiniteState(AdvLyapError):
    """An integrator stage produced NaN or Inf.

    ``step`` is the index of the rollout step that failed (``None`` for a
    single ``rk4_step`` call).
    """

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class InvalidBox(AdvLyapError, ValueError):
    pass


class BudgetViolation(AdvLyapError):
    """A realized disturbance left its perturbation tube."""

    def __init__(self, message, slack=None):
        super().__init__(message)
        self.slack = slack


class ShapeMismatch(AdvLyapError, ValueError):
    pass


class NonFiniteLoss(AdvLyapError):
    """Training loss became non-finite; ``params`` holds the last finite iterate."""

    def __init__(self, message, params=None, epoch=None):
        super().__init__(message)
        self.params = params
        self.epoch = epoch


class CheckpointError(AdvLyapError, ValueError):
    pass


class InvalidDomain(AdvLyapError, ValueError):
    pass


class DomainError(AdvLyapError, ValueError):
    pass


class ConfigError(AdvLyapError, ValueError):
    pass
