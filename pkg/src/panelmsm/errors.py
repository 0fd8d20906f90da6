"""Exception and warning types raised across the package."""


class PanelmsmError(Exception):
    """Base class for all package errors."""


class ValidationError(PanelmsmError):
    """Malformed panel data or column contents."""


class ConfigError(PanelmsmError):
    """Invalid or incomplete run configuration."""


class EstimationError(PanelmsmError):
    """Base class for model-fitting failures."""


class ConvergenceError(EstimationError):
    """Solver exhausted its iteration budget.

    Carries the deviance trace so the failure can be inspected.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class SeparationError(EstimationError):
    """Perfect or quasi-perfect separation in a logistic fit."""

    def __init__(self, message, groups=None):
        super().__init__(message)
        self.groups = list(groups) if groups is not None else []


class CollinearityError(EstimationError):
    """Design matrix is rank deficient after any absorbed transforms."""


class PositivityError(PanelmsmError):
    """A fitted treatment probability is exactly 0 or 1."""


class UndefinedSMDError(PanelmsmError):
    """Standardized mean difference has no defined value (zero pooled variance)."""


class InferenceError(PanelmsmError):
    """Bootstrap failed in too many replicates to report statistics."""


class DroppedGroupWarning(UserWarning):
    """Fixed-effect groups with constant response were removed from a logistic fit."""


class UnseenGroupWarning(UserWarning):
    """Prediction requested for groups the model never saw; returned as missing."""
