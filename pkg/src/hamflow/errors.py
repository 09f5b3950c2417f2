"""Exception types shared across the package."""


class HamflowError(Exception):
    """Base class for all package errors."""


class DimensionError(HamflowError):
    """A state or batch has the wrong phase-space dimension, or non-finite entries."""


class ParameterError(HamflowError):
    """A system or config parameter is missing or invalid."""


class UnsupportedSchemeError(HamflowError):
    """The requested integrator cannot be applied to this system."""


class StepFailureError(HamflowError):
    """An implicit solve did not converge.

    Carries the failing step context so callers can diagnose instead of
    silently propagating NaNs.
    """

    def __init__(self, message, last_iterate=None, residual_norm=None, step_index=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual_norm = residual_norm
        self.step_index = step_index


class ToleranceError(HamflowError):
    """A requested accuracy could not be reached within the step budget."""


class InfeasiblePositionError(HamflowError):
    """Momentum refreshment requested at a position with U(q) >= H0."""


class EmptyIntersectionError(HamflowError):
    """The ellipsoid x'Mx = c does not intersect the affine subspace Ax = b."""


class MetricUndefinedError(HamflowError):
    """An error metric is undefined (e.g. relative energy error with H ~ 0)."""


class ConfigError(HamflowError):
    """A run configuration failed validation."""
