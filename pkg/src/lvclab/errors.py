"""Exception types shared across the package."""


class LvclabError(Exception):
    """Base class for package errors."""


class ConfigError(LvclabError):
    """Invalid experiment configuration. Carries the offending field path."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"config field '{field}': {message}")


class CapabilityError(LvclabError):
    """A requested operation is outside what the object supports."""


class ModulationError(LvclabError):
    """Quadratic tilt too strong for the prior tails; the tilted measure diverges."""


class QuadratureError(LvclabError):
    """Adaptive integration did not reach the target tolerance.

    Carries the partial estimate and its error estimate so callers can decide
    whether to proceed anyway.
    """

    def __init__(self, message, partial=None, error_estimate=None):
        self.partial = partial
        self.error_estimate = error_estimate
        super().__init__(message)


class ConvergenceError(LvclabError):
    """No fixed-point initialization converged. Carries per-init residual traces."""

    def __init__(self, message, traces=None):
        self.traces = traces or {}
        super().__init__(message)
