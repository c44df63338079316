"""Exception types shared across the package."""


class RkhsMiError(Exception):
    """Base class for all package errors."""


class ParameterError(RkhsMiError, ValueError):
    """An argument violates a documented precondition."""


class ShapeError(RkhsMiError, ValueError):
    """Array shapes are inconsistent."""


class MagnitudeError(RkhsMiError, FloatingPointError):
    """A critic output is too large to exponentiate safely."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class DivergenceError(RkhsMiError, FloatingPointError):
    """Training produced a non-finite quantity.

    ``index`` is the offending parameter coordinate (Adam) and ``step`` the
    training step at which the failure surfaced, when known.
    """

    def __init__(self, message, index=None, step=None):
        super().__init__(message)
        self.index = index
        self.step = step


class ConfigError(RkhsMiError, ValueError):
    """Invalid or unknown configuration entries."""
