"""Exception types shared across the package."""


class LagidError(Exception):
    """Base class for all package errors."""


class DomainError(LagidError, ValueError):
    """A value lies outside the mathematical domain of an operation
    (parameter outside the knot range, non-positive radicand, bad interval)."""


class ShapeError(LagidError, ValueError):
    """Array shapes are incompatible with the requested operation."""


class ConfigError(LagidError, ValueError):
    """Invalid or unknown configuration (unknown system id, bad fractions, ...)."""


class DegenerateMassMatrixError(LagidError):
    """The coefficient-weighted velocity Hessian is (numerically) singular."""


class BlowUpError(LagidError):
    """Integration produced non-finite state."""

    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


class InitializationError(LagidError):
    """Control-point initialization failed (too few usable measurements)."""


class EmptyModelError(LagidError):
    """Thresholding removed every candidate term."""


class DivergenceError(LagidError):
    """The optimization loss grew far beyond its best value."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace


class NonFiniteLossError(LagidError):
    """The loss became NaN/Inf; carries the per-component breakdown."""

    def __init__(self, message: str, components=None):
        super().__init__(message)
        self.components = components


class UndefinedMetricError(LagidError):
    """A metric is undefined for the given inputs (zero truth norm, empty model)."""
