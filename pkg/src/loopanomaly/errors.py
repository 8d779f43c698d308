"""Exception types raised across the package."""


class LoopAnomalyError(Exception):
    """Base class for all package errors."""


class ConfigurationError(LoopAnomalyError, ValueError):
    """Invalid parameters or run configuration."""


class ResolutionError(ConfigurationError):
    """Loop resolution too small to represent a loop."""


class DomainError(LoopAnomalyError, ValueError):
    """Argument outside the domain of the operation."""


class NumericalError(LoopAnomalyError, ArithmeticError):
    """A numerical procedure failed to reach its tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class MonotonicityError(NumericalError):
    """The rho-length threshold bracket does not straddle the cutoff."""


class RefusalError(LoopAnomalyError):
    """An estimator declined to run because its diagnostics are out of range."""
