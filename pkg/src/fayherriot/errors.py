"""Exception hierarchy used across the package."""

from numpy.linalg import LinAlgError


class FayHerriotError(Exception):
    """Base class for all package errors."""


class DataError(FayHerriotError, ValueError):
    """Malformed input data. Carries the offending line number when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class RankDeficientError(FayHerriotError, LinAlgError):
    pass


class InsufficientAreasError(FayHerriotError, ValueError):
    pass


class SingularCovarianceError(FayHerriotError, LinAlgError):
    pass


class DomainError(FayHerriotError, ValueError):
    pass


class BootstrapError(FayHerriotError, RuntimeError):
    """Too many bootstrap replicates failed to re-estimate."""


class ConfigError(FayHerriotError, ValueError):
    pass
