"""Exception types shared across the package.

Configuration problems map to CLI exit code 2, everything else raised here
maps to exit code 3.
"""


class FreqLockError(Exception):
    """Base class for all package errors."""

    exit_code = 3


class ConfigurationError(FreqLockError, ValueError):
    exit_code = 2


class DomainError(FreqLockError, ValueError):
    """Argument outside the domain where a model is defined."""


class ResolutionError(FreqLockError, ValueError):
    """Numerical grid too coarse for the features it must resolve."""


class ExtrapolationError(FreqLockError, ValueError):
    """Evaluation requested outside a tabulated range."""


class NoSetPointError(FreqLockError):
    pass


class FitError(FreqLockError, RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class BoundViolationError(FreqLockError):
    """Rate function exceeded the declared thinning bound."""


class UndefinedVisibilityError(FreqLockError, ZeroDivisionError):
    pass


class NoSolutionError(FreqLockError):
    pass


class InconclusiveError(FreqLockError):
    """Data does not contain the feature an analysis looks for."""
