"""Exception and warning types shared across the package."""


class BB84TimeError(Exception):
    """Base class for all package errors."""


class ParameterError(BB84TimeError, ValueError):
    """A parameter lies outside its documented range."""


class ConfigError(ParameterError):
    """A configuration document is malformed or inconsistent."""


class DomainError(BB84TimeError, ValueError):
    """A function was evaluated outside the region where it is defined."""


class DivergenceError(DomainError):
    """A transform is infinite at the requested argument."""


class DegenerateProtocolError(ParameterError):
    """The trial never succeeds, so the completion time is infinite."""


class NumericalInstabilityError(BB84TimeError, ArithmeticError):
    """Two independent numerical routes disagree beyond tolerance."""


class FitFailureError(BB84TimeError, RuntimeError):
    """Moment matching could not reach the minimal accuracy."""


class TruncationWarning(UserWarning):
    """A truncated series left a remainder above the reporting threshold."""
