"""Exception hierarchy shared by all modules."""


class UnivPerturbError(Exception):
    """Base class for every error raised by this package."""


class DomainError(UnivPerturbError, ValueError):
    """An argument lies outside the domain of the operation."""


class ShapeError(UnivPerturbError, ValueError):
    """Array dimensions do not agree."""


class ConfigError(UnivPerturbError, ValueError):
    """Invalid or inconsistent configuration."""


class NumericalError(UnivPerturbError, ArithmeticError):
    """A computation produced non-finite values."""


class InfeasibleError(UnivPerturbError):
    """No admissible solution exists for the request."""


class AnalysisError(UnivPerturbError):
    """An analysis could not gather enough usable data."""


class ParseError(UnivPerturbError, ValueError):
    """A serialized artifact is malformed."""


class UnsupportedVersionError(ParseError):
    """A serialized artifact declares a format version we cannot read."""
