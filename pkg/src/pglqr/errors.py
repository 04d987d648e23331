"""Exception hierarchy shared by every module."""


class PglqrError(Exception):
    """Base class for all errors raised by pglqr."""


class DimensionError(PglqrError, ValueError):
    """Matrix or vector shapes are incompatible."""


class DomainError(PglqrError, ValueError):
    """Input lies outside the mathematical domain of an operation."""


class NumericalError(PglqrError, ArithmeticError):
    """An iterative or factorization routine failed to deliver its postcondition."""


class ConfigError(PglqrError, ValueError):
    """Invalid experiment configuration."""
