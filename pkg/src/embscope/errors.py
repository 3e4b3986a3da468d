"""Exception hierarchy. Each class maps to one CLI exit code."""


class EmbscopeError(Exception):
    exit_code = 1


class ConfigError(EmbscopeError, ValueError):
    """Contradictory or out-of-range settings."""

    exit_code = 2


class DataError(EmbscopeError, ValueError):
    """Input data violates a domain invariant."""

    exit_code = 3


class FormatError(DataError):
    """A file does not match its declared format."""


class DimensionMismatch(DataError):
    pass


class NumericError(EmbscopeError, ArithmeticError):
    """Non-finite values or a failed numerical procedure."""

    exit_code = 4
