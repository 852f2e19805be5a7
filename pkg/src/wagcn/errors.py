"""Exception types. Each maps onto one CLI exit code."""


class WagcnError(Exception):
    exit_code = 1


class ValidationError(WagcnError, ValueError):
    """Bad user input: config, manifest or argument."""


class ConfigError(ValidationError):
    pass


class DimensionError(ValidationError):
    pass


class UsageError(ValidationError):
    pass


class DomainError(ValidationError, ArithmeticError):
    pass


class NumericalError(WagcnError, ArithmeticError):
    """Training produced a non-finite value."""

    exit_code = 2


class FormatError(WagcnError, OSError):
    """A tensor file does not follow the binary layout."""

    exit_code = 3


class CorruptionError(FormatError):
    pass
