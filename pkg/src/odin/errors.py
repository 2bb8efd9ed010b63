"""Exception hierarchy shared across the package.

The CLI maps these onto its exit codes: ConfigError -> 2, DataError and
FormatError -> 3, NumericalError -> 4.
"""


class OdinError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(OdinError, ValueError):
    """Invalid parameter or configuration value."""


class DataError(OdinError, ValueError):
    """Input data violates a documented invariant (shape, symmetry, coding)."""


class FormatError(DataError):
    """A file could not be parsed as the documented format."""


class NumericalError(OdinError, ArithmeticError):
    """A numerical operation failed (non-finite objective, factorization)."""
