class SLWSRError(Exception):
    """Base class for package errors."""


class ConfigurationError(SLWSRError, ValueError):
    """Shapes, channel counts or configuration values do not fit together."""


class NumericError(SLWSRError, ArithmeticError):
    """A non-finite value appeared where finite data is required."""


class UsageError(SLWSRError, RuntimeError):
    """An API was called in a state where it is not defined."""


class DataError(SLWSRError, OSError):
    """Dataset, image or checkpoint files are missing or unreadable."""
