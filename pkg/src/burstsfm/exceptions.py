"""Exception hierarchy shared by all modules."""


class BurstError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(BurstError, ValueError):
    """Invalid or missing configuration / metadata."""


class DataError(BurstError, ValueError):
    """Malformed input data (sizes, geometry, file contents)."""


class RawIOError(DataError, OSError):
    """A raw or image file could not be read or written consistently."""


class NumericalError(BurstError, ArithmeticError):
    """A computation hit a degenerate numerical case."""
