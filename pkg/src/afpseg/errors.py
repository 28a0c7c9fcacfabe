"""Exception types shared across the package."""


class AfpsegError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(AfpsegError, ValueError):
    """A config value is missing, malformed, or out of its legal range."""


class GeometryError(AfpsegError, ValueError):
    """Geometric input is degenerate (too few vertices, non-finite coords)."""


class ShapeError(AfpsegError, ValueError):
    """An array does not meet a shape or divisibility requirement."""


class DataError(AfpsegError, ValueError):
    """Sample data is inconsistent (labels out of range, non-finite values)."""


class FileFormatError(AfpsegError, RuntimeError):
    """A container file has a bad magic, version, or truncated payload."""
