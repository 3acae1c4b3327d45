"""Exception types shared across the package."""


class GridKnnError(Exception):
    """Base class for all package errors."""


class DimensionMismatchError(GridKnnError):
    """Coordinate vectors of different lengths were combined."""


class OutOfSpaceError(GridKnnError):
    """A coordinate falls outside the normalized [0, 1] target space."""


class ConfigError(GridKnnError):
    """Invalid grid or run configuration."""


class IngestionError(GridKnnError):
    """A dataset record failed validation; the message names the record."""


class UnsatisfiableKError(GridKnnError):
    """Fewer training points exist than the requested k."""


class JobError(GridKnnError):
    """A map or reduce function failed; the message carries the failing
    record index or group key."""


class ParseError(GridKnnError):
    """A dataset file line could not be parsed; the message carries the
    file path and line number."""
