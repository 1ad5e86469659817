"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array dimensions do not match an operation's contract."""


class GeometryError(ValueError):
    """A rectangle or window falls outside the grid it addresses."""


class ConfigError(ValueError):
    """Invalid configuration; the message aggregates every problem found."""


class NumericError(FloatingPointError):
    """A NaN/Inf appeared in a computation; the message names the source."""


class DatasetError(IOError):
    """A dataset file is missing, corrupt, or inconsistent with its labels."""
