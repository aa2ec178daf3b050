"""Exception hierarchy shared by all featmim modules.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4. Anything else is a bug and propagates as a traceback.
"""


class FeatmimError(Exception):
    """Base class for all errors raised by featmim."""


class ConfigError(FeatmimError):
    """Invalid configuration or violated precondition derivable from config."""


class ShapeError(ConfigError):
    """Tensor shapes do not satisfy an operation's contract."""


class DegenerateMaskError(ConfigError):
    """A mask left no visible (or no masked) patches where some are required."""


class DataError(FeatmimError):
    """Malformed or missing input files (images, feature dumps, checkpoints)."""


class NumericError(FeatmimError):
    """Numerically undefined request: non-finite inputs, zero-norm tokens."""
