"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration/validation problems
exit 1, numeric/runtime failures exit 2, I/O problems exit 3.
"""


class ConfigError(ValueError):
    """Invalid configuration value (non-positive time constant, bad gamma, ...)."""


class ShapeError(ValueError):
    """Array arguments whose shapes or lengths do not line up."""


class TopologyError(ValueError):
    """Network architecture whose layer sizes are inconsistent."""


class NonFiniteError(ArithmeticError):
    """NaN or Inf appeared where training cannot continue."""


class DataFormatError(ValueError):
    """Malformed event file: truncated record or out-of-range coordinate."""


class DatasetError(OSError):
    """Missing dataset directory or unreadable sample file."""


class ChecksumError(OSError):
    """A dataset file failed checksum verification."""


class CheckpointError(OSError):
    """Unreadable or version-incompatible network checkpoint."""
