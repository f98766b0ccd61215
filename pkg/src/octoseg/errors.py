"""Exception hierarchy shared across the package.

The CLI maps these onto its exit codes: ConfigError -> 2, FormatError and
OSError -> 3, NumericError -> 4.
"""


class OctosegError(Exception):
    pass


class ConfigError(OctosegError, ValueError):
    """Invalid configuration, alpha mismatch or unsupported model size."""


class ShapeError(OctosegError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class ContractError(OctosegError, RuntimeError):
    """An operation was called outside its documented preconditions."""


class NumericError(OctosegError, FloatingPointError):
    """A NaN or Inf appeared where only finite values are allowed."""


class TrainingDiverged(NumericError):
    pass


class FormatError(OctosegError):
    """A file on disk does not follow the expected layout."""


class CheckpointError(FormatError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class DescriptorMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class ManifestError(FormatError):
    pass


class NotBinaryError(OctosegError, ValueError):
    """A mask passed to the Jaccard metric holds values other than 0 and 1."""
