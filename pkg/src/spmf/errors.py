"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage and I/O problems exit 2,
data validation problems exit 3, numerical divergence exits 4.
"""


class SpmfError(Exception):
    """Base class for package errors."""


class DataError(SpmfError):
    """Invalid input data: malformed lines, out-of-range ratings,
    duplicate pairs, self-loops, conflicting domain assignments."""


class ModelFormatError(SpmfError):
    """Model file cannot be loaded: unknown version, checksum mismatch,
    or truncated payload."""


class ColdStartError(SpmfError):
    """Prediction requested for a user or item unknown to the model."""


class TrainingDiverged(SpmfError):
    """The objective became non-finite during training."""

    def __init__(self, epoch: int, message: str):
        super().__init__(message)
        self.epoch = epoch
