class SnapensError(Exception):
    """Base class for errors raised by this package."""


class DatasetError(SnapensError, ValueError):
    pass


class InsufficientCandidatesError(DatasetError):
    pass


class TrainingDivergedError(SnapensError, FloatingPointError):
    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}: non-finite parameters")


class NumericError(SnapensError, FloatingPointError):
    pass


class SnapshotFormatError(SnapensError, ValueError):
    pass


class ConfigError(SnapensError, ValueError):
    pass
