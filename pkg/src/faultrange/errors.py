"""Exception types shared across the toolkit."""


class FaultRangeError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(FaultRangeError):
    """Invalid configuration: bad bounds, empty subsets, unmapped classes, ..."""


class FormatError(FaultRangeError):
    """Malformed persisted artifact: container, bounds, report, IDX file, ..."""


class TrainingError(FaultRangeError):
    """Training diverged (non-finite loss)."""

    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch
