"""Exception hierarchy shared across the package."""


class FitNetError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(FitNetError, ValueError):
    pass


class DimensionError(FitNetError, ValueError):
    pass


class ConfigurationError(FitNetError, ValueError):
    pass


class EmbeddingIndexError(FitNetError, IndexError):
    pass


class UnknownItemError(FitNetError, IndexError):
    pass


class StratumExhaustedError(FitNetError, RuntimeError):
    """Raised when a negative-sampling stratum has too few eligible items."""

    def __init__(self, stratum: str, needed: int, available: int):
        self.stratum = stratum
        self.needed = needed
        self.available = available
        super().__init__(
            f"stratum '{stratum}' exhausted: need {needed}, only {available} eligible"
        )


class DivergenceError(FitNetError, FloatingPointError):
    def __init__(self, batch_index: int, epoch: int, loss: float):
        self.batch_index = batch_index
        self.epoch = epoch
        self.loss = loss
        super().__init__(
            f"non-finite loss {loss!r} at epoch {epoch}, batch {batch_index}"
        )


class FormatError(FitNetError, ValueError):
    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class VersionError(FitNetError, ValueError):
    pass


class DataError(FitNetError, ValueError):
    """Malformed or inconsistent corpus data."""
