"""Itinerary-aware two-tower deep matching for travel recommendation."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigurationError,
    DataError,
    DimensionError,
    DivergenceError,
    EmbeddingIndexError,
    FitNetError,
    FormatError,
    InvalidArgumentError,
    StratumExhaustedError,
    UnknownItemError,
    VersionError,
)

__all__ = [
    "__version__",
    "ConfigurationError",
    "DataError",
    "DimensionError",
    "DivergenceError",
    "EmbeddingIndexError",
    "FitNetError",
    "FormatError",
    "InvalidArgumentError",
    "StratumExhaustedError",
    "UnknownItemError",
    "VersionError",
]
