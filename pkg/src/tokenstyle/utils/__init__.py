from .errors import (
    CompatibilityError,
    ConfigError,
    CorruptionError,
    DegenerateEmbeddingError,
    MissingArtifactError,
    NumericError,
    ParameterError,
    ShapeMismatchError,
    TokenStyleError,
    TooShortError,
    TruncatedPayloadError,
    VersionMismatchError,
)
from .helpers import (
    Stream,
    cache_result,
    format_table,
    hash_arrays,
    hash_file,
    rng_for,
    write_report,
)

__all__ = [
    "CompatibilityError",
    "ConfigError",
    "CorruptionError",
    "DegenerateEmbeddingError",
    "MissingArtifactError",
    "NumericError",
    "ParameterError",
    "ShapeMismatchError",
    "TokenStyleError",
    "TooShortError",
    "TruncatedPayloadError",
    "VersionMismatchError",
    "Stream",
    "cache_result",
    "format_table",
    "hash_arrays",
    "hash_file",
    "rng_for",
    "write_report",
]
