"""Exception hierarchy shared by every tokenstyle module."""


class TokenStyleError(Exception):
    """Base class for all errors raised by tokenstyle."""


class ParameterError(TokenStyleError, ValueError):
    """An argument is out of its documented range or inconsistent with another."""


class TooShortError(ParameterError):
    """A sequence is shorter than the window or chunk it has to fill."""


class DegenerateEmbeddingError(TokenStyleError, ValueError):
    """A vector that must be L2-normalized has zero norm."""


class NumericError(TokenStyleError, ArithmeticError):
    """Non-finite values or a numerically invalid intermediate (e.g. non-PSD matrix)."""


class ConfigError(TokenStyleError, ValueError):
    """Configuration file or override could not be applied."""


class CompatibilityError(TokenStyleError):
    """Two artifacts were produced with incompatible settings."""


class CorruptionError(TokenStyleError):
    """Persisted data or indices are invalid."""


class VersionMismatchError(CorruptionError):
    """Container format version differs from the supported one."""


class TruncatedPayloadError(CorruptionError):
    """Container payload is shorter than its header declares."""


class ShapeMismatchError(CorruptionError):
    """Array shapes in a container disagree with what the reader expects."""


class MissingArtifactError(TokenStyleError, FileNotFoundError):
    """A required input file does not exist."""
