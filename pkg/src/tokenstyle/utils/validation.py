import logging
from typing import Optional, Union

import numpy as np

from .errors import NumericError, ParameterError

logger = logging.getLogger(__name__)

Number = Union[int, float]


def require_range(
    name: str,
    value: Number,
    low: Optional[Number] = None,
    high: Optional[Number] = None,
) -> Number:
    """
    Validate that a scalar lies in a closed interval.

    Args:
        name: Argument name used in the error message
        value: Value to check
        low: Inclusive lower bound (optional)
        high: Inclusive upper bound (optional)

    Returns:
        The value itself, so calls can be inlined
    """
    if low is not None and value < low:
        raise ParameterError(f"{name}={value} is below the minimum {low}")
    if high is not None and value > high:
        raise ParameterError(f"{name}={value} is above the maximum {high}")
    return value


def require_positive(name: str, value: Number) -> Number:
    """Validate that a scalar is strictly positive."""
    if not value > 0:
        raise ParameterError(f"{name} must be > 0, got {value}")
    return value


def require_finite(name: str, array: np.ndarray) -> np.ndarray:
    """Raise NumericError if an array holds NaN or infinity."""
    if not np.all(np.isfinite(array)):
        bad = int(np.size(array) - np.count_nonzero(np.isfinite(array)))
        logger.warning(f"{name} contains {bad} non-finite values")
        raise NumericError(f"{name} contains {bad} non-finite values")
    return array


def require_tokens(name: str, tokens: np.ndarray, vocab_size: int) -> np.ndarray:
    """Validate a 1-D token array against the vocabulary."""
    if tokens.ndim != 1:
        raise ParameterError(
            f"{name} must be one-dimensional, got shape {tokens.shape}"
        )
    if tokens.size and (tokens.min() < 0 or tokens.max() >= vocab_size):
        raise ParameterError(
            f"{name} has tokens outside [0, {vocab_size}): "
            f"min={tokens.min()}, max={tokens.max()}"
        )
    return tokens


def require_dim(name: str, array: np.ndarray, dim: int) -> np.ndarray:
    """Validate the trailing dimension of an array."""
    if array.shape[-1] != dim:
        raise ParameterError(f"{name} has dimension {array.shape[-1]}, expected {dim}")
    return array
