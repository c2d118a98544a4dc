"""Deterministic, non-trainable frame features and the sequence embedding E(x)."""

import logging
from typing import Union

import numpy as np

from ..models.conditioning_models import FrameSequence, FrozenProjection
from ..models.corpus_models import TokenSequence
from ..utils.errors import DegenerateEmbeddingError, ParameterError, TooShortError
from ..utils.helpers import Stream, rng_for

logger = logging.getLogger(__name__)

TokensLike = Union[TokenSequence, np.ndarray]


def make_projection(
    seed: int, vocab_size: int, n_buckets: int, dim: int
) -> FrozenProjection:
    """Draw the (V + B) x d_f standard normal projection once for a seed."""
    rng = rng_for(seed, Stream.PROJECTION)
    matrix = rng.standard_normal((vocab_size + n_buckets, dim))
    return FrozenProjection(
        matrix=matrix, vocab_size=vocab_size, n_buckets=n_buckets, seed=seed
    )


def _as_tokens(seq: TokensLike) -> np.ndarray:
    if isinstance(seq, TokenSequence):
        return seq.tokens
    return np.asarray(seq, dtype=np.int64)


def frame_count(length: int, window: int, hop: int) -> int:
    """Number of frames for a sequence of `length` tokens (length >= window)."""
    return (length - window) // hop + 1


def _normalize_rows(features: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(features, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateEmbeddingError("feature vector with zero norm")
    return features / norms


def window_histograms(
    tokens: np.ndarray, vocab_size: int, n_buckets: int, window: int, hop: int
) -> np.ndarray:
    """
    Concatenated (unigram, hashed bigram) histograms of every window.

    Returns:
        np.ndarray: n_frames x (V + B), each half normalized to sum 1
    """
    n_frames = frame_count(tokens.shape[0], window, hop)
    starts = np.arange(n_frames) * hop
    windows = tokens[starts[:, None] + np.arange(window)]
    rows = np.repeat(np.arange(n_frames), window)

    unigrams = np.zeros((n_frames, vocab_size))
    np.add.at(unigrams, (rows, windows.ravel()), 1.0)
    unigrams /= window

    buckets = (windows[:, :-1] * vocab_size + windows[:, 1:]) % n_buckets
    bigrams = np.zeros((n_frames, n_buckets))
    pair_rows = np.repeat(np.arange(n_frames), window - 1)
    np.add.at(bigrams, (pair_rows, buckets.ravel()), 1.0)
    bigrams /= window - 1

    return np.concatenate([unigrams, bigrams], axis=1)


def extract_frames(
    seq: TokensLike, projection: FrozenProjection, window: int = 8, hop: int = 4
) -> FrameSequence:
    """
    Frozen feature frames of a token sequence.

    Args:
        seq: Tokens in [0, V)
        projection: Fixed random projection
        window: Window W in tokens (>= 2)
        hop: Hop H in tokens (>= 1)

    Returns:
        FrameSequence: floor((L - W) / H) + 1 unit-norm frames
    """
    if window < 2 or hop < 1:
        raise ParameterError(f"invalid window/hop ({window}, {hop})")
    tokens = _as_tokens(seq)
    if tokens.shape[0] < window:
        raise TooShortError(
            f"sequence of {tokens.shape[0]} tokens is shorter than the window {window}"
        )
    if tokens.max() >= projection.vocab_size or tokens.min() < 0:
        raise ParameterError("tokens outside the projection vocabulary")

    histograms = window_histograms(
        tokens, projection.vocab_size, projection.n_buckets, window, hop
    )
    frames = _normalize_rows(histograms @ projection.matrix)
    return FrameSequence(frames=frames, window=window, hop=hop)


def sequence_embedding(
    seq: TokensLike, projection: FrozenProjection, window: int = 8, hop: int = 4
) -> np.ndarray:
    """
    E(x): time-averaged frames, L2-normalized.

    Returns:
        np.ndarray: unit vector of dimension d_f
    """
    frames = extract_frames(seq, projection, window, hop).frames
    mean = frames.mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm == 0.0:
        raise DegenerateEmbeddingError("frames average to the zero vector")
    return mean / norm
