"""
Embedding-store metrics: neighbours in common, overfit flag, Frechet distance,
oracle text adherence and bigram KL.
"""

import logging
from typing import List, Optional, Sequence

import numpy as np

from ..models.conditioning_models import FrozenProjection
from ..models.corpus_models import StyleParams, TokenSequence
from ..models.metric_models import EmbeddingStore, GaussianStats
from ..utils.errors import NumericError, ParameterError
from ..utils.helpers import hash_arrays
from .frozen_features import sequence_embedding
from .synthetic_corpus import classify_many

logger = logging.getLogger(__name__)

NEGATIVE_EIGEN_TOLERANCE = 1e-8
UNIT_TOLERANCE = 1e-6


def build_store(
    songs: Sequence[TokenSequence],
    chunk_len: int,
    projection: FrozenProjection,
    window: int = 8,
    hop: int = 4,
    splits: Optional[List[str]] = None,
) -> EmbeddingStore:
    """
    Embed every non-overlapping chunk of every song.

    Args:
        songs: Source songs (usually valid + test)
        chunk_len: Chunk length in tokens (>= window)
        projection: Frozen feature projection
        window: Feature window
        hop: Feature hop
        splits: Split tags recorded on the store

    Returns:
        EmbeddingStore: floor(L / chunk_len) unit vectors per song
    """
    if chunk_len < window:
        raise ParameterError(
            f"chunk_len={chunk_len} is shorter than the window {window}"
        )
    if not songs:
        raise ParameterError("cannot build a store from zero songs")

    song_ids, chunk_ids, vectors = [], [], []
    for song in songs:
        for j in range(len(song) // chunk_len):
            chunk = song.tokens[j * chunk_len:(j + 1) * chunk_len]
            song_ids.append(song.song_id)
            chunk_ids.append(j)
            vectors.append(sequence_embedding(chunk, projection, window, hop))
    if not vectors:
        raise ParameterError(f"no song holds a full chunk of {chunk_len} tokens")

    logger.info(f"Built embedding store: {len(vectors)} chunks from {len(songs)} songs")
    # stores are saved as float32; built and loaded stores must rank identically
    stored = np.stack(vectors).astype(np.float32).astype(np.float64)
    return EmbeddingStore(
        song_ids=np.array(song_ids, dtype=np.int64),
        chunk_ids=np.array(chunk_ids, dtype=np.int64),
        vectors=stored,
        chunk_len=chunk_len,
        splits=splits or [],
        projection_seed=projection.seed,
        projection_hash=hash_arrays({"projection": projection.matrix}),
    )


def cosines(matrix: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Row-wise dot products; identical rows always give identical values."""
    return (matrix * e[None, :]).sum(axis=1)


def _check_query(store: EmbeddingStore, e: np.ndarray) -> np.ndarray:
    """Validate a query and bring it to the float32 precision of stored vectors."""
    e = np.asarray(e, dtype=np.float32).astype(np.float64)
    if e.shape != (store.dim,):
        raise ParameterError(
            f"query has shape {e.shape}, store dimension is {store.dim}"
        )
    if abs(float(np.linalg.norm(e)) - 1.0) > UNIT_TOLERANCE:
        raise ParameterError("query embedding is not unit norm")
    return e


def nearest_songs(store: EmbeddingStore, e: np.ndarray, k: int) -> List[int]:
    """
    K songs whose best chunk is most similar to e.

    Ties in best similarity go to the lower song id.
    """
    e = _check_query(store, e)
    songs, inverse = np.unique(store.song_ids, return_inverse=True)
    if k < 1 or k > songs.size:
        raise ParameterError(f"k={k} but the store holds {songs.size} songs")

    best = np.full(songs.size, -np.inf)
    np.maximum.at(best, inverse, cosines(store.vectors, e))
    order = np.lexsort((songs, -best))
    return [int(s) for s in songs[order[:k]]]


def knn_common(
    store: EmbeddingStore, e_c: np.ndarray, e_g: np.ndarray, k: int
) -> float:
    """Fraction of the K nearest songs shared by the conditioning and generation."""
    common = set(nearest_songs(store, e_c, k)) & set(nearest_songs(store, e_g, k))
    return len(common) / k


def knn_overfit(store: EmbeddingStore, e_c: np.ndarray, e_g: np.ndarray) -> int:
    """1 if e_g is at least as close to e_c as every stored chunk, else 0."""
    if len(store) == 0:
        raise ParameterError("empty store")
    e_c = _check_query(store, e_c)
    e_g = _check_query(store, e_g)
    stored = cosines(store.vectors, e_c)
    generated = cosines(e_g[None, :], e_c)[0]
    return int(generated >= stored.max())


def gaussian_stats(embeddings: np.ndarray) -> GaussianStats:
    """Mean and unbiased covariance of embeddings; one sample gives zero covariance."""
    embeddings = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    if embeddings.shape[0] == 0:
        raise ParameterError("no embeddings")
    mean = embeddings.mean(axis=0)
    if embeddings.shape[0] > 1:
        cov = np.cov(embeddings, rowvar=False)
        cov = np.atleast_2d(cov)
        cov = (cov + cov.T) / 2.0
    else:
        cov = np.zeros((embeddings.shape[1], embeddings.shape[1]))
    return GaussianStats(mean=mean, cov=cov, count=embeddings.shape[0])


def _psd_sqrt(cov: np.ndarray, name: str) -> np.ndarray:
    eigenvalues, eigenvectors = np.linalg.eigh(cov)
    if eigenvalues.min() < -NEGATIVE_EIGEN_TOLERANCE:
        raise NumericError(
            f"{name} is not positive semi-definite "
            f"(eigenvalue {eigenvalues.min():.3e})"
        )
    eigenvalues = np.clip(eigenvalues, 0.0, None)
    return (eigenvectors * np.sqrt(eigenvalues)) @ eigenvectors.T


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """
    Frechet distance between two Gaussians.

    ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)), with the trace of the
    square root taken from the eigenvalues of sqrt(S_a) S_b sqrt(S_a).
    """
    if a.mean.shape != b.mean.shape:
        raise ParameterError(f"dimension mismatch: {a.mean.shape} vs {b.mean.shape}")
    sqrt_a = _psd_sqrt(a.cov, "covariance a")
    _psd_sqrt(b.cov, "covariance b")

    product = sqrt_a @ b.cov @ sqrt_a
    eigenvalues = np.linalg.eigvalsh((product + product.T) / 2.0)
    if eigenvalues.min() < -NEGATIVE_EIGEN_TOLERANCE:
        raise NumericError(f"covariance product has eigenvalue {eigenvalues.min():.3e}")
    trace_sqrt = float(np.sqrt(np.clip(eigenvalues, 0.0, None)).sum())

    diff = a.mean - b.mean
    distance = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * trace_sqrt)
    return max(distance, 0.0)


def text_adherence(
    generated: Sequence[TokenSequence],
    intended_styles: Sequence[int],
    styles: Sequence[StyleParams],
    smoothing_eps: float = 1e-9,
) -> float:
    """Fraction of sequences the likelihood oracle assigns to their intended style."""
    if not generated:
        raise ParameterError("no sequences to score")
    if len(generated) != len(intended_styles):
        raise ParameterError(
            f"{len(generated)} sequences but {len(intended_styles)} intended styles"
        )
    predicted = classify_many(generated, styles, smoothing_eps)
    hits = sum(int(p == s) for p, s in zip(predicted, intended_styles))
    return hits / len(generated)


def _smooth_rows(rows: np.ndarray, eps: float) -> np.ndarray:
    smoothed = rows + eps
    return smoothed / smoothed.sum(axis=1, keepdims=True)


def bigram_kl(
    seq: TokenSequence, style: StyleParams, smoothing_eps: float = 1e-9
) -> float:
    """
    KL(empirical bigram conditionals of seq || style transitions), both smoothed,
    weighted by how often each current token occurs.
    """
    tokens = seq.tokens
    vocab = style.vocab_size
    if tokens.size < 2:
        raise ParameterError("bigram KL needs at least 2 tokens")
    if tokens.max() >= vocab:
        raise ParameterError("sequence uses tokens outside the style vocabulary")

    counts = np.zeros((vocab, vocab))
    np.add.at(counts, (tokens[:-1], tokens[1:]), 1.0)
    totals = counts.sum(axis=1)
    observed = totals > 0

    empirical = _smooth_rows(counts[observed] / totals[observed, None], smoothing_eps)
    reference = _smooth_rows(style.trans[observed], smoothing_eps)
    per_row = (empirical * (np.log(empirical) - np.log(reference))).sum(axis=1)
    weights = totals[observed] / totals.sum()
    return max(float(weights @ per_row), 0.0)
