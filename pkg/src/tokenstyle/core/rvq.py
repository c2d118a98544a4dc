"""Residual vector quantization with k-means initialization and EMA codebooks."""

import logging
from typing import NamedTuple, Optional, Tuple

import numpy as np

from ..models.conditioning_models import CodeSequence, RvqCodebooks
from ..utils.errors import CorruptionError, ParameterError
from ..utils.helpers import Stream, rng_for

logger = logging.getLogger(__name__)

_CHUNK = 1024
RESEED_NOISE = 1e-4


def _check_input(x: np.ndarray, cb: RvqCodebooks, n: int) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if not 1 <= n <= cb.n_streams:
        raise ParameterError(f"n_streams={n} outside [1, {cb.n_streams}]")
    if x.shape[-1] != cb.dim:
        raise ParameterError(
            f"vectors have dimension {x.shape[-1]}, codebooks expect {cb.dim}"
        )
    return x


def nearest_entries(points: np.ndarray, entries: np.ndarray) -> np.ndarray:
    """
    Index of the closest entry for every point (exact squared Euclidean).

    Ties go to the lowest index. Distances are computed from explicit
    differences so the result matches a brute-force search exactly.
    """
    indices = np.empty(points.shape[0], dtype=np.int64)
    for start in range(0, points.shape[0], _CHUNK):
        block = points[start:start + _CHUNK]
        distances = ((block[:, None, :] - entries[None, :, :]) ** 2).sum(axis=-1)
        indices[start:start + _CHUNK] = np.argmin(distances, axis=1)
    return indices


def quantize(
    x: np.ndarray, cb: RvqCodebooks, n: int
) -> Tuple[CodeSequence, np.ndarray]:
    """
    Quantize vectors through the first n stages.

    Args:
        x: n_frames x d vectors
        cb: Codebooks
        n: Stages used, 1 <= n <= K

    Returns:
        tuple: (codes, quantized) where quantized is the sum of chosen entries
    """
    x = _check_input(x, cb, n)
    residual = x.copy()
    quantized = np.zeros_like(x)
    codes = np.empty((x.shape[0], n), dtype=np.int64)
    for k in range(n):
        idx = nearest_entries(residual, cb.books[k])
        chosen = cb.books[k][idx]
        codes[:, k] = idx
        quantized += chosen
        residual -= chosen
    return CodeSequence(codes=codes, n=n), quantized


def dequantize(codes: CodeSequence, cb: RvqCodebooks) -> np.ndarray:
    """Sum the indexed entries of the used stages, in stage order."""
    if codes.n > cb.n_streams:
        raise CorruptionError(
            f"codes use {codes.n} stages, codebooks have {cb.n_streams}"
        )
    indices = codes.codes
    if indices.size and (indices.min() < 0 or indices.max() >= cb.codebook_size):
        raise CorruptionError(f"code index outside [0, {cb.codebook_size})")
    quantized = np.zeros((codes.codes.shape[0], cb.dim))
    for k in range(codes.n):
        quantized += cb.books[k][codes.codes[:, k]]
    return quantized


class StraightThrough(NamedTuple):
    """Training-mode view of a quantization."""
    output: np.ndarray  # forward value (the quantized vectors)
    penalty: float  # commitment * mean ||x - sg(q)||^2
    grad_x: np.ndarray  # gradient of the penalty w.r.t. x


def straight_through(
    x: np.ndarray, quantized: np.ndarray, commitment: float
) -> StraightThrough:
    """
    Commitment accounting for the straight-through estimator.

    The forward value is `quantized`; backward treats the quantizer as the
    identity, so upstream gradients pass to x unchanged and the penalty
    gradient is added on top.
    """
    diff = x - quantized
    penalty = commitment * float(np.mean(diff ** 2)) if diff.size else 0.0
    grad = (2.0 * commitment / max(diff.size, 1)) * diff
    return StraightThrough(output=quantized, penalty=penalty, grad_x=grad)


def reconstruction_error(x: np.ndarray, cb: RvqCodebooks, n: int) -> float:
    """Mean squared error of the depth-n reconstruction."""
    _, quantized = quantize(x, cb, n)
    return float(np.mean((np.atleast_2d(x) - quantized) ** 2))


def kmeans(
    samples: np.ndarray,
    n_clusters: int,
    rng: np.random.Generator,
    iters: int,
    reseed: bool = True,
) -> np.ndarray:
    """
    Lloyd's k-means with seeded greedy farthest-point initialization.

    Args:
        samples: m x d points (m >= n_clusters)
        n_clusters: Number of centroids
        rng: Chooses the first center and the duplicate perturbation
        iters: Lloyd iterations
        reseed: Perturb duplicate centroids by seeded noise of scale 1e-4

    Returns:
        np.ndarray: n_clusters x d centroids
    """
    m = samples.shape[0]
    if m < n_clusters:
        raise ParameterError(f"k-means needs at least {n_clusters} samples, got {m}")

    chosen = [int(rng.integers(m))]
    min_dist = ((samples - samples[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, n_clusters):
        nxt = int(np.argmax(min_dist))
        chosen.append(nxt)
        min_dist = np.minimum(min_dist, ((samples - samples[nxt]) ** 2).sum(axis=1))
    centroids = samples[chosen].copy()

    for _ in range(iters):
        labels = nearest_entries(samples, centroids)
        counts = np.bincount(labels, minlength=n_clusters)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, samples)
        filled = counts > 0
        updated = centroids.copy()
        updated[filled] = sums[filled] / counts[filled, None]
        if np.array_equal(updated, centroids):
            break
        centroids = updated

    if reseed:
        _, first = np.unique(centroids, axis=0, return_index=True)
        duplicates = np.setdiff1d(np.arange(n_clusters), first)
        if duplicates.size:
            logger.debug(f"Perturbing {duplicates.size} duplicate centroids")
            noise = rng.standard_normal((duplicates.size, centroids.shape[1]))
            centroids[duplicates] += RESEED_NOISE * noise
    return centroids


def init_codebooks_kmeans(
    samples: np.ndarray,
    n_streams: int,
    codebook_size: int,
    seed: int,
    iters: int = 10,
    decay: float = 0.99,
    eps_count: float = 1e-5,
    dead_threshold: float = 1e-3,
    reseed: bool = True,
) -> RvqCodebooks:
    """
    Initialize every stage by k-means on the residuals of the previous stages.

    Returns:
        RvqCodebooks: with ema_size = 1 and ema_sum = entry
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if samples.shape[0] < codebook_size:
        raise ParameterError(
            f"need at least {codebook_size} samples, got {samples.shape[0]}"
        )

    rng = rng_for(seed, Stream.KMEANS)
    residual = samples.copy()
    books = np.empty((n_streams, codebook_size, samples.shape[1]))
    for k in range(n_streams):
        books[k] = kmeans(residual, codebook_size, rng, iters, reseed=reseed)
        residual = residual - books[k][nearest_entries(residual, books[k])]

    logger.info(
        f"Initialized {n_streams} codebooks of {codebook_size} entries "
        f"from {samples.shape[0]} samples"
    )
    return RvqCodebooks(
        books=books,
        ema_size=np.ones((n_streams, codebook_size)),
        ema_sum=books.copy(),
        decay=decay,
        eps_count=eps_count,
        dead_threshold=dead_threshold,
        reseed=reseed,
    )


def stage_residuals(
    batch: np.ndarray, codes: np.ndarray, cb: RvqCodebooks
) -> np.ndarray:
    """
    Residual entering each stage for every frame, using the current books.

    Args:
        batch: n_frames x d inputs of the quantizer
        codes: n_frames x n indices, -1 marking stages a frame did not use

    Returns:
        np.ndarray: n x n_frames x d
    """
    residuals = np.empty((codes.shape[1],) + batch.shape)
    residual = batch.copy()
    for k in range(codes.shape[1]):
        residuals[k] = residual
        used = codes[:, k] >= 0
        residual[used] -= cb.books[k][codes[used, k]]
    return residuals


def ema_update(
    cb: RvqCodebooks,
    batch: np.ndarray,
    codes: np.ndarray,
    rng: Optional[np.random.Generator] = None,
) -> RvqCodebooks:
    """
    Exponential-moving-average codebook update.

    Args:
        cb: Codebooks used to produce `codes`
        batch: n_frames x d quantizer inputs
        codes: n_frames x n stage assignments (-1 = stage unused by that frame)
        rng: Source for dead-entry re-seeding

    Returns:
        RvqCodebooks: Updated copy; stages nobody used are left untouched
    """
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    codes = np.atleast_2d(np.asarray(codes, dtype=np.int64))
    if codes.shape[0] != batch.shape[0]:
        raise ParameterError(
            f"{codes.shape[0]} assignments for {batch.shape[0]} vectors"
        )
    if codes.shape[1] > cb.n_streams or batch.shape[1] != cb.dim:
        raise ParameterError("assignments or vectors do not fit the codebooks")
    if codes.size and codes.max() >= cb.codebook_size:
        raise ParameterError("assignment index outside the codebook")

    residuals = stage_residuals(batch, codes, cb)
    updated = cb.copy()
    n_entries = cb.codebook_size
    for k in range(codes.shape[1]):
        used = codes[:, k] >= 0
        if not np.any(used):
            continue
        idx = codes[used, k]
        inputs = residuals[k][used]
        counts = np.bincount(idx, minlength=n_entries).astype(np.float64)
        sums = np.zeros((n_entries, cb.dim))
        np.add.at(sums, idx, inputs)

        updated.ema_size[k] = cb.decay * cb.ema_size[k] + (1.0 - cb.decay) * counts
        updated.ema_sum[k] = cb.decay * cb.ema_sum[k] + (1.0 - cb.decay) * sums
        floor = np.maximum(updated.ema_size[k], cb.eps_count)
        updated.books[k] = updated.ema_sum[k] / floor[:, None]

        if cb.reseed and rng is not None:
            dead = np.flatnonzero(updated.ema_size[k] < cb.dead_threshold)
            if dead.size:
                picks = inputs[rng.integers(inputs.shape[0], size=dead.size)]
                updated.books[k][dead] = picks
                updated.ema_sum[k][dead] = picks
                updated.ema_size[k][dead] = 1.0
                logger.debug(f"Re-seeded {dead.size} dead entries in stage {k}")
    return updated
