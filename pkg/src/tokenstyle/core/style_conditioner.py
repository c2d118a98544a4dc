"""
Style conditioner: frozen frames -> encoder -> RVQ -> temporal mean pooling ->
projection.

Parameters live under the `cond.` prefix of the shared parameter dictionary.
"""

import logging
from typing import NamedTuple, Optional, Tuple

import numpy as np

from ..config.settings import ConditionerSettings
from ..models.checkpoint_models import ModelParams
from ..models.conditioning_models import (
    CodeSequence,
    FrozenProjection,
    RvqCodebooks,
    StylePrefix,
)
from ..models.corpus_models import TokenSequence
from ..utils.errors import ParameterError
from .frozen_features import extract_frames
from .layers import Grads, Params, accumulate, block_backward, block_forward, init_block
from .rvq import quantize, straight_through

logger = logging.getLogger(__name__)

BLOCK = "cond.block"


class FrozenQuantization(NamedTuple):
    """
    Fixed stand-in for the quantizer used by finite-difference checks.

    The quantized value becomes encoded + offset and the commitment target is
    held at `target`, so the loss is smooth in the encoder weights.
    """
    offset: np.ndarray
    target: np.ndarray


class EncodedStyle(NamedTuple):
    """Forward result of the conditioner."""
    prefix: StylePrefix
    encoded: np.ndarray  # quantizer inputs, n_frames x d_e
    codes: CodeSequence
    penalty: float
    cache: tuple


def encoder_shape(settings: ConditionerSettings) -> Tuple[int, int]:
    """(heads, feed-forward width) of the configured encoder variant."""
    if settings.encoder == "small":
        return settings.small_heads, settings.small_d_ff
    return settings.n_heads, settings.d_ff


def pooled_length(n_frames: int, downsample: int) -> int:
    return -(-n_frames // downsample)


def init_conditioner_params(
    params: Params,
    d_features: int,
    settings: ConditionerSettings,
    d_model: int,
    rng: np.random.Generator,
) -> None:
    """Add the conditioner's arrays to `params`."""
    d_e = settings.d_encoder
    params["cond.in.w"] = rng.standard_normal((d_features, d_e)) / np.sqrt(d_features)
    params["cond.in.b"] = np.zeros(d_e)
    if settings.encoder != "none":
        heads, d_ff = encoder_shape(settings)
        if d_e % heads:
            raise ParameterError(f"d_encoder={d_e} is not divisible by {heads} heads")
        params["cond.pos"] = 0.02 * rng.standard_normal((settings.max_frames, d_e))
        init_block(params, BLOCK, d_e, d_ff, rng)
    params["cond.proj.w"] = rng.standard_normal((d_e, d_model)) / np.sqrt(d_e)
    params["cond.proj.b"] = np.zeros(d_model)


def sample_excerpt(
    song: TokenSequence,
    rng: np.random.Generator,
    min_len: int = 24,
    max_len: int = 72,
) -> Tuple[np.ndarray, Tuple[int, int]]:
    """
    Draw a random excerpt of a song.

    Args:
        song: Source song (length >= max_len)
        rng: Random source
        min_len: Shortest excerpt
        max_len: Longest excerpt

    Returns:
        tuple: (excerpt tokens, (start, length))
    """
    length = len(song)
    if length < max_len:
        raise ParameterError(
            f"song of {length} tokens is shorter than the longest excerpt {max_len}"
        )
    excerpt_len = int(rng.integers(min_len, max_len + 1))
    start = int(rng.integers(0, length - excerpt_len + 1))
    return song.tokens[start:start + excerpt_len], (start, excerpt_len)


def _encode_frames(
    frames: np.ndarray, params: ModelParams
) -> Tuple[np.ndarray, Optional[tuple]]:
    settings = params.conditioner
    arrays = params.arrays
    n_frames = frames.shape[0]
    hidden = frames @ arrays["cond.in.w"] + arrays["cond.in.b"]
    if settings.encoder == "none":
        return hidden, None
    if n_frames > settings.max_frames:
        raise ParameterError(
            f"{n_frames} frames exceed the encoder's {settings.max_frames} positions"
        )
    heads, _ = encoder_shape(settings)
    positioned = (hidden + arrays["cond.pos"][:n_frames])[None]
    encoded, block_cache = block_forward(positioned, arrays, BLOCK, heads, None)
    return encoded[0], block_cache


def encoder_outputs(
    excerpt_tokens: np.ndarray,
    params: ModelParams,
    projection: FrozenProjection,
    window: int = 8,
    hop: int = 4,
) -> np.ndarray:
    """Unquantized encoder output of an excerpt (n_frames x d_e)."""
    frames = extract_frames(excerpt_tokens, projection, window, hop).frames
    return _encode_frames(frames, params)[0]


def encode_style(
    excerpt_tokens: np.ndarray,
    params: ModelParams,
    codebooks: RvqCodebooks,
    n_streams: int,
    projection: FrozenProjection,
    mode: str = "eval",
    window: int = 8,
    hop: int = 4,
    commitment: float = 0.25,
    source_span: Optional[Tuple[int, int]] = None,
    frozen: Optional[FrozenQuantization] = None,
) -> EncodedStyle:
    """
    Turn an excerpt into a style prefix.

    Args:
        excerpt_tokens: Excerpt (>= window tokens)
        params: Model parameters holding the `cond.` arrays
        codebooks: RVQ codebooks
        n_streams: Stages used, 1 <= n_streams <= K
        projection: Frozen feature projection
        mode: "train" adds the commitment penalty; "eval" does not
        window: Feature window
        hop: Feature hop
        commitment: Commitment weight
        source_span: (start, length) recorded on the prefix
        frozen: Replace the quantizer by a fixed offset (gradient checks)

    Returns:
        EncodedStyle: prefix, quantizer inputs, codes, penalty and backward cache
    """
    if mode not in ("train", "eval"):
        raise ParameterError(f"unknown conditioner mode {mode}")
    if not 1 <= n_streams <= codebooks.n_streams:
        raise ParameterError(
            f"n_streams={n_streams} outside [1, {codebooks.n_streams}]"
        )

    settings = params.conditioner
    arrays = params.arrays
    frames = extract_frames(excerpt_tokens, projection, window, hop).frames
    n_frames = frames.shape[0]
    encoded, block_cache = _encode_frames(frames, params)

    codes, quantized = quantize(encoded, codebooks, n_streams)
    penalty = 0.0
    commit_grad = np.zeros_like(encoded)
    if frozen is not None:
        quantized = encoded + frozen.offset
    if mode == "train":
        target = frozen.target if frozen is not None else quantized
        st = straight_through(encoded, target, commitment)
        penalty, commit_grad = st.penalty, st.grad_x

    ds = settings.downsample
    starts = np.arange(0, n_frames, ds)
    sizes = np.minimum(starts + ds, n_frames) - starts
    pooled = np.add.reduceat(quantized, starts, axis=0) / sizes[:, None]
    vectors = pooled @ arrays["cond.proj.w"] + arrays["cond.proj.b"]

    span = source_span if source_span is not None else (0, int(len(excerpt_tokens)))
    prefix = StylePrefix(vectors=vectors, n_streams_used=n_streams, source_span=span)
    cache = (frames, block_cache, sizes, pooled, commit_grad)
    return EncodedStyle(
        prefix=prefix, encoded=encoded, codes=codes, penalty=penalty, cache=cache
    )


def conditioner_backward(
    d_vectors: np.ndarray,
    cache: tuple,
    params: ModelParams,
    grads: Grads,
    penalty_scale: float = 1.0,
) -> None:
    """
    Accumulate conditioner gradients for an upstream gradient on the prefix.

    The quantizer is the identity in the backward pass; the commitment
    gradient (scaled by penalty_scale) is added at the quantizer input.
    """
    frames, block_cache, sizes, pooled, commit_grad = cache
    arrays = params.arrays
    settings = params.conditioner

    accumulate(grads, "cond.proj.w", pooled.T @ d_vectors)
    accumulate(grads, "cond.proj.b", d_vectors.sum(axis=0))
    d_pooled = d_vectors @ arrays["cond.proj.w"].T
    d_encoded = np.repeat(d_pooled / sizes[:, None], sizes, axis=0)
    d_encoded = d_encoded + penalty_scale * commit_grad

    if settings.encoder != "none":
        heads, _ = encoder_shape(settings)
        d_hidden = block_backward(
            d_encoded[None], block_cache, arrays, BLOCK, heads, grads
        )[0]
        pos_grad = np.zeros_like(arrays["cond.pos"])
        pos_grad[:d_hidden.shape[0]] = d_hidden
        accumulate(grads, "cond.pos", pos_grad)
    else:
        d_hidden = d_encoded

    accumulate(grads, "cond.in.w", frames.T @ d_hidden)
    accumulate(grads, "cond.in.b", d_hidden.sum(axis=0))
