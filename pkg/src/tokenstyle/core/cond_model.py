"""
Causal conditional decoder: prefix conditioning, masked cross-entropy and the
training step.

Sequences are laid out as [prefix vectors | token embeddings]. Prefixes of a
batch are left-padded to a common length; pad positions are masked as keys
and position ids count from the first real prefix vector, so each sequence is
computed exactly as it would be alone.
"""

import logging
from enum import Enum
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from ..config.settings import ConditionerSettings, ModelSettings, RunConfig
from ..models.checkpoint_models import ModelParams
from ..models.conditioning_models import (
    ConditioningPrefix,
    FrozenProjection,
    RvqCodebooks,
)
from ..models.corpus_models import TokenSequence
from ..utils.errors import ParameterError
from ..utils.helpers import Stream, hash_arrays, rng_for
from ..utils.validation import require_dim, require_tokens
from .layers import (
    Grads,
    accumulate,
    block_backward,
    block_forward,
    init_block,
    layer_norm_backward,
    layer_norm_forward,
    softmax_rows,
)
from .optim import Adam, clip_gradients, warmup_lr
from .rvq import ema_update
from .style_conditioner import (
    FrozenQuantization,
    conditioner_backward,
    encode_style,
    init_conditioner_params,
    sample_excerpt,
)

logger = logging.getLogger(__name__)


class ConditionCase(str, Enum):
    """Which conditions an example keeps after dropout."""
    BOTH = "both"
    TEXT = "text"
    STYLE = "style"
    NONE = "none"


CASES = (
    ConditionCase.BOTH,
    ConditionCase.TEXT,
    ConditionCase.STYLE,
    ConditionCase.NONE,
)


def init_params(
    vocab_size: int,
    n_styles: int,
    d_features: int,
    model: ModelSettings,
    conditioner: ConditionerSettings,
    seed: int,
) -> ModelParams:
    """
    Draw the initial decoder and conditioner parameters.

    Args:
        vocab_size: Token vocabulary V
        n_styles: Number of text classes S
        d_features: Frozen feature dimension d_f
        model: Decoder shape
        conditioner: Conditioner shape
        seed: Run seed

    Returns:
        ModelParams: float64 arrays keyed by dotted names
    """
    d = model.d_model
    if d % model.n_heads:
        raise ParameterError(f"d_model={d} is not divisible by {model.n_heads} heads")

    rng = rng_for(seed, Stream.INIT)
    scale = model.init_scale
    arrays: Dict[str, np.ndarray] = {
        "tok_emb": scale * rng.standard_normal((vocab_size, d)),
        "pos_emb": scale * rng.standard_normal((model.max_positions, d)),
        "text_emb": scale * rng.standard_normal((n_styles, d)),
        "null_text": scale * rng.standard_normal(d),
        "null_style": scale * rng.standard_normal(d),
    }
    for b in range(model.n_blocks):
        init_block(arrays, f"blocks.{b}", d, model.d_ff, rng)
    arrays["ln_f.g"] = np.ones(d)
    arrays["ln_f.b"] = np.zeros(d)
    arrays["out.w"] = rng.standard_normal((d, vocab_size)) / np.sqrt(d)
    arrays["out.b"] = np.zeros(vocab_size)
    init_conditioner_params(arrays, d_features, conditioner, d, rng)

    params = ModelParams(
        arrays=arrays,
        vocab_size=vocab_size,
        n_styles=n_styles,
        d_features=d_features,
        model=model,
        conditioner=conditioner,
    )
    logger.info(f"Initialized {sum(a.size for a in arrays.values())} parameters")
    return params


def params_hash(params: ModelParams) -> str:
    return hash_arrays(params.arrays)


def _layout(params: ModelParams, prefixes: Sequence[np.ndarray], n_tokens: int):
    """Padding mask, position ids and attention mask of a left-padded batch."""
    lengths = np.array([p.shape[0] for p in prefixes])
    if lengths.min() < 1:
        raise ParameterError("every prefix needs at least one vector")
    width = int(lengths.max())
    total = width + n_tokens
    offsets = width - lengths

    positions = np.arange(total)[None, :] - offsets[:, None]
    pad = positions < 0
    positions = np.maximum(positions, 0)
    limit = params.model.max_positions
    if positions.max() >= limit:
        raise ParameterError(
            f"sequence of {int(positions.max()) + 1} positions "
            f"exceeds max_positions={limit}"
        )
    causal = np.tril(np.ones((total, total), dtype=bool))
    allowed = causal[None] & (~pad[:, None, :] | np.eye(total, dtype=bool)[None])
    return width, offsets, positions, pad, allowed


def decode_batch(
    params: ModelParams,
    prefixes: Sequence[np.ndarray],
    inputs: np.ndarray,
) -> Tuple[np.ndarray, tuple]:
    """
    Batched decoder forward.

    Args:
        params: Model parameters
        prefixes: One (prefix_len x d_m) matrix per example
        inputs: batch x T input tokens (T may be 0)

    Returns:
        tuple: (logits of shape batch x (T + 1) x V, cache); row 0 predicts
            the first token from the prefix alone, row j + 1 follows inputs[:, j]
    """
    arrays = params.arrays
    d = params.d_model
    inputs = np.asarray(inputs, dtype=np.int64).reshape(len(prefixes), -1)
    for i, prefix in enumerate(prefixes):
        require_dim(f"prefix[{i}]", prefix, d)
    if inputs.size:
        require_tokens("inputs", inputs.ravel(), params.vocab_size)

    n_tokens = inputs.shape[1]
    width, offsets, positions, pad, allowed = _layout(params, prefixes, n_tokens)

    x = np.zeros((len(prefixes), width + n_tokens, d))
    for i, prefix in enumerate(prefixes):
        x[i, offsets[i]:width] = prefix
    x[:, width:] = arrays["tok_emb"][inputs]
    x = x + arrays["pos_emb"][positions]

    block_caches = []
    for b in range(params.model.n_blocks):
        x, cache = block_forward(
            x, arrays, f"blocks.{b}", params.model.n_heads, allowed
        )
        block_caches.append(cache)

    normed, ln_cache = layer_norm_forward(x, arrays["ln_f.g"], arrays["ln_f.b"])
    scored = normed[:, width - 1:]
    logits = scored @ arrays["out.w"] + arrays["out.b"]
    cache = (
        inputs,
        width,
        offsets,
        positions,
        pad,
        block_caches,
        ln_cache,
        scored,
        x.shape,
    )
    return logits, cache


def decode_backward(
    d_logits: np.ndarray,
    cache: tuple,
    params: ModelParams,
    grads: Grads,
) -> List[np.ndarray]:
    """
    Backward of decode_batch.

    Returns:
        list: Gradient with respect to each example's prefix matrix
    """
    (
        inputs,
        width,
        offsets,
        positions,
        pad,
        block_caches,
        ln_cache,
        scored,
        shape,
    ) = cache
    arrays = params.arrays
    d = shape[-1]
    vocab = d_logits.shape[-1]

    accumulate(grads, "out.w", scored.reshape(-1, d).T @ d_logits.reshape(-1, vocab))
    accumulate(grads, "out.b", d_logits.reshape(-1, vocab).sum(axis=0))
    d_normed = np.zeros(shape)
    d_normed[:, width - 1:] = d_logits @ arrays["out.w"].T

    dx, dg, db = layer_norm_backward(d_normed, ln_cache)
    accumulate(grads, "ln_f.g", dg)
    accumulate(grads, "ln_f.b", db)
    for b in reversed(range(params.model.n_blocks)):
        dx = block_backward(
            dx, block_caches[b], arrays, f"blocks.{b}", params.model.n_heads, grads
        )

    real = ~pad
    pos_grad = np.zeros_like(arrays["pos_emb"])
    np.add.at(pos_grad, positions[real], dx[real])
    accumulate(grads, "pos_emb", pos_grad)

    tok_grad = np.zeros_like(arrays["tok_emb"])
    if inputs.size:
        np.add.at(tok_grad, inputs.ravel(), dx[:, width:].reshape(-1, d))
    accumulate(grads, "tok_emb", tok_grad)

    return [dx[i, offsets[i]:width] for i in range(dx.shape[0])]


def forward_logits(
    params: ModelParams, prefix: ConditioningPrefix, tokens: np.ndarray
) -> np.ndarray:
    """
    Next-token logits for one sequence.

    Args:
        params: Model parameters
        prefix: Text part followed by style part
        tokens: Token history

    Returns:
        np.ndarray: len(tokens) x V; row j scores token j + 1 given the prefix
            and tokens[0..j]
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    tokens = require_tokens("tokens", tokens, params.vocab_size)
    logits, _ = decode_batch(params, [prefix.vectors()], tokens[None, :])
    return logits[0, 1:]


def masked_cross_entropy(
    logits: np.ndarray, targets: np.ndarray, mask: np.ndarray
) -> Tuple[float, np.ndarray]:
    """
    Mean negative log-likelihood over the unmasked positions.

    Args:
        logits: (..., V) scores
        targets: (...) target ids
        mask: (...) booleans, True where the position is scored

    Returns:
        tuple: (loss, gradient w.r.t. logits); an empty mask gives (0.0, zeros)
    """
    mask = np.asarray(mask, dtype=bool)
    if logits.shape[:-1] != targets.shape or mask.shape != targets.shape:
        raise ParameterError(
            f"logits {logits.shape}, targets {targets.shape} "
            f"and mask {mask.shape} disagree"
        )
    count = int(mask.sum())
    if count == 0:
        return 0.0, np.zeros_like(logits)

    safe_targets = np.where(mask, targets, 0)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_probs = shifted - log_norm
    picked = np.take_along_axis(log_probs, safe_targets[..., None], axis=-1)[..., 0]
    loss = float(-np.where(mask, picked, 0.0).sum() / count)

    grad = np.exp(log_probs)
    index = safe_targets[..., None]
    np.put_along_axis(
        grad, index, np.take_along_axis(grad, index, axis=-1) - 1.0, axis=-1
    )
    grad = np.where(mask[..., None], grad / count, 0.0)
    return loss, grad


class TrainingExample(NamedTuple):
    """One song with its drawn excerpt, condition case and RVQ depth."""
    tokens: np.ndarray
    label: int
    span: Tuple[int, int]
    case: ConditionCase
    n_streams: int


class LossResult(NamedTuple):
    loss: float
    cross_entropy: float
    penalty: float
    grads: Grads
    encoded: List[np.ndarray]  # quantizer inputs of the style-conditioned examples
    codes: List[np.ndarray]  # their code indices, padded to K stages with -1


def draw_examples(
    songs: Sequence[TokenSequence],
    rng: np.random.Generator,
    config: RunConfig,
    n_total_streams: int,
) -> List[TrainingExample]:
    """Draw a batch of songs, excerpts, condition cases and depths from one rng."""
    training = config.training
    conditioner = config.conditioner
    examples = []
    for _ in range(training.batch_size):
        song = songs[int(rng.integers(len(songs)))]
        _, span = sample_excerpt(
            song, rng, conditioner.min_excerpt, conditioner.max_excerpt
        )
        case = ConditionCase.BOTH
        if training.condition_dropout:
            case = CASES[int(rng.integers(4))]
        n = n_total_streams
        if training.depth_dropout:
            n = int(rng.integers(1, n_total_streams + 1))
        examples.append(
            TrainingExample(
                tokens=song.tokens,
                label=song.style_id,
                span=span,
                case=case,
                n_streams=n,
            )
        )
    return examples


def loss_and_grads(
    params: ModelParams,
    codebooks: RvqCodebooks,
    projection: FrozenProjection,
    examples: Sequence[TrainingExample],
    config: RunConfig,
    frozen: Optional[Sequence[Optional[FrozenQuantization]]] = None,
) -> LossResult:
    """
    Loss and parameter gradients of a batch of examples.

    The loss is the masked cross-entropy plus the commitment penalty
    averaged over the batch.
    """
    lengths = {len(ex.tokens) for ex in examples}
    if len(lengths) != 1:
        raise ParameterError(f"examples must share one length, got {sorted(lengths)}")

    arrays = params.arrays
    batch = len(examples)
    n_total = codebooks.n_streams
    prefixes, style_results = [], []
    for i, ex in enumerate(examples):
        keeps_text = ex.case in (ConditionCase.BOTH, ConditionCase.TEXT)
        keeps_style = ex.case in (ConditionCase.BOTH, ConditionCase.STYLE)
        if keeps_text:
            text = arrays["text_emb"][ex.label][None]
        else:
            text = arrays["null_text"][None]
        if keeps_style:
            start, length = ex.span
            result = encode_style(
                ex.tokens[start:start + length],
                params,
                codebooks,
                ex.n_streams,
                projection,
                mode="train",
                window=config.features.window,
                hop=config.features.hop,
                commitment=config.rvq.commitment,
                source_span=ex.span,
                frozen=frozen[i] if frozen is not None else None,
            )
            style = result.prefix.vectors
        else:
            result = None
            style = arrays["null_style"][None]
        style_results.append(result)
        prefixes.append(np.concatenate([text, style], axis=0))

    songs = np.stack([ex.tokens for ex in examples])
    targets = songs
    mask = np.ones(targets.shape, dtype=bool)
    if config.training.loss_masking:
        positions = np.arange(targets.shape[1])
        for i, ex in enumerate(examples):
            start, length = ex.span
            mask[i] &= ~((positions >= start) & (positions < start + length))

    logits, cache = decode_batch(params, prefixes, songs[:, :-1])
    ce, d_logits = masked_cross_entropy(logits, targets, mask)

    grads: Grads = {name: np.zeros_like(value) for name, value in arrays.items()}
    d_prefixes = decode_backward(d_logits, cache, params, grads)

    penalty = 0.0
    encoded, codes = [], []
    for i, ex in enumerate(examples):
        d_prefix = d_prefixes[i]
        if ex.case in (ConditionCase.BOTH, ConditionCase.TEXT):
            grads["text_emb"][ex.label] += d_prefix[0]
        else:
            grads["null_text"] += d_prefix[0]
        result = style_results[i]
        if result is None:
            grads["null_style"] += d_prefix[1]
            continue
        penalty += result.penalty / batch
        conditioner_backward(
            d_prefix[1:], result.cache, params, grads, penalty_scale=1.0 / batch
        )
        encoded.append(result.encoded)
        padded = np.full((result.codes.codes.shape[0], n_total), -1, dtype=np.int64)
        padded[:, :result.codes.n] = result.codes.codes
        codes.append(padded)

    return LossResult(
        loss=ce + penalty,
        cross_entropy=ce,
        penalty=penalty,
        grads=grads,
        encoded=encoded,
        codes=codes,
    )


class StepResult(NamedTuple):
    loss: float
    cross_entropy: float
    penalty: float
    grad_norm: float
    lr: float
    cases: List[ConditionCase]
    depths: List[int]


def training_step(
    params: ModelParams,
    codebooks: RvqCodebooks,
    optimizer: Adam,
    songs: Sequence[TokenSequence],
    rng: np.random.Generator,
    projection: FrozenProjection,
    config: RunConfig,
) -> Tuple[StepResult, RvqCodebooks]:
    """
    One optimization step: draw a batch, backpropagate, then update the
    parameters with Adam and the codebooks by EMA.

    Args:
        params: Updated in place
        codebooks: Codebooks used for the forward pass
        optimizer: Adam over params.arrays
        songs: Training songs (all of one length >= max_excerpt)
        rng: Step rng; every draw of the step comes from it
        projection: Frozen feature projection
        config: Run configuration

    Returns:
        tuple: (step statistics, updated codebooks)
    """
    step = optimizer.state.t
    examples = draw_examples(songs, rng, config, codebooks.n_streams)
    result = loss_and_grads(params, codebooks, projection, examples, config)

    grads = result.grads
    norm = clip_gradients(grads, config.training.grad_clip)
    lr = warmup_lr(config.training.lr, step, config.training.warmup)
    optimizer.step(params.arrays, grads, lr)

    if result.encoded:
        codebooks = ema_update(
            codebooks,
            np.concatenate(result.encoded),
            np.concatenate(result.codes),
            rng,
        )

    stats = StepResult(
        loss=result.loss,
        cross_entropy=result.cross_entropy,
        penalty=result.penalty,
        grad_norm=norm,
        lr=lr,
        cases=[ex.case for ex in examples],
        depths=[ex.n_streams for ex in examples],
    )
    return stats, codebooks


class IncrementalDecoder:
    """
    Key/value-cached decoding of a batch of sequences with individual prefixes.

    After construction `logits` holds the prediction for the first token;
    each call to `step` appends one token per sequence and returns the
    logits of the next.
    """

    def __init__(
        self, params: ModelParams, prefixes: Sequence[np.ndarray], capacity: int
    ):
        self.params = params
        arrays = params.arrays
        model = params.model
        empty = np.zeros((len(prefixes), 0), dtype=np.int64)
        logits, cache = decode_batch(params, prefixes, empty)
        _, width, offsets, positions, pad, block_caches, _, _, _ = cache

        total = width + capacity
        batch = len(prefixes)
        head_dim = params.d_model // model.n_heads
        self.keys = np.zeros((model.n_blocks, batch, model.n_heads, total, head_dim))
        self.values = np.zeros_like(self.keys)
        for b, block_cache in enumerate(block_caches):
            attn_cache = block_cache[1]
            self.keys[b, :, :, :width] = attn_cache[2]
            self.values[b, :, :, :width] = attn_cache[3]
        self.key_ok = np.zeros((batch, total), dtype=bool)
        self.key_ok[:, :width] = ~pad
        self.length = width
        self.next_position = width - offsets
        self.capacity = total
        self.logits = logits[:, 0]
        self._arrays = arrays

    def step(self, tokens: np.ndarray) -> np.ndarray:
        arrays = self._arrays
        model = self.params.model
        if self.length >= self.capacity:
            raise ParameterError("decoder cache is full")
        if np.any(self.next_position >= model.max_positions):
            raise ParameterError(f"decoding past max_positions={model.max_positions}")
        tokens = np.asarray(tokens, dtype=np.int64)
        require_tokens("tokens", tokens, self.params.vocab_size)

        batch = tokens.shape[0]
        heads = model.n_heads
        head_dim = self.params.d_model // heads
        slot = self.length
        self.key_ok[:, slot] = True

        x = arrays["tok_emb"][tokens] + arrays["pos_emb"][self.next_position]
        x = x[:, None, :]
        for b in range(model.n_blocks):
            name = f"blocks.{b}"
            normed, _ = layer_norm_forward(
                x, arrays[f"{name}.ln1.g"], arrays[f"{name}.ln1.b"]
            )
            q = (normed @ arrays[f"{name}.attn.wq"]).reshape(batch, heads, 1, head_dim)
            k = normed @ arrays[f"{name}.attn.wk"]
            v = normed @ arrays[f"{name}.attn.wv"]
            self.keys[b, :, :, slot] = k.reshape(batch, heads, head_dim)
            self.values[b, :, :, slot] = v.reshape(batch, heads, head_dim)

            keys = self.keys[b, :, :, :slot + 1]
            scores = (q @ keys.transpose(0, 1, 3, 2)) / np.sqrt(head_dim)
            visible = self.key_ok[:, None, None, :slot + 1]
            scores = np.where(visible, scores, -np.inf)
            context = softmax_rows(scores) @ self.values[b, :, :, :slot + 1]
            context = context.reshape(batch, 1, heads * head_dim)
            x = x + context @ arrays[f"{name}.attn.wo"]

            normed, _ = layer_norm_forward(
                x, arrays[f"{name}.ln2.g"], arrays[f"{name}.ln2.b"]
            )
            hidden = normed @ arrays[f"{name}.ff.w1"] + arrays[f"{name}.ff.b1"]
            hidden = np.maximum(hidden, 0.0)
            x = x + hidden @ arrays[f"{name}.ff.w2"] + arrays[f"{name}.ff.b2"]

        normed, _ = layer_norm_forward(x, arrays["ln_f.g"], arrays["ln_f.b"])
        self.length += 1
        self.next_position = self.next_position + 1
        self.logits = normed[:, 0] @ arrays["out.w"] + arrays["out.b"]
        return self.logits
