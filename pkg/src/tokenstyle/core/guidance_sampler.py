"""Classifier-free guidance (simple and double) and autoregressive sampling."""

import logging
from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from ..models.checkpoint_models import ModelParams
from ..models.conditioning_models import GuidanceMode, GuidanceSpec
from ..models.corpus_models import TokenSequence
from ..utils.errors import ParameterError
from ..utils.validation import require_finite
from .cond_model import IncrementalDecoder

logger = logging.getLogger(__name__)

GREEDY_TEMPERATURE = 1e-6


def simple_cfg(l_cond: np.ndarray, l_null: np.ndarray, alpha: float) -> np.ndarray:
    """l_null + alpha * (l_cond - l_null); alpha = 1 returns l_cond exactly."""
    require_finite("l_cond", l_cond)
    require_finite("l_null", l_null)
    if alpha == 1.0:
        return np.array(l_cond, dtype=np.float64, copy=True)
    return l_null + alpha * (l_cond - l_null)


def double_cfg(
    l_null: np.ndarray,
    l_style: np.ndarray,
    l_text_style: np.ndarray,
    alpha: float,
    beta: float,
) -> np.ndarray:
    """
    Push from unconditional to style, then from style to style-and-text.

    Returns:
        np.ndarray: l_null + alpha * (l_style + beta * (l_text_style - l_style)
            - l_null);
            beta = 1 is computed as simple_cfg(l_text_style, l_null, alpha)
    """
    require_finite("l_style", l_style)
    if beta == 1.0:
        return simple_cfg(l_text_style, l_null, alpha)
    require_finite("l_null", l_null)
    require_finite("l_text_style", l_text_style)
    return l_null + alpha * (l_style + beta * (l_text_style - l_style) - l_null)


def restrict_top_k(logits: np.ndarray, top_k: int) -> np.ndarray:
    """Keep the top_k largest logits (ties kept); 0 or >= V disables."""
    vocab = logits.shape[-1]
    if top_k <= 0 or top_k >= vocab:
        return logits
    threshold = np.partition(logits, vocab - top_k, axis=-1)[..., vocab - top_k]
    return np.where(logits >= threshold[..., None], logits, -np.inf)


def draw_token(
    logits: np.ndarray,
    temperature: float,
    top_k: int,
    rng: Optional[np.random.Generator],
) -> int:
    """
    Sample one token from combined logits.

    Temperatures below 1e-6 decode greedily without touching the rng.
    """
    restricted = restrict_top_k(logits, top_k)
    if temperature < GREEDY_TEMPERATURE:
        return int(np.argmax(restricted))
    if rng is None:
        raise ParameterError("sampling with temperature > 0 needs an rng")
    scaled = restricted / temperature
    probs = np.exp(scaled - scaled.max())
    cdf = np.cumsum(probs)
    index = int(np.searchsorted(cdf / cdf[-1], rng.random(), side="right"))
    return min(index, logits.shape[-1] - 1)


class Condition(NamedTuple):
    """Conditions of one generation: text rows and style rows (None = dropped)."""
    text: Optional[np.ndarray]
    style: Optional[np.ndarray]


def branch_prefixes(
    params: ModelParams, condition: Condition, mode: GuidanceMode
) -> List[np.ndarray]:
    """
    Prefixes of the forward branches a guidance mode needs.

    none: [conditional]; simple: [null, conditional];
    double: [null, style only, text and style].
    """
    null_text = params["null_text"][None]
    null_style = params["null_style"][None]
    text = null_text if condition.text is None else np.atleast_2d(condition.text)
    style = null_style if condition.style is None else np.atleast_2d(condition.style)
    null = np.concatenate([null_text, null_style])
    full = np.concatenate([text, style])

    if mode == GuidanceMode.NONE:
        return [full]
    if mode == GuidanceMode.SIMPLE:
        return [null, full]
    if condition.style is None:
        raise ParameterError("double guidance needs a style condition")
    return [null, np.concatenate([null_text, style]), full]


def combine(branch_logits: Sequence[np.ndarray], guidance: GuidanceSpec) -> np.ndarray:
    if guidance.mode == GuidanceMode.NONE:
        return branch_logits[0]
    if guidance.mode == GuidanceMode.SIMPLE:
        return simple_cfg(branch_logits[1], branch_logits[0], guidance.alpha)
    l_null, l_style, l_text_style = branch_logits
    return double_cfg(l_null, l_style, l_text_style, guidance.alpha, guidance.beta)


def sample_batch(
    params: ModelParams,
    conditions: Sequence[Condition],
    guidance: GuidanceSpec,
    length: int,
    rngs: Sequence[Optional[np.random.Generator]],
    prompts: Optional[np.ndarray] = None,
) -> List[TokenSequence]:
    """
    Generate several sequences at once.

    Each branch runs as its own cached decoder over all items, so an item's
    logits do not depend on which other branches the mode computes.

    Args:
        params: Frozen model parameters
        conditions: One Condition per item
        guidance: Logit combination and sampling controls
        length: Tokens generated per item (>= 2)
        rngs: One generator per item (may be None for greedy decoding)
        prompts: Optional items x P tokens fed before generation starts

    Returns:
        list: Generated TokenSequence per item (prompt excluded)
    """
    if length < 2:
        raise ParameterError(f"length must be >= 2, got {length}")
    if len(rngs) != len(conditions):
        raise ParameterError(f"{len(rngs)} rngs for {len(conditions)} items")
    if not conditions:
        return []

    logger.debug(
        f"Sampling {len(conditions)} x {length} tokens "
        f"with {guidance.mode.value} guidance"
    )
    branches = [branch_prefixes(params, cond, guidance.mode) for cond in conditions]
    n_prompt = 0 if prompts is None else int(np.asarray(prompts).shape[1])
    decoders = [
        IncrementalDecoder(
            params, [item[j] for item in branches], capacity=n_prompt + length
        )
        for j in range(len(branches[0]))
    ]

    if prompts is not None:
        prompts = np.asarray(prompts, dtype=np.int64)
        for t in range(n_prompt):
            for decoder in decoders:
                decoder.step(prompts[:, t])

    generated = np.empty((len(conditions), length), dtype=np.int64)
    for t in range(length):
        for i in range(len(conditions)):
            combined = combine([decoder.logits[i] for decoder in decoders], guidance)
            generated[i, t] = draw_token(
                combined, guidance.temperature, guidance.top_k, rngs[i]
            )
        if t < length - 1:
            for decoder in decoders:
                decoder.step(generated[:, t])

    return [TokenSequence(tokens=row, style_id=-1, song_id=-1) for row in generated]


def sample_sequence(
    params: ModelParams,
    text_cond: Optional[np.ndarray],
    style_cond: Optional[np.ndarray],
    guidance: GuidanceSpec,
    length: int,
    rng: Optional[np.random.Generator],
) -> TokenSequence:
    """Generate one sequence; see sample_batch."""
    condition = Condition(text=text_cond, style=style_cond)
    return sample_batch(params, [condition], guidance, length, [rng])[0]
