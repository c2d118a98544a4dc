"""
Textual inversion: learn prefix vectors c through a frozen model.

Only c is updated; the model's arrays are read but never written.
"""

import logging
from typing import Optional, Protocol, Tuple

import numpy as np
from tqdm import tqdm

from ..config.settings import InversionSettings
from ..models.checkpoint_models import ModelParams
from ..models.conditioning_models import InversionResult
from ..models.corpus_models import TokenSequence
from ..utils.errors import ParameterError
from ..utils.helpers import Stream, rng_for
from ..utils.validation import require_finite
from .cond_model import decode_backward, decode_batch, masked_cross_entropy
from .optim import Adam

logger = logging.getLogger(__name__)


class InversionObjective(Protocol):
    """Loss of a batch of chunks as a function of the prefix vectors c."""

    def loss_and_grad(
        self, c: np.ndarray, chunks: np.ndarray
    ) -> Tuple[float, np.ndarray]:
        ...


class FrozenModelObjective:
    """Cross-entropy of the frozen decoder with text part c and the null style."""

    def __init__(self, params: ModelParams):
        self.params = params

    def loss_and_grad(
        self, c: np.ndarray, chunks: np.ndarray
    ) -> Tuple[float, np.ndarray]:
        null_style = self.params["null_style"][None]
        prefix = np.concatenate([c, null_style])
        prefixes = [prefix] * chunks.shape[0]
        logits, cache = decode_batch(self.params, prefixes, chunks[:, :-1])
        mask = np.ones(chunks.shape, dtype=bool)
        loss, d_logits = masked_cross_entropy(logits, chunks, mask)
        d_prefixes = decode_backward(d_logits, cache, self.params, {})
        grad = sum(d[:c.shape[0]] for d in d_prefixes)
        return loss, grad


class BypassObjective:
    """
    Degenerate model whose logits are a fixed linear map of c at every position.

    Its optimum makes softmax(c W) equal the empirical token distribution of
    the chunks, which gives a closed-form check of the optimization loop.
    """

    def __init__(self, weights: np.ndarray):
        self.weights = np.asarray(weights, dtype=np.float64)

    def loss_and_grad(
        self, c: np.ndarray, chunks: np.ndarray
    ) -> Tuple[float, np.ndarray]:
        logits = c.ravel() @ self.weights
        counts = np.bincount(chunks.ravel(), minlength=logits.shape[0])
        counts = counts.astype(np.float64)
        total = counts.sum()
        shifted = logits - logits.max()
        log_probs = shifted - np.log(np.exp(shifted).sum())
        loss = float(-(counts @ log_probs) / total)
        d_logits = np.exp(log_probs) - counts / total
        return loss, (self.weights @ d_logits).reshape(c.shape)

    def distribution(self, c: np.ndarray) -> np.ndarray:
        logits = c.ravel() @ self.weights
        probs = np.exp(logits - logits.max())
        return probs / probs.sum()


def initial_embedding(params: ModelParams, settings: InversionSettings) -> np.ndarray:
    """Mean of the class embeddings (or one of them), repeated per pseudo-token."""
    table = params["text_emb"]
    if settings.init == "mean":
        row = table.mean(axis=0)
    else:
        if not 0 <= int(settings.init) < table.shape[0]:
            raise ParameterError(
                f"init class {settings.init} outside [0, {table.shape[0]})"
            )
        row = table[int(settings.init)]
    return np.tile(row, (settings.n_pseudo_tokens, 1))


def chunk_window(
    song_length: int, settings: InversionSettings, rng: np.random.Generator
) -> Tuple[int, int]:
    """Token range chunks are drawn from: the whole song or one excerpt of it."""
    if settings.excerpt_len <= 0 or settings.excerpt_len >= song_length:
        return 0, song_length
    if settings.excerpt_len < settings.chunk_len:
        raise ParameterError(
            f"excerpt_len={settings.excerpt_len} is shorter than "
            f"chunk_len={settings.chunk_len}"
        )
    start = int(rng.integers(0, song_length - settings.excerpt_len + 1))
    return start, start + settings.excerpt_len


def invert(
    frozen_params: ModelParams,
    target_song: TokenSequence,
    settings: InversionSettings,
    seed: int = 0,
    objective: Optional[InversionObjective] = None,
    initial: Optional[np.ndarray] = None,
    progress: bool = False,
) -> InversionResult:
    """
    Optimize c on random chunks of one song.

    Args:
        frozen_params: Trained model (read only)
        target_song: Song to invert
        settings: Steps, learning rate, batch and chunk length
        seed: Run seed; chunk positions come from its inversion stream
        objective: Loss of c; defaults to the frozen decoder
        initial: Starting c (defaults to the configured initialization)
        progress: Show a tqdm bar

    Returns:
        InversionResult: final c and the loss of every step
    """
    song_length = len(target_song)
    if song_length < settings.chunk_len:
        raise ParameterError(
            f"song of {song_length} tokens is shorter than "
            f"chunk_len={settings.chunk_len}"
        )

    if objective is None:
        objective = FrozenModelObjective(frozen_params)
    if initial is None:
        initial = initial_embedding(frozen_params, settings)
    c = np.array(initial, dtype=np.float64)
    rng = rng_for(seed, Stream.INVERT, target_song.song_id)
    low, high = chunk_window(song_length, settings, rng)

    state = {"c": c}
    optimizer = Adam()
    trace = []
    offsets = np.arange(settings.chunk_len)
    for _ in tqdm(range(settings.steps), desc="invert", disable=not progress):
        starts = rng.integers(low, high - settings.chunk_len + 1, size=settings.batch)
        chunks = target_song.tokens[starts[:, None] + offsets]
        loss, grad = objective.loss_and_grad(state["c"], chunks)
        require_finite("inversion gradient", grad)
        trace.append(loss)
        optimizer.step(state, {"c": grad}, settings.lr)

    if trace:
        logger.info(
            f"Inverted song {target_song.song_id}: "
            f"loss {trace[0]:.4f} -> {trace[-1]:.4f}"
        )
    return InversionResult(c=state["c"], loss_trace=trace, song_id=target_song.song_id)
