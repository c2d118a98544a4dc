"""Seeded Markov-chain songs and the exact style-likelihood oracle."""

import logging
from typing import List, Sequence

import numpy as np

from ..config.settings import CorpusSettings
from ..models.corpus_models import Corpus, StyleParams, TokenSequence
from ..utils.errors import ParameterError
from ..utils.helpers import Stream, rng_for
from ..utils.validation import require_positive, require_range, require_tokens

logger = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")


def sample_style_params(
    seed: int,
    style_id: int,
    vocab_size: int,
    alpha_pi: float,
    alpha_trans: float,
) -> StyleParams:
    """
    Draw the initial distribution and transition matrix of one style.

    Args:
        seed: Corpus seed
        style_id: Style index; (seed, style_id) fully determines the result
        vocab_size: Vocabulary size V (>= 2)
        alpha_pi: Dirichlet concentration of pi
        alpha_trans: Dirichlet concentration of every transition row

    Returns:
        StyleParams: Validated stochastic parameters
    """
    require_range("vocab_size", vocab_size, low=2)
    require_positive("alpha_pi", alpha_pi)
    require_positive("alpha_trans", alpha_trans)

    rng = rng_for(seed, Stream.CORPUS, style_id)
    pi = rng.dirichlet(np.full(vocab_size, float(alpha_pi)))
    trans = rng.dirichlet(np.full(vocab_size, float(alpha_trans)), size=vocab_size)

    # dirichlet draws are normalized up to rounding
    pi = pi / pi.sum()
    trans = trans / trans.sum(axis=1, keepdims=True)
    return StyleParams(style_id=style_id, pi=pi, trans=trans)


def _cdf(probabilities: np.ndarray) -> np.ndarray:
    cumulative = np.cumsum(probabilities, axis=-1)
    return cumulative / cumulative[..., -1:]


def sample_song(
    style: StyleParams,
    length: int,
    rng: np.random.Generator,
    song_id: int = 0,
) -> TokenSequence:
    """
    Sample one song from a style's Markov chain.

    Args:
        style: Generator parameters
        length: Number of tokens (>= 2)
        rng: Random source; the song is a deterministic function of its state
        song_id: Id stored on the returned sequence

    Returns:
        TokenSequence: tokens[0] ~ pi, tokens[t+1] ~ trans[tokens[t]]
    """
    if length < 2:
        raise ParameterError(f"song length must be >= 2, got {length}")

    uniforms = rng.random(length)
    pi_cdf = _cdf(style.pi)
    trans_cdf = _cdf(style.trans)

    tokens = np.empty(length, dtype=np.int64)
    tokens[0] = np.searchsorted(pi_cdf, uniforms[0], side="right")
    for t in range(1, length):
        tokens[t] = np.searchsorted(trans_cdf[tokens[t - 1]], uniforms[t], side="right")
    return TokenSequence(tokens=tokens, style_id=style.style_id, song_id=song_id)


def build_corpus(config: CorpusSettings, seed: int) -> Corpus:
    """
    Generate styles and all splits of the synthetic corpus.

    Songs are numbered in (split, style, index) order; each song draws from
    its own rng stream keyed by song id.
    """
    if config.n_styles < 1:
        raise ParameterError("corpus needs at least one style")
    if config.n_train + config.n_valid + config.n_test < 1:
        raise ParameterError("corpus needs at least one song per style")

    styles = [
        sample_style_params(
            seed, s, config.vocab_size, config.alpha_pi, config.alpha_trans
        )
        for s in range(config.n_styles)
    ]

    counts = {"train": config.n_train, "valid": config.n_valid, "test": config.n_test}
    splits = {name: [] for name in SPLITS}
    song_id = 0
    for name in SPLITS:
        for style in styles:
            for _ in range(counts[name]):
                rng = rng_for(seed, Stream.SONG, song_id)
                song = sample_song(style, config.song_length, rng, song_id=song_id)
                splits[name].append(song)
                song_id += 1

    logger.info(
        f"Built corpus: {config.n_styles} styles, "
        + ", ".join(f"{len(splits[n])} {n}" for n in SPLITS)
    )
    return Corpus(styles=styles, splits=splits, vocab_size=config.vocab_size, seed=seed)


def _smoothed_logs(style: StyleParams, smoothing_eps: float):
    pi = style.pi + smoothing_eps
    trans = style.trans + smoothing_eps
    with np.errstate(divide="ignore"):
        log_pi = np.log(pi / pi.sum())
        log_trans = np.log(trans / trans.sum(axis=1, keepdims=True))
    return log_pi, log_trans


def style_log_likelihood(
    seq: TokenSequence, style: StyleParams, smoothing_eps: float = 1e-9
) -> float:
    """
    Exact log-probability of a sequence under a style's smoothed chain.

    Args:
        seq: Sequence to score
        style: Style parameters
        smoothing_eps: Added to pi and every trans row before renormalizing

    Returns:
        float: log pi'[t0] + sum_t log trans'[t_t, t_{t+1}]
    """
    tokens = require_tokens("seq.tokens", seq.tokens, style.vocab_size)
    log_pi, log_trans = _smoothed_logs(style, smoothing_eps)
    return float(log_pi[tokens[0]] + log_trans[tokens[:-1], tokens[1:]].sum())


def style_scores(
    seq: TokenSequence, styles: Sequence[StyleParams], smoothing_eps: float = 1e-9
) -> np.ndarray:
    """Log-likelihood of one sequence under every style."""
    return np.array(
        [style_log_likelihood(seq, style, smoothing_eps) for style in styles]
    )


def classify_style(
    seq: TokenSequence, styles: Sequence[StyleParams], smoothing_eps: float = 1e-9
) -> int:
    """Oracle style id: argmax of the log-likelihoods, lowest id on ties."""
    return int(np.argmax(style_scores(seq, styles, smoothing_eps)))


def classify_many(
    seqs: Sequence[TokenSequence],
    styles: Sequence[StyleParams],
    smoothing_eps: float = 1e-9,
) -> List[int]:
    """Vectorized oracle classification of many sequences."""
    tables = [_smoothed_logs(style, smoothing_eps) for style in styles]
    predictions = []
    for seq in seqs:
        tokens = seq.tokens
        scores = [
            lp[tokens[0]] + lt[tokens[:-1], tokens[1:]].sum() for lp, lt in tables
        ]
        predictions.append(int(np.argmax(scores)))
    return predictions
