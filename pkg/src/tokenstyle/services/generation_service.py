import logging
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from ..config.settings import RunConfig
from ..core.guidance_sampler import Condition, sample_batch
from ..core.style_conditioner import encode_style
from ..core.synthetic_corpus import style_scores
from ..models.checkpoint_models import Checkpoint
from ..models.conditioning_models import GuidanceMode, GuidanceSpec
from ..models.corpus_models import Corpus, TokenSequence
from ..storage.artifacts import (
    load_checkpoint,
    load_corpus,
    load_embedding,
    save_tokens,
)
from ..utils.errors import MissingArtifactError, ParameterError
from ..utils.helpers import Stream, rng_for

logger = logging.getLogger(__name__)


def load_trained(
    config: RunConfig, checkpoint_path: Optional[Path] = None
) -> Checkpoint:
    path = config.checkpoint_path
    if checkpoint_path is not None:
        path = Path(checkpoint_path)
    if not path.exists():
        raise MissingArtifactError(
            f"checkpoint {path} not found; run `tokenstyle train` first"
        )
    return load_checkpoint(path)


def load_run_corpus(config: RunConfig) -> Corpus:
    if not config.corpus_path.exists():
        raise MissingArtifactError(
            f"corpus file {config.corpus_path} not found; "
            "run `tokenstyle corpus gen` first"
        )
    return load_corpus(config.corpus_path)


def guidance_from(config: RunConfig, **overrides) -> GuidanceSpec:
    """GuidanceSpec from the sampler section; explicit values take precedence."""
    sampler = config.sampler
    values = {
        "mode": GuidanceMode(sampler.guidance),
        "alpha": sampler.alpha,
        "beta": sampler.beta,
        "temperature": sampler.temperature,
        "top_k": sampler.top_k,
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    return GuidanceSpec(**values)


def generate_in_batches(
    ckpt: Checkpoint,
    conditions: List[Condition],
    guidance: GuidanceSpec,
    length: int,
    rngs: List[np.random.Generator],
    batch_size: int,
    prompts: Optional[np.ndarray] = None,
) -> List[TokenSequence]:
    """sample_batch over consecutive groups of items, preserving item order."""
    sequences: List[TokenSequence] = []
    for start in range(0, len(conditions), batch_size):
        stop = start + batch_size
        sequences += sample_batch(
            ckpt.params,
            conditions[start:stop],
            guidance,
            length,
            rngs[start:stop],
            prompts=None if prompts is None else prompts[start:stop],
        )
    return sequences


class GenerationResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    sequences: List[TokenSequence]
    scores: pd.DataFrame = Field(..., description="Oracle style prediction per sample")
    output_path: Optional[Path] = None


class GenerationService:
    """Sampling from a trained checkpoint."""

    def __init__(
        self,
        config: RunConfig,
        checkpoint: Optional[Checkpoint] = None,
        corpus: Optional[Corpus] = None,
    ):
        self.config = config
        self._checkpoint = checkpoint
        self._corpus = corpus

    @property
    def checkpoint(self) -> Checkpoint:
        if self._checkpoint is None:
            self._checkpoint = load_trained(self.config)
        return self._checkpoint

    @property
    def corpus(self) -> Corpus:
        if self._corpus is None:
            self._corpus = load_run_corpus(self.config)
        return self._corpus

    def excerpt(
        self, song_id: int, start: Optional[int], length: int
    ) -> Tuple[np.ndarray, Tuple[int, int]]:
        """Tokens of an excerpt; the start defaults to the middle of the song."""
        try:
            song = self.corpus.song(song_id)
        except KeyError as e:
            raise ParameterError(f"song {song_id} is not in the corpus") from e
        if length > len(song):
            raise ParameterError(
                f"excerpt of {length} tokens is longer than song {song_id}"
            )
        if start is None:
            start = (len(song) - length) // 2
        if not 0 <= start <= len(song) - length:
            raise ParameterError(f"excerpt start {start} outside song {song_id}")
        return song.tokens[start:start + length], (start, length)

    def style_vectors(
        self, tokens: np.ndarray, span: Tuple[int, int], n_streams: int
    ) -> np.ndarray:
        ckpt = self.checkpoint
        encoded = encode_style(
            tokens,
            ckpt.params,
            ckpt.codebooks,
            n_streams,
            ckpt.projection,
            mode="eval",
            window=self.config.features.window,
            hop=self.config.features.hop,
            source_span=span,
        )
        return encoded.prefix.vectors

    def generate(
        self,
        label: Optional[int] = None,
        style_song: Optional[int] = None,
        style_start: Optional[int] = None,
        embedding_path: Optional[Path] = None,
        n_streams: Optional[int] = None,
        count: int = 1,
        mode: str = "guided",
        guidance: Optional[GuidanceSpec] = None,
        out: Optional[Path] = None,
    ) -> GenerationResult:
        """
        Generate `count` sequences.

        Args:
            label: Text class conditioning
            style_song: Song whose excerpt conditions the style (or prompts,
                in continuation mode)
            style_start: Excerpt start within the style song
            embedding_path: Inverted embedding used as the text part instead
                of a label
            n_streams: RVQ depth of the style prefix (defaults to K)
            count: Number of samples
            mode: "guided" or "continuation"
            guidance: Guidance controls (defaults to the sampler section)
            out: Token file to write

        Returns:
            GenerationResult: sequences and oracle style scores
        """
        config = self.config
        ckpt = self.checkpoint
        guidance = guidance or guidance_from(config)
        excerpt_len = config.metrics.excerpt_len
        if count < 1:
            raise ParameterError("count must be >= 1")
        if label is not None and embedding_path is not None:
            raise ParameterError(
                "use either a text label or an inverted embedding, not both"
            )

        text = None
        if label is not None:
            if not 0 <= label < ckpt.params.n_styles:
                raise ParameterError(
                    f"label {label} outside [0, {ckpt.params.n_styles})"
                )
            text = ckpt.params["text_emb"][label]
        elif embedding_path is not None:
            text = load_embedding(embedding_path).c
            if text.shape[1] != ckpt.params.d_model:
                raise ParameterError(
                    f"embedding width {text.shape[1]} differs from "
                    f"d_model {ckpt.params.d_model}"
                )

        prompts = None
        style = None
        if mode == "continuation":
            if style_song is None:
                raise ParameterError("continuation needs a song to continue")
            tokens, _ = self.excerpt(style_song, style_start, excerpt_len)
            prompts = np.tile(tokens, (count, 1))
            guidance = guidance.model_copy(update={"mode": GuidanceMode.NONE})
            conditions = [Condition(text=None, style=None)] * count
        elif mode == "guided":
            if style_song is not None:
                tokens, span = self.excerpt(style_song, style_start, excerpt_len)
                depth = n_streams or ckpt.codebooks.n_streams
                style = self.style_vectors(tokens, span, depth)
            conditions = [Condition(text=text, style=style)] * count
        else:
            raise ParameterError(f"unknown generation mode {mode}")

        rngs = [rng_for(config.seed, Stream.SAMPLE, i) for i in range(count)]
        sequences = generate_in_batches(
            ckpt,
            conditions,
            guidance,
            config.sampler.length,
            rngs,
            config.metrics.gen_batch,
            prompts,
        )

        styles = self.corpus.styles
        rows = []
        for i, seq in enumerate(sequences):
            scores = style_scores(seq, styles, config.corpus.smoothing_eps)
            rows.append(
                {
                    "sample": i,
                    "predicted_style": int(np.argmax(scores)),
                    "log_likelihood": float(scores.max()),
                }
            )
        frame = pd.DataFrame(
            rows, columns=["sample", "predicted_style", "log_likelihood"]
        )

        if out is not None:
            meta = {
                "mode": mode,
                "guidance": guidance.mode.value,
                "alpha": guidance.alpha,
                "beta": guidance.beta,
                "label": label,
                "style_song": style_song,
                "seed": config.seed,
            }
            save_tokens(sequences, Path(out), meta)
            logger.info(f"Wrote {count} generated sequences to {out}")
        return GenerationResult(sequences=sequences, scores=frame, output_path=out)
