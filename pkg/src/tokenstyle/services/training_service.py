import logging
from collections import Counter
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from tqdm import tqdm

from ..config.settings import RunConfig
from ..core.cond_model import init_params, training_step
from ..core.frozen_features import make_projection
from ..core.optim import Adam
from ..core.rvq import init_codebooks_kmeans
from ..core.style_conditioner import encoder_outputs, sample_excerpt
from ..core.synthetic_corpus import build_corpus
from ..models.checkpoint_models import AdamState, Checkpoint
from ..models.corpus_models import Corpus
from ..storage.artifacts import (
    load_checkpoint,
    load_corpus,
    save_checkpoint,
    save_corpus,
)
from ..utils.errors import (
    CompatibilityError,
    MissingArtifactError,
    NumericError,
    ParameterError,
)
from ..utils.helpers import Stream, rng_for

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ["step", "loss", "cross_entropy", "penalty", "grad_norm", "lr"]
# sections that must match between a checkpoint and the config resuming it
_MODEL_SECTIONS = ("corpus", "features", "rvq", "conditioner", "model")


class TrainingResult(BaseModel):
    """Outcome of a training run."""
    checkpoint_path: Path
    loss_log_path: Path
    start_step: int = Field(..., description="Step the run resumed from")
    steps: int = Field(..., description="Total completed steps")
    final_loss: Optional[float] = None
    case_counts: Dict[str, int] = Field(default_factory=dict)
    depth_counts: Dict[int, int] = Field(default_factory=dict)


class TrainingService:
    """Corpus generation, initialization and the training loop of one run directory."""

    def __init__(self, config: RunConfig):
        self.config = config

    @property
    def loss_log_path(self) -> Path:
        return self.config.output_dir / "loss_log.csv"

    def generate_corpus(self) -> Corpus:
        """Build the corpus for the configured seed and save it in the run directory."""
        corpus = build_corpus(self.config.corpus, self.config.seed)
        save_corpus(corpus, self.config.corpus_path)
        return corpus

    def load_corpus(self) -> Corpus:
        path = self.config.corpus_path
        if not path.exists():
            raise MissingArtifactError(
                f"corpus file {path} not found; run `tokenstyle corpus gen` first"
            )
        return load_corpus(path)

    def initialize(self, corpus: Corpus) -> Checkpoint:
        """
        Fresh parameters, frozen projection and k-means codebooks.

        The codebooks are fitted on encoder outputs of random training
        excerpts under the initial parameters.
        """
        config = self.config
        if not corpus.splits["train"]:
            raise ParameterError("the corpus has no training songs")
        features = config.features
        projection = make_projection(
            config.seed, corpus.vocab_size, features.n_buckets, features.dim
        )
        params = init_params(
            corpus.vocab_size,
            corpus.n_styles,
            config.features.dim,
            config.model,
            config.conditioner,
            config.seed,
        )

        conditioner = config.conditioner
        rng = rng_for(config.seed, Stream.INIT, 1)
        songs = corpus.splits["train"]
        samples = []
        for _ in range(config.rvq.kmeans_songs):
            song = songs[int(rng.integers(len(songs)))]
            excerpt, _ = sample_excerpt(
                song, rng, conditioner.min_excerpt, conditioner.max_excerpt
            )
            samples.append(
                encoder_outputs(
                    excerpt, params, projection, features.window, features.hop
                )
            )
        codebooks = init_codebooks_kmeans(
            np.concatenate(samples),
            config.rvq.n_streams,
            config.rvq.codebook_size,
            config.seed,
            iters=config.rvq.kmeans_iters,
            decay=config.rvq.decay,
            eps_count=config.rvq.eps_count,
            dead_threshold=config.rvq.dead_threshold,
            reseed=config.rvq.reseed,
        )
        return Checkpoint(
            params=params,
            codebooks=codebooks,
            projection=projection,
            optimizer=AdamState(),
            step=0,
            config=config.snapshot(),
        )

    def _check_resumable(self, ckpt: Checkpoint) -> None:
        current = self.config.snapshot()
        for section in _MODEL_SECTIONS:
            if ckpt.config.get(section) != current[section]:
                raise CompatibilityError(
                    f"checkpoint was trained with different '{section}' settings"
                )
        if ckpt.config.get("seed") != current["seed"]:
            raise CompatibilityError(
                f"checkpoint seed {ckpt.config.get('seed')} "
                f"differs from {current['seed']}"
            )

    def _previous_log(self, start: int) -> List[Dict[str, float]]:
        if start == 0 or not self.loss_log_path.exists():
            return []
        frame = pd.read_csv(self.loss_log_path)
        return frame[frame["step"] < start].to_dict("records")

    def _write_log(self, rows: List[Dict[str, float]]) -> None:
        frame = pd.DataFrame(rows, columns=LOSS_COLUMNS)
        frame["step"] = frame["step"].astype(np.int64)
        self.loss_log_path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(
            self.loss_log_path, index=False, float_format="%.17g", lineterminator="\n"
        )

    def run_train(
        self, corpus: Optional[Corpus] = None, resume: bool = True
    ) -> TrainingResult:
        """
        Train to `training.steps`, resuming from an existing checkpoint when allowed.

        Args:
            corpus: Corpus to train on (defaults to the run's corpus file)
            resume: Continue from the run's checkpoint if one exists

        Returns:
            TrainingResult: paths and summary statistics
        """
        config = self.config
        corpus = corpus if corpus is not None else self.load_corpus()

        path = config.checkpoint_path
        if resume and path.exists():
            ckpt = load_checkpoint(path)
            self._check_resumable(ckpt)
            logger.info(f"Resuming from step {ckpt.step}")
        else:
            ckpt = self.initialize(corpus)

        start = ckpt.step
        if start > config.training.steps:
            raise ParameterError(
                f"checkpoint is at step {start}, "
                f"beyond training.steps={config.training.steps}"
            )

        params, codebooks = ckpt.params, ckpt.codebooks
        training = config.training
        optimizer = Adam(
            training.beta1, training.beta2, training.adam_eps, state=ckpt.optimizer
        )
        songs = corpus.splits["train"]
        rows = self._previous_log(start)
        cases: Counter = Counter()
        depths: Counter = Counter()

        def save(step: int) -> None:
            snapshot = Checkpoint(
                params=params,
                codebooks=codebooks,
                projection=ckpt.projection,
                optimizer=optimizer.state,
                step=step,
                config=config.snapshot(),
            )
            save_checkpoint(snapshot, path)
            self._write_log(rows)

        quiet = not training.progress
        for step in tqdm(range(start, training.steps), desc="train", disable=quiet):
            rng = rng_for(config.seed, Stream.TRAIN, step)
            stats, codebooks = training_step(
                params, codebooks, optimizer, songs, rng, ckpt.projection, config
            )
            if not np.isfinite(stats.loss):
                logger.error(
                    f"Non-finite loss at step {step}: "
                    f"ce={stats.cross_entropy}, penalty={stats.penalty}"
                )
                raise NumericError(
                    f"loss became {stats.loss} at step {step} "
                    f"(cross-entropy {stats.cross_entropy}, "
                    f"commitment {stats.penalty}, grad norm {stats.grad_norm}); "
                    "lower training.lr"
                )
            rows.append(
                {
                    "step": step,
                    "loss": stats.loss,
                    "cross_entropy": stats.cross_entropy,
                    "penalty": stats.penalty,
                    "grad_norm": stats.grad_norm,
                    "lr": stats.lr,
                }
            )
            cases.update(case.value for case in stats.cases)
            depths.update(stats.depths)

            if (step + 1) % training.log_every == 0:
                logger.info(
                    f"step {step + 1}: loss {stats.loss:.4f} "
                    f"lr {stats.lr:.2e} cases {dict(cases)}"
                )
            every = training.checkpoint_every
            if every and (step + 1) % every == 0:
                save(step + 1)

        save(config.training.steps)
        final = rows[-1]["loss"] if rows else None
        logger.info(f"Training finished at step {config.training.steps}")
        return TrainingResult(
            checkpoint_path=path,
            loss_log_path=self.loss_log_path,
            start_step=start,
            steps=config.training.steps,
            final_loss=final,
            case_counts=dict(cases),
            depth_counts=dict(depths),
        )
