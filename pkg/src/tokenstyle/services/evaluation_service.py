import logging
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from ..config.settings import RunConfig
from ..core.frozen_features import sequence_embedding
from ..core.guidance_sampler import Condition
from ..core.knn_metrics import (
    bigram_kl,
    build_store,
    frechet_distance,
    gaussian_stats,
    knn_common,
    knn_overfit,
    text_adherence,
)
from ..core.style_conditioner import encode_style
from ..core.synthetic_corpus import build_corpus
from ..core.textual_inversion import invert
from ..models.checkpoint_models import Checkpoint
from ..models.conditioning_models import FrozenProjection, GuidanceMode, GuidanceSpec
from ..models.corpus_models import Corpus, TokenSequence
from ..models.metric_models import EmbeddingStore, KnnReportRow, SweepReportRow
from ..storage.artifacts import check_compatible, load_store
from ..utils.errors import ParameterError
from ..utils.helpers import (
    Stream,
    cache_result,
    hash_arrays,
    rng_for,
    summarize,
    write_report,
)
from .generation_service import (
    generate_in_batches,
    guidance_from,
    load_run_corpus,
    load_trained,
)
from .training_service import TrainingService

logger = logging.getLogger(__name__)

STORE_SPLITS = ["valid", "test"]

ABLATION_VARIANTS: Dict[str, Dict[str, object]] = {
    "full": {},
    "no_encoder": {"conditioner.encoder": "none"},
    "small_encoder": {"conditioner.encoder": "small"},
    "no_masking": {"training.loss_masking": False},
}


class EvalSample(NamedTuple):
    """A conditioning excerpt drawn from the test split."""
    index: int
    song: TokenSequence
    start: int
    excerpt: np.ndarray


def _store_key(
    songs: Sequence[TokenSequence],
    chunk_len: int,
    projection: FrozenProjection,
    window: int,
    hop: int,
    splits: List[str],
) -> str:
    arrays = {f"song/{song.song_id}": song.tokens for song in songs}
    arrays["projection"] = projection.matrix
    extra = f"{chunk_len}:{window}:{hop}:{','.join(splits)}"
    return hash_arrays(arrays, extra=extra)


class EvaluationService:
    """KNN evaluation, beta sweep, ablation and baseline comparison."""

    def __init__(
        self,
        config: RunConfig,
        checkpoint: Optional[Checkpoint] = None,
        corpus: Optional[Corpus] = None,
        store: Optional[EmbeddingStore] = None,
    ):
        self.config = config
        self._checkpoint = checkpoint
        self._corpus = corpus
        self._store = store

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

    @property
    def reports_dir(self) -> Path:
        return self.config.output_dir / "reports"

    def store(self, store_path: Optional[Path] = None) -> EmbeddingStore:
        """
        The embedding store of the valid and test splits.

        Loaded from store_path when given, otherwise built and memoised in
        the run's disk cache. Either way it must match the checkpoint's projection.
        """
        if self._store is None:
            projection = self.checkpoint.projection
            if store_path is not None:
                self._store = load_store(Path(store_path))
            else:
                builder = cache_result(self.config.cache_dir, _store_key)(build_store)
                self._store = builder(
                    self.corpus.songs(*STORE_SPLITS),
                    self.config.metrics.chunk_len,
                    projection,
                    self.config.features.window,
                    self.config.features.hop,
                    STORE_SPLITS,
                )
            check_compatible(self._store, projection)
        return self._store

    def draw_samples(
        self, n_samples: int, stream: Stream = Stream.EVAL
    ) -> List[EvalSample]:
        """Excerpts of metrics.excerpt_len tokens from random test songs."""
        songs = self.corpus.splits["test"]
        length = self.config.metrics.excerpt_len
        if not songs:
            raise ParameterError("the corpus has no test songs")
        if length > len(songs[0]):
            raise ParameterError(
                f"excerpt_len={length} exceeds the song length {len(songs[0])}"
            )

        samples = []
        for i in range(n_samples):
            rng = rng_for(self.config.seed, stream, i)
            song = songs[int(rng.integers(len(songs)))]
            start = int(rng.integers(0, len(song) - length + 1))
            excerpt = song.tokens[start:start + length]
            samples.append(EvalSample(index=i, song=song, start=start, excerpt=excerpt))
        return samples

    def style_vectors(self, sample: EvalSample, n_streams: int) -> np.ndarray:
        ckpt = self.checkpoint
        return encode_style(
            sample.excerpt,
            ckpt.params,
            ckpt.codebooks,
            n_streams,
            ckpt.projection,
            mode="eval",
            window=self.config.features.window,
            hop=self.config.features.hop,
            source_span=(sample.start, len(sample.excerpt)),
        ).prefix.vectors

    def _embed(self, tokens: np.ndarray) -> np.ndarray:
        features = self.config.features
        return sequence_embedding(
            tokens, self.checkpoint.projection, features.window, features.hop
        )

    def _reference(self, sample: EvalSample) -> np.ndarray:
        """Embedding of gen_len real tokens of the conditioning song."""
        length = min(self.config.metrics.gen_len, len(sample.song))
        start = min(sample.start, len(sample.song) - length)
        return self._embed(sample.song.tokens[start:start + length])

    def score(
        self,
        label: str,
        samples: Sequence[EvalSample],
        generations: Sequence[TokenSequence],
        intended: Sequence[int],
        n_streams: Optional[int] = None,
        store_path: Optional[Path] = None,
    ) -> KnnReportRow:
        """All metrics of one set of generations, reduced in sample order."""
        store = self.store(store_path)
        k = self.config.metrics.k
        styles = self.corpus.styles
        eps = self.config.corpus.smoothing_eps

        common, overfit, kls, generated = [], [], [], []
        for sample, generation, style in zip(samples, generations, intended):
            e_c = self._embed(sample.excerpt)
            e_g = self._embed(generation.tokens)
            generated.append(e_g)
            common.append(knn_common(store, e_c, e_g, k))
            overfit.append(knn_overfit(store, e_c, e_g))
            kls.append(bigram_kl(generation, styles[style], eps))

        reference = np.stack([self._reference(sample) for sample in samples])
        frechet = frechet_distance(
            gaussian_stats(np.stack(generated)), gaussian_stats(reference)
        )
        return KnnReportRow(
            label=label,
            n_streams=n_streams,
            knn_common=summarize(common),
            knn_overfit=summarize(overfit),
            frechet=frechet,
            text_adherence=text_adherence(generations, intended, styles, eps),
            bigram_kl=summarize(kls),
            n_samples=len(samples),
        )

    def _generate(
        self,
        conditions: List[Condition],
        guidance: GuidanceSpec,
        rngs: List[np.random.Generator],
        prompts: Optional[np.ndarray] = None,
    ) -> List[TokenSequence]:
        metrics = self.config.metrics
        return generate_in_batches(
            self.checkpoint,
            conditions,
            guidance,
            metrics.gen_len,
            rngs,
            metrics.gen_batch,
            prompts,
        )

    def knn_rows(
        self,
        depths: Optional[Sequence[int]] = None,
        n_samples: Optional[int] = None,
        store_path: Optional[Path] = None,
    ) -> List[KnnReportRow]:
        """One report row per RVQ depth; the same excerpts condition every depth."""
        config = self.config
        depths = list(depths if depths is not None else config.metrics.stream_depths)
        if not depths:
            raise ParameterError("at least one stream depth is required")
        n_total = self.checkpoint.codebooks.n_streams
        for depth in depths:
            if not 1 <= depth <= n_total:
                raise ParameterError(f"stream depth {depth} outside [1, {n_total}]")

        samples = self.draw_samples(n_samples or config.metrics.n_samples)
        intended = [sample.song.style_id for sample in samples]
        guidance = guidance_from(config)
        self.store(store_path)

        rows = []
        quiet = not config.training.progress
        for depth in tqdm(depths, desc="eval knn", disable=quiet):
            if config.metrics.identity_injection:
                generations = [
                    TokenSequence(tokens=s.excerpt, style_id=-1, song_id=-1)
                    for s in samples
                ]
            else:
                conditions = [
                    Condition(text=None, style=self.style_vectors(s, depth))
                    for s in samples
                ]
                rngs = [
                    rng_for(config.seed, Stream.SAMPLE, depth, s.index) for s in samples
                ]
                generations = self._generate(conditions, guidance, rngs)
            row = self.score(
                f"streams={depth}", samples, generations, intended, n_streams=depth
            )
            logger.info(
                f"Depth {depth}: knn_common {row.knn_common:.4f}, "
                f"knn_overfit {row.knn_overfit:.4f}"
            )
            rows.append(row)
        return rows

    def run_eval_knn(
        self,
        depths: Optional[Sequence[int]] = None,
        n_samples: Optional[int] = None,
        store_path: Optional[Path] = None,
    ) -> pd.DataFrame:
        """Evaluate style conditioning per depth and write the `knn` report."""
        rows = self.knn_rows(depths, n_samples, store_path)
        frame = pd.DataFrame([row.model_dump() for row in rows])
        write_report(frame, self.reports_dir / "knn")
        return frame

    def _sweep_labels(self, samples: Sequence[EvalSample]) -> List[int]:
        """A text label different from each excerpt's own style."""
        n_styles = self.corpus.n_styles
        if n_styles < 2:
            raise ParameterError("the beta sweep needs at least two styles")
        labels = []
        for sample in samples:
            rng = rng_for(self.config.seed, Stream.SWEEP, sample.index, 1)
            label = int(rng.integers(n_styles - 1))
            labels.append(label + int(label >= sample.song.style_id))
        return labels

    def run_beta_sweep(
        self,
        betas: Optional[Sequence[float]] = None,
        n_samples: Optional[int] = None,
        store_path: Optional[Path] = None,
    ) -> pd.DataFrame:
        """
        Mismatched text and style conditioning under double guidance.

        Every row uses the same excerpts, labels and sampling seeds, so the
        beta = 1 row reproduces the simple-guidance row exactly.
        """
        config = self.config
        betas = list(betas if betas is not None else config.metrics.sweep_betas)
        if not betas:
            raise ParameterError("at least one beta is required")
        if any(beta < 1 for beta in betas):
            raise ParameterError(f"betas must be >= 1, got {betas}")

        samples = self.draw_samples(
            n_samples or config.metrics.n_samples, Stream.SWEEP
        )
        labels = self._sweep_labels(samples)
        depth = config.metrics.sweep_streams
        text_table = self.checkpoint.params["text_emb"]
        conditions = [
            Condition(text=text_table[label], style=self.style_vectors(sample, depth))
            for sample, label in zip(samples, labels)
        ]

        base = guidance_from(config)
        settings = []
        if config.metrics.sweep_baselines:
            settings.append(
                ("none", base.model_copy(update={"mode": GuidanceMode.NONE}))
            )
            settings.append(
                ("simple", base.model_copy(update={"mode": GuidanceMode.SIMPLE}))
            )
        for beta in betas:
            update = {"mode": GuidanceMode.DOUBLE, "beta": float(beta)}
            settings.append(("double", base.model_copy(update=update)))

        rows = []
        quiet = not config.training.progress
        for name, guidance in tqdm(settings, desc="beta sweep", disable=quiet):
            rngs = [rng_for(config.seed, Stream.SWEEP_SAMPLE, s.index) for s in samples]
            generations = self._generate(conditions, guidance, rngs)
            scored = self.score(
                name,
                samples,
                generations,
                labels,
                n_streams=depth,
                store_path=store_path,
            )
            rows.append(
                SweepReportRow(
                    guidance=name,
                    alpha=None if name == "none" else guidance.alpha,
                    beta=guidance.beta if name == "double" else None,
                    text_adherence=scored.text_adherence,
                    knn_common=scored.knn_common,
                    frechet=scored.frechet,
                    n_samples=scored.n_samples,
                )
            )
            logger.info(
                f"{name} beta={rows[-1].beta}: adherence {scored.text_adherence:.4f}"
            )

        frame = pd.DataFrame([row.model_dump() for row in rows])
        write_report(frame, self.reports_dir / "beta_sweep")
        return frame

    def run_ablation(
        self,
        seeds: Optional[Sequence[int]] = None,
        variants: Optional[Sequence[str]] = None,
    ) -> pd.DataFrame:
        """
        Train and evaluate every variant under shared seeds.

        Each (variant, seed) run lives in its own directory below
        `<output_dir>/ablation`, so interrupted ablations resume.
        """
        config = self.config
        seeds = list(seeds if seeds is not None else [config.seed])
        variants = list(variants if variants is not None else ABLATION_VARIANTS)
        unknown = [v for v in variants if v not in ABLATION_VARIANTS]
        if unknown:
            raise ParameterError(f"unknown ablation variants {unknown}")
        if not seeds:
            raise ParameterError("at least one seed is required")

        depth = config.metrics.ablation_streams
        corpora: Dict[int, Corpus] = {}
        rows = []
        for name in variants:
            per_seed = []
            for seed in seeds:
                run_dir = config.output_dir / "ablation" / name / f"seed_{seed}"
                overrides = {"seed": seed, "output_dir": str(run_dir)}
                variant_config = config.with_overrides(
                    {**ABLATION_VARIANTS[name], **overrides}
                )
                if seed not in corpora:
                    corpora[seed] = build_corpus(variant_config.corpus, seed)
                logger.info(f"Ablation {name}, seed {seed}")
                TrainingService(variant_config).run_train(corpus=corpora[seed])
                evaluator = EvaluationService(variant_config, corpus=corpora[seed])
                per_seed.append(evaluator.knn_rows(depths=[depth])[0])
            rows.append(
                KnnReportRow(
                    label=name,
                    n_streams=depth,
                    knn_common=summarize(r.knn_common for r in per_seed),
                    knn_overfit=summarize(r.knn_overfit for r in per_seed),
                    frechet=summarize(r.frechet for r in per_seed),
                    text_adherence=summarize(r.text_adherence for r in per_seed),
                    bigram_kl=summarize(r.bigram_kl for r in per_seed),
                    n_samples=sum(r.n_samples for r in per_seed),
                )
            )

        frame = pd.DataFrame([row.model_dump() for row in rows])
        write_report(frame, self.reports_dir / "ablation")
        return frame

    def run_compare(
        self, n_samples: Optional[int] = None, store_path: Optional[Path] = None
    ) -> pd.DataFrame:
        """Continuation baseline vs style-conditioned model vs textual inversion."""
        config = self.config
        samples = self.draw_samples(n_samples or config.metrics.compare_samples)
        intended = [sample.song.style_id for sample in samples]
        simple = guidance_from(config, mode=GuidanceMode.SIMPLE)

        def rngs() -> List[np.random.Generator]:
            return [
                rng_for(config.seed, Stream.COMPARE_SAMPLE, s.index) for s in samples
            ]

        rows = []
        prompts = np.stack([sample.excerpt for sample in samples])
        continuation = self._generate(
            [Condition(text=None, style=None)] * len(samples),
            simple.model_copy(update={"mode": GuidanceMode.NONE}),
            rngs(),
            prompts=prompts,
        )
        rows.append(
            self.score(
                "continuation", samples, continuation, intended, store_path=store_path
            )
        )

        depth = config.metrics.compare_streams
        styled = self._generate(
            [Condition(text=None, style=self.style_vectors(s, depth)) for s in samples],
            simple,
            rngs(),
        )
        rows.append(
            self.score(
                "style_model",
                samples,
                styled,
                intended,
                n_streams=depth,
                store_path=store_path,
            )
        )

        embeddings: Dict[int, np.ndarray] = {}
        quiet = not config.training.progress
        for sample in tqdm(samples, desc="invert", disable=quiet):
            song = sample.song
            if song.song_id not in embeddings:
                result = invert(
                    self.checkpoint.params, song, config.inversion, seed=config.seed
                )
                embeddings[song.song_id] = result.c
        inverted = self._generate(
            [Condition(text=embeddings[s.song.song_id], style=None) for s in samples],
            simple,
            rngs(),
        )
        rows.append(
            self.score("inversion", samples, inverted, intended, store_path=store_path)
        )

        frame = pd.DataFrame([row.model_dump() for row in rows])
        write_report(frame, self.reports_dir / "compare")
        return frame
