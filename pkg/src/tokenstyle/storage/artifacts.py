"""
Readers and writers of the persisted artifacts: checkpoint, corpus, store,
embedding and tokens.
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Sequence

import numpy as np

from ..config.settings import ConditionerSettings, ModelSettings
from ..models.checkpoint_models import AdamState, Checkpoint, ModelParams
from ..models.conditioning_models import (
    FrozenProjection,
    InversionResult,
    RvqCodebooks,
)
from ..models.corpus_models import Corpus, StyleParams, TokenSequence
from ..models.metric_models import EmbeddingStore
from ..utils.errors import CompatibilityError, CorruptionError, ParameterError
from ..utils.helpers import hash_arrays
from .container import (
    ArraySpec,
    Container,
    expect_shape,
    read_container,
    write_container,
)

logger = logging.getLogger(__name__)

CHECKPOINT = "checkpoint"
CORPUS = "corpus"
STORE = "store"
EMBEDDING = "embedding"
TOKENS = "tokens"

_FLOAT64 = "<f8"
_FLOAT32 = "<f4"
_TOKEN = "<u2"
_INDEX = "<i8"


def save_checkpoint(ckpt: Checkpoint, path: Path) -> Path:
    """Write a checkpoint; parameters and optimizer moments are stored as float64."""
    params = ckpt.params
    names = sorted(params.arrays)
    arrays: List[ArraySpec] = [
        ArraySpec(f"params/{n}", _FLOAT64, params.arrays[n]) for n in names
    ]
    moments = ckpt.optimizer
    moment_names = sorted(moments.m)
    arrays += [ArraySpec(f"adam/m/{n}", _FLOAT64, moments.m[n]) for n in moment_names]
    arrays += [ArraySpec(f"adam/v/{n}", _FLOAT64, moments.v[n]) for n in moment_names]
    cb = ckpt.codebooks
    arrays += [
        ArraySpec("rvq/books", _FLOAT64, cb.books),
        ArraySpec("rvq/ema_size", _FLOAT64, cb.ema_size),
        ArraySpec("rvq/ema_sum", _FLOAT64, cb.ema_sum),
        ArraySpec("projection", _FLOAT64, ckpt.projection.matrix),
    ]

    meta = {
        "step": ckpt.step,
        "adam_t": ckpt.optimizer.t,
        "param_names": names,
        "moment_names": moment_names,
        "vocab_size": params.vocab_size,
        "n_styles": params.n_styles,
        "d_features": params.d_features,
        "model": params.model.model_dump(),
        "conditioner": params.conditioner.model_dump(),
        "rvq": {
            "decay": cb.decay,
            "eps_count": cb.eps_count,
            "dead_threshold": cb.dead_threshold,
            "reseed": cb.reseed,
        },
        "projection": {
            "seed": ckpt.projection.seed,
            "vocab_size": ckpt.projection.vocab_size,
            "n_buckets": ckpt.projection.n_buckets,
        },
        "config": ckpt.config,
    }
    write_container(path, CHECKPOINT, arrays, meta)
    logger.info(f"Saved checkpoint at step {ckpt.step} to {path}")
    return Path(path)


def load_checkpoint(path: Path) -> Checkpoint:
    container = read_container(path, CHECKPOINT)
    meta = container.meta
    try:
        model = ModelSettings(**meta["model"])
        conditioner = ConditionerSettings(**meta["conditioner"])
        vocab = int(meta["vocab_size"])
        n_styles = int(meta["n_styles"])
        d_f = int(meta["d_features"])
        names: Sequence[str] = meta["param_names"]
        moment_names: Sequence[str] = meta["moment_names"]
        proj_meta: Dict[str, Any] = meta["projection"]
        rvq_meta: Dict[str, Any] = meta["rvq"]
    except (KeyError, TypeError, ValueError) as e:
        raise CorruptionError(f"checkpoint metadata is incomplete: {e}") from e

    d = model.d_model
    expect_shape(container, "params/tok_emb", (vocab, d))
    expect_shape(container, "params/text_emb", (n_styles, d))
    expect_shape(container, "params/out.w", (d, vocab))
    expect_shape(container, "params/cond.in.w", (d_f, conditioner.d_encoder))
    n_rows = int(proj_meta["vocab_size"]) + int(proj_meta["n_buckets"])
    matrix = expect_shape(container, "projection", (n_rows, d_f))
    books = container.arrays.get("rvq/books")
    if books is None or books.ndim != 3:
        raise CorruptionError("checkpoint has no valid codebooks")
    expect_shape(container, "rvq/ema_size", books.shape[:2])
    expect_shape(container, "rvq/ema_sum", books.shape)

    def fetch(name: str) -> np.ndarray:
        if name not in container.arrays:
            raise CorruptionError(f"checkpoint is missing array {name}")
        return container.arrays[name]

    params = ModelParams(
        arrays={n: fetch(f"params/{n}") for n in names},
        vocab_size=vocab,
        n_styles=n_styles,
        d_features=d_f,
        model=model,
        conditioner=conditioner,
    )
    for n in moment_names:
        expect_shape(container, f"adam/m/{n}", params.arrays[n].shape)
        expect_shape(container, f"adam/v/{n}", params.arrays[n].shape)
    optimizer = AdamState(
        m={n: fetch(f"adam/m/{n}") for n in moment_names},
        v={n: fetch(f"adam/v/{n}") for n in moment_names},
        t=int(meta["adam_t"]),
    )
    codebooks = RvqCodebooks(
        books=books,
        ema_size=fetch("rvq/ema_size"),
        ema_sum=fetch("rvq/ema_sum"),
        **rvq_meta,
    )
    projection = FrozenProjection(
        matrix=matrix,
        vocab_size=int(proj_meta["vocab_size"]),
        n_buckets=int(proj_meta["n_buckets"]),
        seed=int(proj_meta["seed"]),
    )
    logger.info(f"Loaded checkpoint at step {meta['step']} from {path}")
    return Checkpoint(
        params=params,
        codebooks=codebooks,
        projection=projection,
        optimizer=optimizer,
        step=int(meta["step"]),
        config=meta.get("config", {}),
    )


def save_corpus(corpus: Corpus, path: Path) -> Path:
    """Tokens as one uint16 row per song in split order; styles go in the header."""
    if corpus.vocab_size > np.iinfo(np.uint16).max + 1:
        raise ParameterError(
            f"vocab_size={corpus.vocab_size} does not fit 16-bit tokens"
        )
    songs = corpus.songs("train", "valid", "test")
    lengths = {len(song) for song in songs}
    if len(lengths) > 1:
        raise ParameterError("corpus songs must share one length")

    meta = {
        "seed": corpus.seed,
        "vocab_size": corpus.vocab_size,
        "splits": {
            name: len(corpus.splits[name]) for name in ("train", "valid", "test")
        },
        "song_ids": [song.song_id for song in songs],
        "style_ids": [song.style_id for song in songs],
        "styles": [
            {"style_id": s.style_id, "pi": s.pi.tolist(), "trans": s.trans.tolist()}
            for s in corpus.styles
        ],
    }
    tokens = np.stack([song.tokens for song in songs]) if songs else np.zeros((0, 0))
    write_container(path, CORPUS, [ArraySpec("tokens", _TOKEN, tokens)], meta)
    logger.info(f"Saved corpus with {len(songs)} songs to {path}")
    return Path(path)


def load_corpus(path: Path) -> Corpus:
    container = read_container(path, CORPUS)
    meta = container.meta
    try:
        counts = meta["splits"]
        song_ids, style_ids = meta["song_ids"], meta["style_ids"]
        styles = [StyleParams(**entry) for entry in meta["styles"]]
    except (KeyError, TypeError, ValueError) as e:
        raise CorruptionError(f"corpus metadata is invalid: {e}") from e

    tokens = container.arrays.get("tokens")
    if tokens is None or tokens.shape[0] != len(song_ids):
        raise CorruptionError("corpus token rows do not match the song index")

    splits: Dict[str, List[TokenSequence]] = {}
    row = 0
    for name in ("train", "valid", "test"):
        splits[name] = []
        for _ in range(int(counts[name])):
            splits[name].append(
                TokenSequence(
                    tokens=tokens[row].astype(np.int64),
                    style_id=style_ids[row],
                    song_id=song_ids[row],
                )
            )
            row += 1
    return Corpus(
        styles=styles,
        splits=splits,
        vocab_size=int(meta["vocab_size"]),
        seed=int(meta["seed"]),
    )


def save_store(store: EmbeddingStore, path: Path) -> Path:
    meta = {
        "chunk_len": store.chunk_len,
        "dim": store.dim,
        "song_ids": store.song_ids.tolist(),
        "chunk_ids": store.chunk_ids.tolist(),
        "splits": store.splits,
        "projection_seed": store.projection_seed,
        "projection_hash": store.projection_hash,
    }
    write_container(path, STORE, [ArraySpec("vectors", _FLOAT32, store.vectors)], meta)
    logger.info(f"Saved embedding store with {len(store)} chunks to {path}")
    return Path(path)


def load_store(path: Path) -> EmbeddingStore:
    container = read_container(path, STORE)
    meta = container.meta
    try:
        shape = (len(meta["song_ids"]), int(meta["dim"]))
        vectors = expect_shape(container, "vectors", shape)
        return EmbeddingStore(
            song_ids=np.array(meta["song_ids"], dtype=np.int64),
            chunk_ids=np.array(meta["chunk_ids"], dtype=np.int64),
            vectors=vectors.astype(np.float64),
            chunk_len=int(meta["chunk_len"]),
            splits=list(meta["splits"]),
            projection_seed=int(meta["projection_seed"]),
            projection_hash=str(meta["projection_hash"]),
        )
    except (KeyError, TypeError) as e:
        raise CorruptionError(f"store metadata is invalid: {e}") from e


def save_embedding(result: InversionResult, path: Path) -> Path:
    meta = {
        "song_id": result.song_id,
        "loss_trace": [float(v) for v in result.loss_trace],
    }
    write_container(path, EMBEDDING, [ArraySpec("c", _FLOAT32, result.c)], meta)
    logger.info(f"Saved inverted embedding ({result.c.shape[0]} vectors) to {path}")
    return Path(path)


def load_embedding(path: Path) -> InversionResult:
    container = read_container(path, EMBEDDING)
    c = container.arrays.get("c")
    if c is None or c.ndim != 2:
        raise CorruptionError("embedding file has no 2-D array c")
    return InversionResult(
        c=c.astype(np.float64),
        loss_trace=list(container.meta.get("loss_trace", [])),
        song_id=int(container.meta.get("song_id", -1)),
    )


def save_tokens(
    sequences: Sequence[TokenSequence], path: Path, meta: Dict[str, Any]
) -> Path:
    """Generated sequences in the corpus token layout."""
    rows = np.stack([seq.tokens for seq in sequences])
    write_container(path, TOKENS, [ArraySpec("tokens", _TOKEN, rows)], meta)
    return Path(path)


def load_tokens(path: Path) -> Container:
    container = read_container(path, TOKENS)
    container.arrays["tokens"] = container.arrays["tokens"].astype(np.int64)
    return container


def check_compatible(store: EmbeddingStore, projection: FrozenProjection) -> None:
    """A store can only be queried with embeddings from the projection that built it."""
    if store.dim != projection.dim:
        raise CompatibilityError(
            f"store dimension {store.dim} differs from "
            f"feature dimension {projection.dim}"
        )
    if store.projection_seed != projection.seed:
        raise CompatibilityError(
            f"store was built with projection seed {store.projection_seed}, "
            f"checkpoint uses {projection.seed}"
        )
    expected = hash_arrays({"projection": projection.matrix})
    if store.projection_hash and store.projection_hash != expected:
        raise CompatibilityError("store and checkpoint projections differ")
