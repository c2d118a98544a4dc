from .cond_model import (
    ConditionCase,
    IncrementalDecoder,
    forward_logits,
    init_params,
    loss_and_grads,
    masked_cross_entropy,
    params_hash,
    training_step,
)
from .frozen_features import extract_frames, make_projection, sequence_embedding
from .guidance_sampler import (
    Condition,
    double_cfg,
    sample_batch,
    sample_sequence,
    simple_cfg,
)
from .knn_metrics import (
    bigram_kl,
    build_store,
    frechet_distance,
    gaussian_stats,
    knn_common,
    knn_overfit,
    nearest_songs,
    text_adherence,
)
from .rvq import dequantize, ema_update, init_codebooks_kmeans, quantize
from .style_conditioner import encode_style, sample_excerpt
from .synthetic_corpus import (
    build_corpus,
    classify_style,
    sample_song,
    sample_style_params,
    style_log_likelihood,
)
from .textual_inversion import BypassObjective, FrozenModelObjective, invert

__all__ = [
    "ConditionCase",
    "IncrementalDecoder",
    "forward_logits",
    "init_params",
    "loss_and_grads",
    "masked_cross_entropy",
    "params_hash",
    "training_step",
    "extract_frames",
    "make_projection",
    "sequence_embedding",
    "Condition",
    "double_cfg",
    "sample_batch",
    "sample_sequence",
    "simple_cfg",
    "bigram_kl",
    "build_store",
    "frechet_distance",
    "gaussian_stats",
    "knn_common",
    "knn_overfit",
    "nearest_songs",
    "text_adherence",
    "dequantize",
    "ema_update",
    "init_codebooks_kmeans",
    "quantize",
    "encode_style",
    "sample_excerpt",
    "build_corpus",
    "classify_style",
    "sample_song",
    "sample_style_params",
    "style_log_likelihood",
    "BypassObjective",
    "FrozenModelObjective",
    "invert",
]
