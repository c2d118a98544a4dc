from .conditioning_models import (
    CodeSequence,
    ConditioningPrefix,
    FrameSequence,
    FrozenProjection,
    GuidanceMode,
    GuidanceSpec,
    InversionResult,
    RvqCodebooks,
    StylePrefix,
)
from .checkpoint_models import AdamState, Checkpoint, ModelParams
from .corpus_models import Corpus, StyleParams, TokenSequence
from .metric_models import EmbeddingStore, GaussianStats, KnnReportRow, SweepReportRow

__all__ = [
    "CodeSequence", "ConditioningPrefix", "FrameSequence", "FrozenProjection",
    "GuidanceMode", "GuidanceSpec", "InversionResult", "RvqCodebooks", "StylePrefix",
    "AdamState", "Checkpoint", "ModelParams",
    "Corpus", "StyleParams", "TokenSequence",
    "EmbeddingStore", "GaussianStats", "KnnReportRow", "SweepReportRow",
]
