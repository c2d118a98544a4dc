from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator


class EmbeddingStore(BaseModel):
    """Chunk-level unit embeddings of reference songs."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    song_ids: np.ndarray = Field(..., description="Song id per record")
    chunk_ids: np.ndarray = Field(..., description="Chunk index within its song")
    vectors: np.ndarray = Field(..., description="n_records x d_f unit vectors")
    chunk_len: int = Field(..., ge=2)
    splits: List[str] = Field(default_factory=list, description="Source split tags")
    projection_seed: int = Field(0, description="Seed of the projection used to embed")
    projection_hash: str = Field("", description="Hash of the projection matrix")

    @model_validator(mode="after")
    def check_records(self) -> "EmbeddingStore":
        n = self.vectors.shape[0]
        if self.song_ids.shape != (n,) or self.chunk_ids.shape != (n,):
            raise ValueError("record index arrays must match the vector count")
        if n:
            norms = np.linalg.norm(self.vectors, axis=1)
            if np.max(np.abs(norms - 1.0)) > 1e-6:
                raise ValueError("store vectors must be unit-norm")
            stride = int(self.chunk_ids.max()) + 1
            keys = self.song_ids.astype(np.int64) * stride + self.chunk_ids
            if np.unique(keys).size != n:
                raise ValueError("(song_id, chunk_id) pairs must be unique")
        return self

    def __len__(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def n_songs(self) -> int:
        return int(np.unique(self.song_ids).size)

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])


class GaussianStats(BaseModel):
    """Mean and covariance of an embedding set."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    mean: np.ndarray
    cov: np.ndarray
    count: int = Field(..., ge=0)

    @model_validator(mode="after")
    def check_symmetric(self) -> "GaussianStats":
        d = self.mean.shape[0]
        if self.cov.shape != (d, d):
            raise ValueError(
                f"cov shape {self.cov.shape} does not match mean {self.mean.shape}"
            )
        if np.max(np.abs(self.cov - self.cov.T), initial=0.0) > 1e-9:
            raise ValueError("covariance must be symmetric")
        return self


class KnnReportRow(BaseModel):
    """Metrics for one conditioning setting."""
    label: str = Field(..., description="Row label (depth, variant, beta...)")
    n_streams: Optional[int] = Field(None)
    knn_common: float
    knn_overfit: float
    frechet: float
    text_adherence: float
    bigram_kl: float
    n_samples: int


class SweepReportRow(BaseModel):
    """One guidance setting of the beta sweep."""
    guidance: str
    alpha: Optional[float] = None
    beta: Optional[float] = None
    text_adherence: float
    knn_common: float
    frechet: float
    n_samples: int
