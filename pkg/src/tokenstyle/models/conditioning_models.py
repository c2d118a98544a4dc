from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class FrozenProjection(BaseModel):
    """Fixed random projection of (unigram, hashed bigram) histograms to d_f."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    matrix: np.ndarray = Field(..., description="(V + B) x d_f standard normal entries")
    vocab_size: int = Field(..., ge=2)
    n_buckets: int = Field(..., ge=1)
    seed: int = Field(..., description="Seed the matrix was drawn from")

    @model_validator(mode="after")
    def check_shape(self) -> "FrozenProjection":
        rows = self.vocab_size + self.n_buckets
        if self.matrix.ndim != 2 or self.matrix.shape[0] != rows:
            raise ValueError(
                f"projection shape {self.matrix.shape} does not match V + B"
            )
        return self

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])


class FrameSequence(BaseModel):
    """Unit-norm feature frames of a token window sweep."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    frames: np.ndarray = Field(..., description="n_frames x d_f")
    window: int = Field(..., ge=2)
    hop: int = Field(..., ge=1)

    def __len__(self) -> int:
        return int(self.frames.shape[0])


class RvqCodebooks(BaseModel):
    """K ordered codebooks with their EMA statistics."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    books: np.ndarray = Field(..., description="K x N x d entries")
    ema_size: np.ndarray = Field(..., description="K x N decayed assignment counts")
    ema_sum: np.ndarray = Field(..., description="K x N x d decayed assignment sums")
    decay: float = Field(0.99, ge=0, le=1)
    eps_count: float = Field(1e-5, gt=0)
    dead_threshold: float = Field(1e-3, ge=0)
    reseed: bool = Field(True)

    @model_validator(mode="after")
    def check_shapes(self) -> "RvqCodebooks":
        if self.books.ndim != 3:
            raise ValueError(f"books must be K x N x d, got {self.books.shape}")
        shape = self.books.shape
        if self.ema_sum.shape != shape or self.ema_size.shape != shape[:2]:
            raise ValueError("EMA statistics do not match the codebook shape")
        return self

    @property
    def n_streams(self) -> int:
        return int(self.books.shape[0])

    @property
    def codebook_size(self) -> int:
        return int(self.books.shape[1])

    @property
    def dim(self) -> int:
        return int(self.books.shape[2])

    def copy(self) -> "RvqCodebooks":
        return self.model_copy(
            update={
                "books": self.books.copy(),
                "ema_size": self.ema_size.copy(),
                "ema_sum": self.ema_sum.copy(),
            }
        )


class CodeSequence(BaseModel):
    """Per-frame code indices for the first n stages."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    codes: np.ndarray = Field(..., description="n_frames x n integer indices")
    n: int = Field(..., ge=1)

    @field_validator("codes", mode="before")
    @classmethod
    def as_index_array(cls, v):
        return np.asarray(v, dtype=np.int64)

    @model_validator(mode="after")
    def check_width(self) -> "CodeSequence":
        if self.codes.ndim != 2 or self.codes.shape[1] != self.n:
            raise ValueError(
                f"codes shape {self.codes.shape} does not match n={self.n}"
            )
        return self


class StylePrefix(BaseModel):
    """Conditioner output: a short run of d_m vectors."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    vectors: np.ndarray = Field(..., description="prefix_len x d_m")
    n_streams_used: int = Field(..., ge=1)
    source_span: Tuple[int, int] = Field(..., description="(start, length) in tokens")

    def __len__(self) -> int:
        return int(self.vectors.shape[0])


class ConditioningPrefix(BaseModel):
    """Text part followed by style part, prepended to the decoder input."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    text_part: np.ndarray = Field(..., description="n_text x d_m")
    style_part: np.ndarray = Field(..., description="n_style x d_m")

    @field_validator("text_part", "style_part", mode="before")
    @classmethod
    def as_matrix(cls, v):
        return np.atleast_2d(np.asarray(v, dtype=np.float64))

    @model_validator(mode="after")
    def check_dims(self) -> "ConditioningPrefix":
        if self.text_part.shape[1] != self.style_part.shape[1]:
            raise ValueError("text and style parts have different widths")
        return self

    def vectors(self) -> np.ndarray:
        return np.concatenate([self.text_part, self.style_part], axis=0)

    def __len__(self) -> int:
        return int(self.text_part.shape[0] + self.style_part.shape[0])


class GuidanceMode(str, Enum):
    """Logit combination used at each sampling step."""
    NONE = "none"
    SIMPLE = "simple"
    DOUBLE = "double"


class GuidanceSpec(BaseModel):
    """Guidance scales and sampling controls."""
    model_config = ConfigDict(frozen=True)

    mode: GuidanceMode = Field(GuidanceMode.SIMPLE)
    alpha: float = Field(3.0, ge=1)
    beta: Optional[float] = Field(3.0, ge=1)
    temperature: float = Field(1.0, gt=0)
    top_k: int = Field(0, ge=0)

    @model_validator(mode="after")
    def check_double(self) -> "GuidanceSpec":
        if self.mode == GuidanceMode.DOUBLE and self.beta is None:
            raise ValueError("double guidance needs beta")
        return self


class InversionResult(BaseModel):
    """Learned pseudo-token embedding and its optimization trace."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    c: np.ndarray = Field(..., description="n_pseudo_tokens x d_m")
    loss_trace: List[float] = Field(default_factory=list)
    song_id: int = Field(-1)
