from typing import Any, Dict

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..config.settings import ConditionerSettings, ModelSettings
from .conditioning_models import FrozenProjection, RvqCodebooks

REQUIRED_ARRAYS = (
    "tok_emb",
    "pos_emb",
    "text_emb",
    "null_text",
    "null_style",
    "out.w",
    "out.b",
)


class ModelParams(BaseModel):
    """Trainable arrays of the decoder and style conditioner, keyed by dotted names."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    arrays: Dict[str, np.ndarray] = Field(..., description="name -> float64 array")
    vocab_size: int = Field(..., ge=2)
    n_styles: int = Field(..., ge=1)
    d_features: int = Field(..., ge=1)
    model: ModelSettings = Field(default_factory=ModelSettings)
    conditioner: ConditionerSettings = Field(default_factory=ConditionerSettings)

    @model_validator(mode="after")
    def check_required(self) -> "ModelParams":
        for name in REQUIRED_ARRAYS:
            if name not in self.arrays:
                raise ValueError(f"missing parameter {name}")
        return self

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    @property
    def d_model(self) -> int:
        return int(self.arrays["tok_emb"].shape[1])

    def copy(self) -> "ModelParams":
        arrays = {k: v.copy() for k, v in self.arrays.items()}
        return self.model_copy(update={"arrays": arrays})


class AdamState(BaseModel):
    """First and second moments plus the step counter of Adam."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    m: Dict[str, np.ndarray] = Field(default_factory=dict)
    v: Dict[str, np.ndarray] = Field(default_factory=dict)
    t: int = Field(0, ge=0)

    def copy(self) -> "AdamState":
        return AdamState(
            m={k: a.copy() for k, a in self.m.items()},
            v={k: a.copy() for k, a in self.v.items()},
            t=self.t,
        )


class Checkpoint(BaseModel):
    """Everything needed to resume training or run inference."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    params: ModelParams
    codebooks: RvqCodebooks
    projection: FrozenProjection
    optimizer: AdamState = Field(default_factory=AdamState)
    step: int = Field(0, ge=0, description="Completed training steps")
    config: Dict[str, Any] = Field(
        default_factory=dict, description="Config snapshot of the run"
    )
