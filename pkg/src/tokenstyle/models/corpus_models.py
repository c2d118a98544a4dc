from typing import Dict, List

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class StyleParams(BaseModel):
    """Hidden generator of one style: initial distribution and Markov transitions."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    style_id: int = Field(..., ge=0, description="Style index")
    pi: np.ndarray = Field(..., description="Initial distribution over V tokens")
    trans: np.ndarray = Field(..., description="Row-stochastic V x V transition matrix")

    @field_validator("pi", "trans", mode="before")
    @classmethod
    def as_float_array(cls, v):
        return np.asarray(v, dtype=np.float64)

    @model_validator(mode="after")
    def check_stochastic(self) -> "StyleParams":
        v = self.pi.shape[0]
        if self.pi.ndim != 1 or self.trans.shape != (v, v):
            raise ValueError(
                f"pi {self.pi.shape} and trans {self.trans.shape} disagree"
            )
        if self.pi.min() < 0 or self.trans.min() < 0:
            raise ValueError("probabilities must be non-negative")
        if abs(self.pi.sum() - 1.0) > 1e-9:
            raise ValueError(f"pi sums to {self.pi.sum()}")
        if np.max(np.abs(self.trans.sum(axis=1) - 1.0)) > 1e-9:
            raise ValueError("trans rows must sum to 1")
        return self

    @property
    def vocab_size(self) -> int:
        return int(self.pi.shape[0])


class TokenSequence(BaseModel):
    """A synthetic song: tokens plus its ground-truth style."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    tokens: np.ndarray = Field(..., description="Token ids in [0, V)")
    style_id: int = Field(..., description="Ground-truth style, or -1 when unknown")
    song_id: int = Field(..., description="Unique id within the corpus")

    @field_validator("tokens", mode="before")
    @classmethod
    def as_int_array(cls, v):
        array = np.asarray(v, dtype=np.int64)
        if array.ndim != 1 or array.size < 2:
            raise ValueError(f"a song needs at least 2 tokens, got shape {array.shape}")
        if array.min() < 0:
            raise ValueError("tokens must be non-negative")
        return array

    def __len__(self) -> int:
        return int(self.tokens.shape[0])


class Corpus(BaseModel):
    """Styles plus train/valid/test splits of songs."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    styles: List[StyleParams] = Field(
        ..., description="Style generators, indexed by style_id"
    )
    splits: Dict[str, List[TokenSequence]] = Field(
        ..., description="'train', 'valid' and 'test' songs"
    )
    vocab_size: int = Field(..., ge=2, description="Vocabulary size V")
    seed: int = Field(..., description="Seed the corpus was generated from")

    @model_validator(mode="after")
    def check_consistency(self) -> "Corpus":
        seen = set()
        for name in ("train", "valid", "test"):
            if name not in self.splits:
                raise ValueError(f"missing split '{name}'")
            for song in self.splits[name]:
                if song.song_id in seen:
                    raise ValueError(f"duplicate song id {song.song_id}")
                seen.add(song.song_id)
                if not 0 <= song.style_id < len(self.styles):
                    raise ValueError(
                        f"song {song.song_id} has unknown style {song.style_id}"
                    )
                if song.tokens.max() >= self.vocab_size:
                    raise ValueError(
                        f"song {song.song_id} has tokens outside the vocabulary"
                    )
        return self

    @property
    def n_styles(self) -> int:
        return len(self.styles)

    def songs(self, *names: str) -> List[TokenSequence]:
        """Concatenate the named splits in the given order."""
        return [song for name in names for song in self.splits[name]]

    def song(self, song_id: int) -> TokenSequence:
        for song in self.songs("train", "valid", "test"):
            if song.song_id == song_id:
                return song
        raise KeyError(f"song {song_id} is not in the corpus")
