import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)
from pydantic_settings import BaseSettings, SettingsConfigDict

from ..utils.errors import ConfigError

logger = logging.getLogger(__name__)


class Section(BaseModel):
    """Base for config sections: unknown keys are rejected."""
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class CorpusSettings(Section):
    """Synthetic corpus generation."""
    n_styles: int = Field(20, ge=1, description="Number of styles S")
    vocab_size: int = Field(64, ge=2, description="Vocabulary size V")
    song_length: int = Field(256, ge=2, description="Tokens per song L")
    n_train: int = Field(50, ge=0, description="Training songs per style")
    n_valid: int = Field(10, ge=0, description="Validation songs per style")
    n_test: int = Field(10, ge=0, description="Test songs per style")
    alpha_pi: float = Field(
        0.5, gt=0, description="Dirichlet concentration of initial distributions"
    )
    alpha_trans: float = Field(
        0.1, gt=0, description="Dirichlet concentration of transition rows"
    )
    smoothing_eps: float = Field(
        1e-9, ge=0, description="Smoothing for oracle log-likelihoods"
    )


class FeatureSettings(Section):
    """Frozen feature extractor."""
    window: int = Field(8, ge=2, description="Window W in tokens")
    hop: int = Field(4, ge=1, description="Hop H in tokens")
    n_buckets: int = Field(64, ge=1, description="Bigram hash buckets B")
    dim: int = Field(32, ge=1, description="Feature dimension d_f")


class RvqSettings(Section):
    """Residual vector quantizer."""
    n_streams: int = Field(6, ge=1, description="Codebook count K")
    codebook_size: int = Field(64, ge=1, description="Entries per codebook N")
    decay: float = Field(0.99, ge=0, le=1, description="EMA decay")
    commitment: float = Field(0.25, ge=0, description="Commitment weight")
    dead_threshold: float = Field(
        1e-3, ge=0, description="ema_size below which entries are re-seeded"
    )
    eps_count: float = Field(1e-5, gt=0, description="Floor on ema_size when dividing")
    reseed: bool = Field(True, description="Re-seed dead entries")
    kmeans_iters: int = Field(
        10, ge=0, description="Lloyd iterations at initialization"
    )
    kmeans_songs: int = Field(
        200, ge=1, description="Training songs drawn for k-means initialization"
    )


class ConditionerSettings(Section):
    """Style conditioner (encoder, pooling, projection)."""
    encoder: Literal["full", "small", "none"] = Field(
        "full", description="Encoder variant"
    )
    d_encoder: int = Field(64, ge=1, description="Encoder width d_e")
    n_heads: int = Field(4, ge=1, description="Encoder attention heads")
    d_ff: int = Field(128, ge=1, description="Encoder feed-forward width")
    small_heads: int = Field(2, ge=1, description="Heads of the smaller encoder")
    small_d_ff: int = Field(
        64, ge=1, description="Feed-forward width of the smaller encoder"
    )
    min_excerpt: int = Field(24, ge=2, description="Shortest training excerpt l_min")
    max_excerpt: int = Field(72, ge=2, description="Longest training excerpt l_max")
    downsample: int = Field(3, ge=1, description="Temporal downsampling factor ds")
    max_frames: int = Field(
        64, ge=1, description="Positional table size of the encoder"
    )

    @model_validator(mode="after")
    def check_excerpt_bounds(self) -> "ConditionerSettings":
        if self.min_excerpt > self.max_excerpt:
            raise ValueError("min_excerpt must not exceed max_excerpt")
        return self


class ModelSettings(Section):
    """Conditional decoder."""
    d_model: int = Field(64, ge=1, description="Model width d_m")
    n_blocks: int = Field(2, ge=1, description="Causal self-attention blocks")
    n_heads: int = Field(4, ge=1, description="Attention heads")
    d_ff: int = Field(128, ge=1, description="Feed-forward width")
    max_positions: int = Field(512, ge=2, description="Positional table size")
    init_scale: float = Field(0.02, gt=0, description="Std of embedding initialization")


class TrainingSettings(Section):
    """Optimization loop."""
    steps: int = Field(10000, ge=0, description="Training steps")
    batch_size: int = Field(16, ge=1, description="Songs per step")
    lr: float = Field(3e-3, gt=0, description="Peak learning rate")
    warmup: int = Field(100, ge=0, description="Linear warmup steps")
    beta1: float = Field(0.9, ge=0, lt=1, description="Adam beta1")
    beta2: float = Field(0.95, ge=0, lt=1, description="Adam beta2")
    adam_eps: float = Field(1e-8, gt=0, description="Adam epsilon")
    grad_clip: float = Field(
        1.0, ge=0, description="Global gradient norm clip (0 disables)"
    )
    loss_masking: bool = Field(
        True, description="Mask targets inside the style excerpt"
    )
    condition_dropout: bool = Field(True, description="4-way condition dropout")
    depth_dropout: bool = Field(
        True, description="Draw RVQ depth uniformly per example"
    )
    log_every: int = Field(100, ge=1, description="Steps between loss log lines")
    checkpoint_every: int = Field(
        0, ge=0, description="Steps between intermediate checkpoints (0 = end only)"
    )
    progress: bool = Field(True, description="Show tqdm progress bars")


class SamplerSettings(Section):
    """Guided autoregressive sampling."""
    guidance: Literal["none", "simple", "double"] = Field(
        "simple", description="Guidance mode"
    )
    alpha: float = Field(3.0, ge=1, description="Guidance scale alpha")
    beta: float = Field(3.0, ge=1, description="Text-versus-style scale beta")
    temperature: float = Field(1.0, gt=0, description="Softmax temperature")
    top_k: int = Field(0, ge=0, description="Top-k restriction (0 disables)")
    length: int = Field(128, ge=2, description="Tokens to generate")


class InversionSettings(Section):
    """Textual inversion."""
    n_pseudo_tokens: int = Field(1, ge=1, le=12, description="Prefix vectors learned")
    steps: int = Field(200, ge=0, description="Optimization steps")
    lr: float = Field(0.025, gt=0, description="Adam learning rate")
    batch: int = Field(8, ge=1, description="Chunks per step")
    chunk_len: int = Field(128, ge=2, description="Chunk length in tokens")
    init: Union[Literal["mean"], int] = Field(
        "mean", description="'mean' or a class id"
    )
    excerpt_len: int = Field(
        0,
        ge=0,
        description="Restrict chunks to one excerpt of this length (0 = whole song)",
    )


class MetricSettings(Section):
    """Evaluation protocol."""
    k: int = Field(10, ge=1, description="Neighbour count K")
    n_samples: int = Field(
        200, ge=1, description="Conditioning excerpts per evaluation"
    )
    chunk_len: int = Field(64, ge=2, description="Store chunk length")
    excerpt_len: int = Field(48, ge=2, description="Evaluation excerpt length")
    gen_len: int = Field(128, ge=2, description="Generated tokens per sample")
    stream_depths: List[int] = Field(
        default_factory=lambda: [1, 4], description="RVQ depths evaluated"
    )
    sweep_betas: List[float] = Field(
        default_factory=lambda: [1.0, 3.0, 5.0], description="Betas of the sweep"
    )
    sweep_streams: int = Field(4, ge=1, description="RVQ depth used by the sweep")
    sweep_baselines: bool = Field(
        True, description="Add no-guidance and simple-guidance rows to the sweep"
    )
    ablation_streams: int = Field(4, ge=1, description="RVQ depth used by the ablation")
    compare_samples: int = Field(
        20, ge=1, description="Samples of the baseline comparison"
    )
    compare_streams: int = Field(
        2, ge=1, description="RVQ depth of the style model in the comparison"
    )
    identity_injection: bool = Field(
        False, description="Debug: use the excerpt itself as the generation"
    )
    gen_batch: int = Field(32, ge=1, description="Samples generated together")


class RunConfig(BaseSettings):
    """Configuration settings for a tokenstyle run."""
    model_config = SettingsConfigDict(
        env_prefix="TOKENSTYLE_",
        env_nested_delimiter="__",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="forbid",
    )

    seed: int = Field(0, description="Global seed")
    output_dir: Path = Field(Path("runs"), description="Artifact directory")
    log_level: str = Field("INFO", description="Logging level")
    log_format: str = Field("%(asctime)s - %(name)s - %(levelname)s - %(message)s")

    corpus: CorpusSettings = Field(default_factory=CorpusSettings)
    features: FeatureSettings = Field(default_factory=FeatureSettings)
    rvq: RvqSettings = Field(default_factory=RvqSettings)
    conditioner: ConditionerSettings = Field(default_factory=ConditionerSettings)
    model: ModelSettings = Field(default_factory=ModelSettings)
    training: TrainingSettings = Field(default_factory=TrainingSettings)
    sampler: SamplerSettings = Field(default_factory=SamplerSettings)
    inversion: InversionSettings = Field(default_factory=InversionSettings)
    metrics: MetricSettings = Field(default_factory=MetricSettings)

    @field_validator("log_level")
    @classmethod
    def check_log_level(cls, v: str) -> str:
        if v.upper() not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"unknown log level {v}")
        return v.upper()

    @property
    def corpus_path(self) -> Path:
        return self.output_dir / "corpus.bin"

    @property
    def checkpoint_path(self) -> Path:
        return self.output_dir / "checkpoint.bin"

    @property
    def cache_dir(self) -> Path:
        return self.output_dir / ".cache"

    def snapshot(self) -> Dict[str, Any]:
        """JSON-safe dump used inside checkpoints."""
        return json.loads(self.model_dump_json())

    def with_overrides(self, overrides: Dict[str, Any]) -> "RunConfig":
        """Return a copy with dotted-key overrides applied."""
        return build_config(_merge(self.snapshot(), _nest(overrides)))


def _parse_value(raw: str) -> Any:
    raw = raw.strip()
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        lowered = raw.lower()
        if lowered in {"true", "false"}:
            return lowered == "true"
        return raw


def _nest(flat: Dict[str, Any]) -> Dict[str, Any]:
    nested: Dict[str, Any] = {}
    for key, value in flat.items():
        parts = key.split(".")
        node = nested
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"key '{key}' collides with a scalar setting")
        node[parts[-1]] = value
    return nested


def _merge(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def parse_config_text(text: str) -> Dict[str, Any]:
    """
    Parse the line-based `key = value` format into a nested dictionary.

    Args:
        text: File contents; `#` starts a comment, `[section]` prefixes
            following keys, dotted keys address sections directly

    Returns:
        dict: Nested mapping of section -> key -> value
    """
    flat: Dict[str, Any] = {}
    section: Optional[str] = None
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip() or None
            continue
        if "=" not in stripped:
            raise ConfigError(
                f"line {number}: expected 'key = value', got '{stripped}'"
            )
        key, value = stripped.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {number}: empty key")
        full_key = f"{section}.{key}" if section and "." not in key else key
        flat[full_key] = _parse_value(value)
    return _nest(flat)


def parse_overrides(items: List[str]) -> Dict[str, Any]:
    """Turn `key=value` command-line items into a flat override mapping."""
    overrides: Dict[str, Any] = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not of the form key=value")
        key, value = item.split("=", 1)
        if not key.strip():
            raise ConfigError(f"override '{item}' has an empty key")
        overrides[key.strip()] = _parse_value(value)
    return overrides


def build_config(values: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Validate a nested mapping into a RunConfig, raising ConfigError on failure."""
    try:
        return RunConfig(**(values or {}))
    except ValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(part) for part in first["loc"])
        raise ConfigError(f"{location}: {first['msg']}") from e


def load_config(
    path: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None
) -> RunConfig:
    """
    Load a RunConfig from an optional file plus dotted overrides.

    Args:
        path: Config file in `key = value` format (optional)
        overrides: Flat mapping like {"training.steps": 100}

    Returns:
        RunConfig: Validated configuration
    """
    values: Dict[str, Any] = {}
    if path is not None:
        if not Path(path).exists():
            raise ConfigError(f"config file {path} does not exist")
        values = parse_config_text(Path(path).read_text(encoding="utf-8"))
        logger.info(f"Loaded config from {path}")
    if overrides:
        values = _merge(values, _nest(overrides))
    return build_config(values)


def _format_value(value: Any) -> str:
    if isinstance(value, str):
        return value
    return json.dumps(value)


def dump_config(config: RunConfig) -> str:
    """Render every effective value in the loadable `key = value` format."""
    snapshot = config.snapshot()
    lines: List[str] = []
    for key in sorted(k for k, v in snapshot.items() if not isinstance(v, dict)):
        lines.append(f"{key} = {_format_value(snapshot[key])}")
    for section in sorted(k for k, v in snapshot.items() if isinstance(v, dict)):
        lines.append("")
        lines.append(f"[{section}]")
        for key in sorted(snapshot[section]):
            lines.append(f"{key} = {_format_value(snapshot[section][key])}")
    return "\n".join(lines) + "\n"
