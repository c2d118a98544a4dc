import logging
import sys
from pathlib import Path

import numpy as np
import pytest

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from tokenstyle.config.settings import build_config
from tokenstyle.core.cond_model import init_params
from tokenstyle.core.frozen_features import make_projection
from tokenstyle.core.rvq import init_codebooks_kmeans
from tokenstyle.core.synthetic_corpus import build_corpus


TINY_VALUES = {
    "seed": 0,
    "corpus": {
        "n_styles": 3,
        "vocab_size": 8,
        "song_length": 48,
        "n_train": 4,
        "n_valid": 2,
        "n_test": 2,
    },
    "features": {"window": 8, "hop": 4, "n_buckets": 8, "dim": 8},
    "rvq": {"n_streams": 2, "codebook_size": 4, "kmeans_songs": 8, "kmeans_iters": 2},
    "conditioner": {
        "d_encoder": 8,
        "n_heads": 2,
        "d_ff": 16,
        "small_heads": 1,
        "small_d_ff": 8,
        "min_excerpt": 12,
        "max_excerpt": 24,
        "downsample": 2,
        "max_frames": 16,
    },
    "model": {
        "d_model": 8,
        "n_blocks": 1,
        "n_heads": 2,
        "d_ff": 16,
        "max_positions": 64,
        "init_scale": 0.5,
    },
    "training": {
        "steps": 4,
        "batch_size": 4,
        "lr": 1e-2,
        "warmup": 2,
        "log_every": 1,
        "progress": False,
    },
    "sampler": {"length": 16},
    "inversion": {"steps": 3, "batch": 2, "chunk_len": 16},
    "metrics": {
        "k": 3,
        "n_samples": 3,
        "chunk_len": 16,
        "excerpt_len": 16,
        "gen_len": 16,
        "stream_depths": [1, 2],
        "sweep_betas": [1.0, 2.0],
        "sweep_streams": 2,
        "ablation_streams": 2,
        "compare_samples": 2,
        "compare_streams": 1,
        "gen_batch": 2,
    },
}


def tiny_values(output_dir: Path, **sections) -> dict:
    values = {
        key: (dict(value) if isinstance(value, dict) else value)
        for key, value in TINY_VALUES.items()
    }
    for section, updates in sections.items():
        if isinstance(updates, dict):
            values[section] = {**values[section], **updates}
        else:
            values[section] = updates
    values["output_dir"] = str(output_dir)
    return values


@pytest.fixture(autouse=True)
def _restore_root_logging():
    """Undo the root handlers a CLI run installs, so no test logs to a closed stream."""
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)


@pytest.fixture
def tiny_config(tmp_path):
    """A run configuration small enough to train in milliseconds per step."""
    return build_config(tiny_values(tmp_path / "run"))


@pytest.fixture
def tiny_corpus(tiny_config):
    return build_corpus(tiny_config.corpus, tiny_config.seed)


@pytest.fixture
def tiny_projection(tiny_config):
    c = tiny_config
    features = c.features
    vocab_size = c.corpus.vocab_size
    return make_projection(c.seed, vocab_size, features.n_buckets, features.dim)


@pytest.fixture
def tiny_params(tiny_config):
    c = tiny_config
    return init_params(
        c.corpus.vocab_size,
        c.corpus.n_styles,
        c.features.dim,
        c.model,
        c.conditioner,
        c.seed,
    )


@pytest.fixture
def tiny_codebooks(tiny_config):
    rng = np.random.default_rng(0)
    samples = rng.standard_normal((64, tiny_config.conditioner.d_encoder))
    rvq = tiny_config.rvq
    return init_codebooks_kmeans(
        samples, rvq.n_streams, rvq.codebook_size, seed=0, iters=2
    )
