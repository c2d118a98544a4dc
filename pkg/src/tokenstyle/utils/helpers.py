import functools
import hashlib
import logging
from enum import IntEnum
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple

import diskcache
import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)


class Stream(IntEnum):
    """Named random streams; every draw in the project comes from one of these."""
    CORPUS = 1
    SONG = 2
    PROJECTION = 3
    INIT = 4
    TRAIN = 5
    EMA = 6
    KMEANS = 7
    SAMPLE = 8
    INVERT = 9
    EVAL = 10
    SWEEP = 11
    SWEEP_SAMPLE = 12
    COMPARE_SAMPLE = 13


def rng_for(seed: int, stream: Stream, *keys: int) -> np.random.Generator:
    """
    Build an independent generator for a (seed, stream, keys...) tuple.

    Args:
        seed: Global run seed
        stream: Which consumer draws from the generator
        keys: Extra integers (song id, step, sample index...)

    Returns:
        np.random.Generator seeded from a SeedSequence of all entries
    """
    # SeedSequence zero-pads short entropy; the key count keeps (.., k) and
    # (.., k, 0) apart
    entropy = [int(seed), int(stream), len(keys)] + [int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def hash_arrays(arrays: Dict[str, np.ndarray], extra: str = "") -> str:
    """Stable sha256 over named arrays (name, dtype, shape and bytes)."""
    digest = hashlib.sha256()
    for name in sorted(arrays):
        array = np.ascontiguousarray(arrays[name])
        digest.update(name.encode("utf-8"))
        digest.update(str(array.dtype.str).encode("utf-8"))
        digest.update(str(array.shape).encode("utf-8"))
        digest.update(array.tobytes())
    digest.update(extra.encode("utf-8"))
    return digest.hexdigest()


def hash_file(path: Path) -> str:
    """sha256 of a file's bytes."""
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def cache_result(cache_dir: Optional[Path], key_fn: Callable[..., str]):
    """
    Decorator that memoises a function's result on disk.

    Args:
        cache_dir: diskcache directory; None disables caching
        key_fn: Builds the cache key from the call arguments

    The key must capture everything the result depends on (callers pass content
    hashes, not object identities).
    """
    def decorator(func: Callable) -> Callable:
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            if cache_dir is None:
                return func(*args, **kwargs)

            cache_key = f"{func.__name__}:{key_fn(*args, **kwargs)}"
            with diskcache.Cache(str(cache_dir)) as cache:
                result = cache.get(cache_key)
                if result is not None:
                    logger.debug(f"Cache hit for {func.__name__}")
                    return result

                result = func(*args, **kwargs)
                cache.set(cache_key, result)
                return result

        return wrapper
    return decorator


def write_report(frame: pd.DataFrame, stem: Path) -> Tuple[Path, Path]:
    """
    Write a report both as an aligned text table and as CSV.

    Args:
        frame: Report rows
        stem: Output path without suffix

    Returns:
        tuple: (text path, csv path)
    """
    stem.parent.mkdir(parents=True, exist_ok=True)
    text_path = stem.with_suffix(".txt")
    csv_path = stem.with_suffix(".csv")

    text_path.write_text(format_table(frame) + "\n", encoding="utf-8")
    frame.to_csv(csv_path, index=False, float_format="%.6f", lineterminator="\n")
    logger.info(f"Report written to {text_path} and {csv_path}")
    return text_path, csv_path


def format_table(frame: pd.DataFrame) -> str:
    """Aligned text rendering used for reports and console output."""
    return frame.to_string(index=False, float_format=lambda v: f"{v:.6f}")


def summarize(values: Any) -> float:
    """Mean accumulated in fixed index order."""
    total = 0.0
    count = 0
    for value in values:
        total += float(value)
        count += 1
    return total / count if count else float("nan")
