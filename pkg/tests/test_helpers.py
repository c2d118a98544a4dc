import pytest
import sys
from pathlib import Path

import numpy as np

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from tokenstyle.utils.helpers import Stream, rng_for


def first_draws(rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, 2**62, size=4)


class TestRngFor:
    """Test cases for rng_for."""

    def test_same_keys_same_stream(self):
        a = first_draws(rng_for(3, Stream.SAMPLE, 1, 2))
        b = first_draws(rng_for(3, Stream.SAMPLE, 1, 2))
        assert np.array_equal(a, b)

    def test_trailing_zero_key_is_a_different_stream(self):
        a = first_draws(rng_for(3, Stream.SAMPLE, 5))
        b = first_draws(rng_for(3, Stream.SAMPLE, 5, 0))
        assert not np.array_equal(a, b)

    @pytest.mark.parametrize("depth", [1, 2, 3])
    def test_sweep_and_compare_differ_from_depth_sampling(self, depth):
        depth_draws = first_draws(rng_for(0, Stream.SAMPLE, depth, 0))
        others = [
            rng_for(0, Stream.SWEEP_SAMPLE, 0),
            rng_for(0, Stream.COMPARE_SAMPLE, 0),
            rng_for(0, Stream.SWEEP_SAMPLE, depth, 0),
        ]
        for rng in others:
            assert not np.array_equal(depth_draws, first_draws(rng))

    def test_streams_are_unique(self):
        assert len({int(s) for s in Stream}) == len(Stream)
