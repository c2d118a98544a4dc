import pytest
import sys
from pathlib import Path

import numpy as np

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from tokenstyle.core.frozen_features import (
    extract_frames,
    frame_count,
    make_projection,
    sequence_embedding,
)
from tokenstyle.core.synthetic_corpus import sample_song, sample_style_params
from tokenstyle.utils.errors import ParameterError, TooShortError


@pytest.fixture
def projection():
    return make_projection(seed=0, vocab_size=16, n_buckets=8, dim=12)


class TestProjection:
    """Test cases for make_projection."""

    def test_same_seed_same_matrix(self):
        a = make_projection(3, 16, 8, 12)
        b = make_projection(3, 16, 8, 12)
        assert np.array_equal(a.matrix, b.matrix)
        assert a.matrix.shape == (24, 12)

    def test_different_seed(self):
        a = make_projection(3, 16, 8, 12)
        b = make_projection(4, 16, 8, 12)
        assert not np.array_equal(a.matrix, b.matrix)


class TestExtractFrames:
    """Test cases for extract_frames."""

    def test_frame_count_example(self, projection):
        frames = extract_frames(np.arange(16) % 16, projection, window=8, hop=4)
        assert len(frames) == 3

    def test_frames_are_unit_norm(self, projection):
        rng = np.random.default_rng(0)
        frames = extract_frames(rng.integers(0, 16, 100), projection).frames
        assert np.allclose(np.linalg.norm(frames, axis=1), 1.0, atol=1e-6)

    def test_constant_sequence(self, projection):
        frames = extract_frames(np.full(40, 3), projection).frames
        assert np.array_equal(frames, np.tile(frames[0], (len(frames), 1)))

    def test_too_short(self, projection):
        with pytest.raises(TooShortError):
            extract_frames(np.arange(4), projection, window=8, hop=4)

    def test_tokens_outside_vocabulary(self, projection):
        with pytest.raises(ParameterError):
            extract_frames(np.array([0, 1, 2, 3, 4, 5, 6, 99]), projection)

    def test_deterministic(self, projection):
        tokens = np.random.default_rng(2).integers(0, 16, 64)
        a = extract_frames(tokens, projection)
        b = extract_frames(tokens, projection)
        assert np.array_equal(a.frames, b.frames)

    @pytest.mark.parametrize("window", [4, 8, 16])
    def test_frame_count_formula(self, projection, window):
        rng = np.random.default_rng(window)
        for length in range(window, 4 * 72, 17):
            tokens = rng.integers(0, 16, length)
            for hop in range(1, window + 1):
                frames = extract_frames(tokens, projection, window=window, hop=hop)
                expected = (length - window) // hop + 1
                assert len(frames) == expected == frame_count(length, window, hop)


class TestSequenceEmbedding:
    """Test cases for sequence_embedding."""

    def test_identical_sequences(self, projection):
        tokens = np.random.default_rng(3).integers(0, 16, 64)
        a = sequence_embedding(tokens, projection)
        b = sequence_embedding(tokens.copy(), projection)
        assert float(a @ b) == pytest.approx(1.0, abs=1e-12)

    def test_unit_norm(self, projection):
        style = sample_style_params(0, 0, 16, 0.5, 0.1)
        for i in range(1000):
            song = sample_song(style, 64, np.random.default_rng(i))
            norm = np.linalg.norm(sequence_embedding(song, projection))
            assert abs(norm - 1.0) < 1e-6

    def test_reversal_changes_embedding(self, projection):
        tokens = np.array([0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15])
        forward = sequence_embedding(tokens, projection)
        backward = sequence_embedding(tokens[::-1], projection)
        assert not np.allclose(forward, backward)

    def test_same_style_is_closer(self):
        projection = make_projection(0, 64, 64, 32)
        styles = [sample_style_params(0, s, 64, 0.5, 0.1) for s in range(2)]
        rng = np.random.default_rng(0)
        same, different = [], []
        for _ in range(100):
            a = sequence_embedding(sample_song(styles[0], 256, rng), projection)
            b = sequence_embedding(sample_song(styles[0], 256, rng), projection)
            c = sequence_embedding(sample_song(styles[1], 256, rng), projection)
            same.append(a @ b)
            different.append(a @ c)
        assert np.mean(same) > np.mean(different)
