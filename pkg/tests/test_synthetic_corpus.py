import pytest
import sys
from pathlib import Path

import numpy as np

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from tokenstyle.config.settings import CorpusSettings
from tokenstyle.core.synthetic_corpus import (
    build_corpus,
    classify_many,
    classify_style,
    sample_song,
    sample_style_params,
    style_log_likelihood,
)
from tokenstyle.models.corpus_models import StyleParams, TokenSequence
from tokenstyle.utils.errors import ParameterError
from tokenstyle.utils.helpers import Stream, rng_for


def cycle_style(vocab_size: int = 5) -> StyleParams:
    pi = np.zeros(vocab_size)
    pi[0] = 1.0
    trans = np.roll(np.eye(vocab_size), 1, axis=1)
    return StyleParams(style_id=0, pi=pi, trans=trans)


def uniform_style(vocab_size: int) -> StyleParams:
    return StyleParams(
        style_id=0,
        pi=np.full(vocab_size, 1.0 / vocab_size),
        trans=np.full((vocab_size, vocab_size), 1.0 / vocab_size),
    )


class TestStyleParams:
    """Test cases for sample_style_params."""

    def test_deterministic(self):
        a = sample_style_params(3, 2, 16, 0.5, 0.1)
        b = sample_style_params(3, 2, 16, 0.5, 0.1)
        assert np.array_equal(a.pi, b.pi)
        assert np.array_equal(a.trans, b.trans)

    def test_styles_differ_by_id(self):
        a = sample_style_params(7, 0, 16, 0.5, 0.1)
        b = sample_style_params(7, 1, 16, 0.5, 0.1)
        assert not np.array_equal(a.trans, b.trans)

    def test_large_concentration_is_uniform(self):
        style = sample_style_params(0, 0, 8, 0.5, 1e6)
        assert np.max(np.abs(style.trans - 1.0 / 8)) < 1e-2

    def test_rows_are_stochastic(self):
        for style_id in range(1000):
            style = sample_style_params(11, style_id, 12, 0.5, 0.1)
            assert np.max(np.abs(style.trans.sum(axis=1) - 1.0)) < 1e-9
            assert abs(style.pi.sum() - 1.0) < 1e-9
            assert style.trans.min() >= 0

    @pytest.mark.parametrize(
        "vocab_size,alpha_pi,alpha_trans",
        [(1, 0.5, 0.1), (8, 0.0, 0.1), (8, 0.5, -1.0)],
    )
    def test_invalid_arguments(self, vocab_size, alpha_pi, alpha_trans):
        with pytest.raises(ParameterError):
            sample_style_params(0, 0, vocab_size, alpha_pi, alpha_trans)


class TestSampleSong:
    """Test cases for sample_song."""

    def test_deterministic_chain(self):
        song = sample_song(cycle_style(5), 5, np.random.default_rng(0))
        assert song.tokens.tolist() == [0, 1, 2, 3, 4]

    def test_same_rng_same_song(self):
        style = sample_style_params(1, 0, 32, 0.5, 0.1)
        a = sample_song(style, 100, np.random.default_rng(5))
        b = sample_song(style, 100, np.random.default_rng(5))
        assert np.array_equal(a.tokens, b.tokens)

    def test_length_contract(self):
        style = sample_style_params(1, 0, 32, 0.5, 0.1)
        song = sample_song(style, 256, np.random.default_rng(0), song_id=9)
        assert len(song) == 256
        assert song.song_id == 9
        assert song.tokens.min() >= 0 and song.tokens.max() < 32

    def test_too_short(self):
        with pytest.raises(ParameterError):
            sample_song(cycle_style(), 1, np.random.default_rng(0))


class TestBuildCorpus:
    """Test cases for build_corpus."""

    def test_split_counts(self):
        corpus = build_corpus(CorpusSettings(song_length=32), seed=0)
        assert len(corpus.splits["train"]) == 1000
        assert len(corpus.splits["valid"]) == 200
        assert len(corpus.splits["test"]) == 200
        ids = [song.song_id for song in corpus.songs("train", "valid", "test")]
        assert len(set(ids)) == len(ids)

    def test_reproducible(self):
        settings = CorpusSettings(
            n_styles=3, n_train=2, n_valid=1, n_test=1, song_length=40
        )
        a = build_corpus(settings, seed=4)
        b = build_corpus(settings, seed=4)
        splits = ("train", "valid", "test")
        for x, y in zip(a.songs(*splits), b.songs(*splits)):
            assert np.array_equal(x.tokens, y.tokens)

    def test_single_song(self):
        settings = CorpusSettings(
            n_styles=1, n_train=1, n_valid=0, n_test=0, song_length=16
        )
        corpus = build_corpus(settings, seed=0)
        assert len(corpus.splits["train"]) == 1
        assert corpus.splits["valid"] == [] and corpus.splits["test"] == []

    def test_zero_songs(self):
        settings = CorpusSettings(n_styles=2, n_train=0, n_valid=0, n_test=0)
        with pytest.raises(ParameterError):
            build_corpus(settings, seed=0)


class TestStyleLikelihood:
    """Test cases for the style oracle."""

    def test_certain_sequence(self):
        song = TokenSequence(tokens=[0, 1, 2, 3, 4], style_id=0, song_id=0)
        assert style_log_likelihood(song, cycle_style(5), smoothing_eps=0.0) == 0.0

    def test_uniform(self):
        song = sample_song(uniform_style(10), 50, np.random.default_rng(1))
        expected = -50 * np.log(10)
        value = style_log_likelihood(song, uniform_style(10))
        assert value == pytest.approx(expected, abs=1e-9)

    def test_impossible_transition_is_finite(self):
        song = TokenSequence(tokens=[0, 2], style_id=0, song_id=0)
        value = style_log_likelihood(song, cycle_style(5), smoothing_eps=1e-9)
        expected = np.log(1e-9 / (1 + 5e-9)) + np.log((1 + 1e-9) / (1 + 5e-9))
        assert np.isfinite(value)
        assert value == pytest.approx(expected, rel=1e-9)

    def test_out_of_range_tokens(self):
        song = TokenSequence(tokens=[0, 7], style_id=0, song_id=0)
        with pytest.raises(ParameterError):
            style_log_likelihood(song, cycle_style(5))

    def test_classification_accuracy(self):
        settings = CorpusSettings()
        styles = [sample_style_params(0, s, 64, 0.5, 0.1) for s in range(20)]
        songs = [
            sample_song(
                styles[i % 20], 256, rng_for(0, Stream.SONG, 10_000 + i), song_id=i
            )
            for i in range(1000)
        ]
        predicted = classify_many(songs, styles, settings.smoothing_eps)
        accuracy = np.mean([p == song.style_id for p, song in zip(predicted, songs)])
        assert accuracy >= 0.99
        assert classify_style(songs[0], styles) == predicted[0]
