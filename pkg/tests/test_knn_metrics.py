import pytest
import sys
from pathlib import Path

import numpy as np

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from tokenstyle.core.frozen_features import sequence_embedding
from tokenstyle.core.knn_metrics import (
    bigram_kl,
    build_store,
    frechet_distance,
    gaussian_stats,
    knn_common,
    knn_overfit,
    nearest_songs,
    text_adherence,
)
from tokenstyle.core.synthetic_corpus import sample_song, sample_style_params
from tokenstyle.models.corpus_models import StyleParams, TokenSequence
from tokenstyle.models.metric_models import EmbeddingStore, GaussianStats
from tokenstyle.utils.errors import NumericError, ParameterError
from tokenstyle.utils.helpers import Stream, rng_for


def unit(degrees: float) -> np.ndarray:
    angle = np.deg2rad(degrees)
    return np.array([np.cos(angle), np.sin(angle)])


def cycle_style(style_id: int, order) -> StyleParams:
    vocab = len(order)
    trans = np.zeros((vocab, vocab))
    for i, token in enumerate(order):
        trans[token, order[(i + 1) % vocab]] = 1.0
    return StyleParams(style_id=style_id, pi=np.full(vocab, 1.0 / vocab), trans=trans)


@pytest.fixture
def store():
    """Six songs on the unit circle; song 5 has two chunks."""
    records = [
        (0, 0, 0.0),
        (1, 0, 10.0),
        (2, 0, 20.0),
        (3, 0, 90.0),
        (4, 0, 180.0),
        (5, 0, 170.0),
        (5, 1, 3.0),
    ]
    return EmbeddingStore(
        song_ids=np.array([r[0] for r in records]),
        chunk_ids=np.array([r[1] for r in records]),
        vectors=np.stack([unit(r[2]) for r in records]),
        chunk_len=16,
    )


class TestNearestSongs:
    """Test cases for nearest_songs and the KNN metrics."""

    def test_best_chunk_decides(self, store):
        assert nearest_songs(store, unit(0.0), 3) == [0, 5, 1]

    def test_ties_prefer_lower_song_id(self):
        tied = EmbeddingStore(
            song_ids=np.array([7, 2, 4]),
            chunk_ids=np.zeros(3, dtype=int),
            vectors=np.stack([unit(30.0), unit(30.0), unit(60.0)]),
            chunk_len=16,
        )
        assert nearest_songs(tied, unit(30.0), 2) == [2, 7]

    def test_k_larger_than_store(self, store):
        with pytest.raises(ParameterError):
            nearest_songs(store, unit(0.0), 7)

    def test_query_must_be_unit(self, store):
        with pytest.raises(ParameterError):
            nearest_songs(store, np.array([2.0, 0.0]), 1)

    def test_query_dimension(self, store):
        with pytest.raises(ParameterError):
            nearest_songs(store, np.array([1.0, 0.0, 0.0]), 1)

    def test_knn_common(self, store):
        assert knn_common(store, unit(0.0), unit(0.0), 2) == 1.0
        assert knn_common(store, unit(0.0), unit(8.0), 2) == 0.5
        assert knn_common(store, unit(0.0), unit(180.0), 1) == 0.0

    def test_knn_overfit(self, store):
        assert knn_overfit(store, unit(0.0), unit(0.0)) == 1
        assert knn_overfit(store, unit(0.0), unit(5.0)) == 0
        # nothing stored lies within 25 degrees of the query
        assert knn_overfit(store, unit(50.0), unit(52.0)) == 1


class TestBuildStore:
    """Test cases for build_store."""

    def test_chunks_per_song(self, tiny_corpus, tiny_projection):
        songs = tiny_corpus.songs("valid", "test")
        store = build_store(songs, 16, tiny_projection, splits=["valid", "test"])
        assert len(store) == 3 * len(songs)
        assert store.n_songs == len(songs)
        assert np.allclose(np.linalg.norm(store.vectors, axis=1), 1.0)
        second_chunk = sequence_embedding(songs[0].tokens[16:32], tiny_projection)
        assert np.allclose(store.vectors[1], second_chunk)
        assert store.splits == ["valid", "test"]

    def test_chunk_shorter_than_window(self, tiny_corpus, tiny_projection):
        with pytest.raises(ParameterError):
            build_store(tiny_corpus.songs("valid"), 4, tiny_projection)

    def test_no_full_chunk(self, tiny_corpus, tiny_projection):
        with pytest.raises(ParameterError):
            build_store(tiny_corpus.songs("valid"), 64, tiny_projection)

    def test_no_songs(self, tiny_projection):
        with pytest.raises(ParameterError):
            build_store([], 16, tiny_projection)


class TestFrechet:
    """Test cases for gaussian_stats and frechet_distance."""

    def test_identical(self):
        stats = gaussian_stats(np.random.default_rng(0).standard_normal((50, 4)))
        assert frechet_distance(stats, stats) == pytest.approx(0.0, abs=1e-9)

    def test_mean_shift(self):
        cov = np.diag([1.0, 2.0])
        a = GaussianStats(mean=np.zeros(2), cov=cov, count=10)
        b = GaussianStats(mean=np.array([3.0, 4.0]), cov=cov, count=10)
        assert frechet_distance(a, b) == pytest.approx(25.0, abs=1e-9)

    def test_one_dimensional_variances(self):
        a = GaussianStats(mean=np.zeros(1), cov=np.array([[1.0]]), count=5)
        b = GaussianStats(mean=np.zeros(1), cov=np.array([[4.0]]), count=5)
        assert frechet_distance(a, b) == pytest.approx(1.0, abs=1e-8)

    def test_diagonal_closed_form(self):
        a = GaussianStats(mean=np.zeros(3), cov=np.diag([1.0, 4.0, 9.0]), count=10)
        b = GaussianStats(mean=np.ones(3), cov=np.diag([4.0, 1.0, 1.0]), count=10)
        expected = 3.0 + (1 - 2) ** 2 + (2 - 1) ** 2 + (3 - 1) ** 2
        assert frechet_distance(a, b) == pytest.approx(expected, abs=1e-9)
        assert frechet_distance(b, a) == pytest.approx(expected, abs=1e-9)

    def test_single_sample(self):
        stats = gaussian_stats(np.array([[1.0, 2.0]]))
        assert stats.count == 1
        assert np.array_equal(stats.cov, np.zeros((2, 2)))

    def test_dimension_mismatch(self):
        with pytest.raises(ParameterError):
            frechet_distance(gaussian_stats(np.eye(3)), gaussian_stats(np.eye(2)))

    def test_indefinite_covariance(self):
        indefinite = np.array([[1.0, 0.0], [0.0, -1.0]])
        bad = GaussianStats(mean=np.zeros(2), cov=indefinite, count=3)
        good = GaussianStats(mean=np.zeros(2), cov=np.eye(2), count=3)
        with pytest.raises(NumericError):
            frechet_distance(bad, good)


class TestOracleMetrics:
    """Test cases for text_adherence and bigram_kl."""

    def test_text_adherence(self):
        styles = [cycle_style(0, [0, 1, 2]), cycle_style(1, [0, 2, 1])]
        forward = TokenSequence(tokens=[0, 1, 2, 0, 1, 2], style_id=-1, song_id=-1)
        backward = TokenSequence(tokens=[0, 2, 1, 0, 2, 1], style_id=-1, song_id=-1)
        assert text_adherence([forward, backward], [0, 1], styles) == 1.0
        assert text_adherence([forward, backward], [0, 0], styles) == 0.5

    def test_text_adherence_length_mismatch(self):
        styles = [cycle_style(0, [0, 1, 2])]
        seq = TokenSequence(tokens=np.array([0, 1, 2]), style_id=-1, song_id=-1)
        with pytest.raises(ParameterError):
            text_adherence([seq], [0, 0], styles)

    def test_bigram_kl_zero_for_matching_chain(self):
        style = cycle_style(0, list(range(16)))
        seq = TokenSequence(tokens=np.tile(np.arange(16), 3), style_id=0, song_id=0)
        assert bigram_kl(seq, style) == pytest.approx(0.0, abs=1e-6)

    def test_bigram_kl_against_uniform(self):
        uniform = StyleParams(
            style_id=0, pi=np.full(16, 1 / 16), trans=np.full((16, 16), 1 / 16)
        )
        seq = TokenSequence(tokens=np.tile(np.arange(16), 3), style_id=0, song_id=0)
        assert bigram_kl(seq, uniform) == pytest.approx(np.log(16), rel=1e-6)

    def test_bigram_kl_too_short(self):
        with pytest.raises(ParameterError):
            seq = TokenSequence.model_construct(
                tokens=np.array([1]), style_id=0, song_id=0
            )
            bigram_kl(seq, cycle_style(0, [0, 1, 2]))


def random_store(rng: np.random.Generator, dim: int = 5) -> EmbeddingStore:
    n_songs = int(rng.integers(3, 11))
    song_ids, chunk_ids = [], []
    for song in rng.permutation(100)[:n_songs]:
        for chunk in range(int(rng.integers(1, 4))):
            song_ids.append(int(song))
            chunk_ids.append(chunk)
    vectors = rng.standard_normal((len(song_ids), dim))
    vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
    return EmbeddingStore(
        song_ids=np.array(song_ids),
        chunk_ids=np.array(chunk_ids),
        vectors=vectors,
        chunk_len=16,
    )


def random_unit(rng: np.random.Generator, dim: int = 5) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def brute_force_nearest(store: EmbeddingStore, e: np.ndarray, k: int):
    e = e.astype(np.float32).astype(np.float64)
    best = {}
    for song, vector in zip(store.song_ids.tolist(), store.vectors):
        best[song] = max(best.get(song, -np.inf), float(vector @ e))
    return sorted(best, key=lambda song: (-best[song], song))[:k]


class TestMetricProperties:
    """Seeded property checks of the KNN and oracle metrics."""

    def test_nearest_songs_matches_brute_force(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            store = random_store(rng)
            e = random_unit(rng)
            k = int(rng.integers(1, store.n_songs + 1))
            assert nearest_songs(store, e, k) == brute_force_nearest(store, e, k)

    def test_knn_common_is_symmetric(self):
        rng = np.random.default_rng(12)
        for _ in range(200):
            store = random_store(rng)
            a, b = random_unit(rng), random_unit(rng)
            k = int(rng.integers(1, store.n_songs + 1))
            value = knn_common(store, a, b, k)
            assert value == knn_common(store, b, a, k)
            assert 0.0 <= value <= 1.0

    def test_bigram_kl_is_non_negative(self):
        styles = [sample_style_params(3, s, 16, 0.5, 0.3) for s in range(6)]
        for i in range(60):
            source, target = styles[i % 6], styles[(i * 7 + 1) % 6]
            seq = sample_song(source, 64, rng_for(3, Stream.SONG, i), song_id=i)
            assert bigram_kl(seq, target) >= 0.0

    def test_permuted_labels_give_chance_adherence(self):
        n_styles = 20
        styles = [sample_style_params(0, s, 64, 0.5, 0.1) for s in range(n_styles)]
        songs = [
            sample_song(
                styles[i % n_styles],
                256,
                rng_for(0, Stream.SONG, 20_000 + i),
                song_id=i,
            )
            for i in range(400)
        ]
        true_labels = [song.style_id for song in songs]
        assert text_adherence(songs, true_labels, styles) >= 0.95
        shuffled = np.random.default_rng(13).permutation(true_labels).tolist()
        # a random permutation matches the true label with probability 1/20
        assert abs(text_adherence(songs, shuffled, styles) - 1.0 / n_styles) < 0.05
