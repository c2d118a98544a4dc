import pytest
import sys
from pathlib import Path

import numpy as np

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from tokenstyle.core.cond_model import (
    ConditionCase,
    IncrementalDecoder,
    TrainingExample,
    decode_batch,
    draw_examples,
    forward_logits,
    init_params,
    loss_and_grads,
    masked_cross_entropy,
    params_hash,
    training_step,
)
from tokenstyle.core.frozen_features import frame_count
from tokenstyle.core.optim import Adam
from tokenstyle.core.style_conditioner import FrozenQuantization, encode_style
from tokenstyle.models.conditioning_models import ConditioningPrefix
from tokenstyle.utils.errors import ParameterError
from tokenstyle.utils.helpers import Stream, rng_for


def assert_grad_close(
    analytic: float, numeric: float, rel: float = 1e-4, atol: float = 1e-8
):
    bound = rel * max(abs(analytic), abs(numeric)) + atol
    assert abs(analytic - numeric) <= bound, (analytic, numeric)


def example(song, span, case, n_streams):
    return TrainingExample(
        tokens=song.tokens,
        label=song.style_id,
        span=span,
        case=case,
        n_streams=n_streams,
    )


@pytest.fixture
def examples(tiny_corpus):
    songs = tiny_corpus.splits["train"]
    return [
        example(songs[0], (5, 16), ConditionCase.BOTH, 2),
        example(songs[1], (10, 12), ConditionCase.TEXT, 1),
        example(songs[2], (0, 20), ConditionCase.STYLE, 1),
        example(songs[3], (20, 24), ConditionCase.NONE, 2),
    ]


@pytest.fixture
def model_parts(tiny_params, tiny_codebooks, tiny_projection, tiny_config):
    return tiny_params, tiny_codebooks, tiny_projection, tiny_config


def frozen_for(examples, config, seed=0):
    """Fixed quantizer stand-ins for the style-conditioned examples."""
    rng = np.random.default_rng(seed)
    frozen = []
    for ex in examples:
        if ex.case in (ConditionCase.BOTH, ConditionCase.STYLE):
            n = frame_count(ex.span[1], config.features.window, config.features.hop)
            d_e = config.conditioner.d_encoder
            frozen.append(
                FrozenQuantization(
                    offset=0.1 * rng.standard_normal((n, d_e)),
                    target=rng.standard_normal((n, d_e)),
                )
            )
        else:
            frozen.append(None)
    return frozen


class TestDecoder:
    """Test cases for the conditional decoder forward pass."""

    def test_logit_shape(self, tiny_params):
        prefix = np.random.default_rng(0).standard_normal((3, 8))
        logits, _ = decode_batch(tiny_params, [prefix], np.array([[1, 2, 3, 4]]))
        assert logits.shape == (1, 5, 8)

    def test_causality(self, tiny_params):
        prefix = ConditioningPrefix(
            text_part=tiny_params["text_emb"][0], style_part=tiny_params["null_style"]
        )
        tokens = np.random.default_rng(1).integers(0, 8, 20)
        changed = tokens.copy()
        changed[12] = (changed[12] + 1) % 8
        a = forward_logits(tiny_params, prefix, tokens)
        b = forward_logits(tiny_params, prefix, changed)
        assert np.allclose(a[:12], b[:12], atol=1e-12)
        assert not np.allclose(a[12:], b[12:])

    def test_padding_is_invisible(self, tiny_params):
        rng = np.random.default_rng(2)
        short, long = rng.standard_normal((2, 8)), rng.standard_normal((5, 8))
        tokens = rng.integers(0, 8, (2, 10))
        together, _ = decode_batch(tiny_params, [short, long], tokens)
        alone_short, _ = decode_batch(tiny_params, [short], tokens[:1])
        alone_long, _ = decode_batch(tiny_params, [long], tokens[1:])
        assert np.allclose(together[0], alone_short[0], atol=1e-10)
        assert np.allclose(together[1], alone_long[0], atol=1e-10)

    def test_kv_cache_matches_full_forward(self, tiny_params):
        rng = np.random.default_rng(3)
        prefixes = [rng.standard_normal((n, 8)) for n in (2, 4, 3)]
        tokens = rng.integers(0, 8, (3, 12))
        full, _ = decode_batch(tiny_params, prefixes, tokens)

        decoder = IncrementalDecoder(tiny_params, prefixes, capacity=12)
        steps = [decoder.logits] + [decoder.step(tokens[:, j]) for j in range(12)]
        assert np.allclose(np.stack(steps, axis=1), full, atol=1e-6)

    def test_kv_cache_capacity(self, tiny_params):
        decoder = IncrementalDecoder(tiny_params, [np.zeros((2, 8))], capacity=1)
        decoder.step(np.array([0]))
        with pytest.raises(ParameterError):
            decoder.step(np.array([0]))

    def test_too_many_positions(self, tiny_params):
        with pytest.raises(ParameterError):
            decode_batch(tiny_params, [np.zeros((2, 8))], np.zeros((1, 70), dtype=int))

    def test_prefix_width_mismatch(self, tiny_params):
        with pytest.raises(ParameterError):
            decode_batch(tiny_params, [np.zeros((2, 5))], np.zeros((1, 3), dtype=int))

    def test_init_is_deterministic(self, tiny_config):
        c = tiny_config
        a = init_params(8, 3, 8, c.model, c.conditioner, seed=5)
        b = init_params(8, 3, 8, c.model, c.conditioner, seed=5)
        other = init_params(8, 3, 8, c.model, c.conditioner, seed=6)
        assert params_hash(a) == params_hash(b)
        assert params_hash(a) != params_hash(other)


class TestMaskedCrossEntropy:
    """Test cases for masked_cross_entropy."""

    def test_uniform_logits(self):
        loss, _ = masked_cross_entropy(
            np.zeros((2, 3, 8)),
            np.zeros((2, 3), dtype=int),
            np.ones((2, 3), dtype=bool),
        )
        assert loss == pytest.approx(np.log(8))

    def test_empty_mask(self):
        loss, grad = masked_cross_entropy(
            np.ones((1, 4, 5)),
            np.zeros((1, 4), dtype=int),
            np.zeros((1, 4), dtype=bool),
        )
        assert loss == 0.0
        assert not grad.any()

    def test_masked_positions_are_ignored(self):
        rng = np.random.default_rng(4)
        logits = rng.standard_normal((1, 4, 5))
        targets = np.array([[0, 1, 2, 3]])
        mask = np.array([[True, False, True, False]])
        loss, grad = masked_cross_entropy(logits, targets, mask)
        full, _ = masked_cross_entropy(
            logits[:, ::2], targets[:, ::2], np.ones((1, 2), dtype=bool)
        )
        assert loss == pytest.approx(full)
        assert not grad[0, 1].any() and not grad[0, 3].any()

    def test_gradient(self):
        rng = np.random.default_rng(5)
        logits = rng.standard_normal((2, 3, 4))
        targets = rng.integers(0, 4, (2, 3))
        mask = rng.random((2, 3)) > 0.3
        mask[0, 0] = True
        _, grad = masked_cross_entropy(logits, targets, mask)
        eps = 1e-6
        for index in [(0, 0, 0), (0, 0, 1), (1, 2, 3)]:
            plus, minus = logits.copy(), logits.copy()
            plus[index] += eps
            minus[index] -= eps
            up, _ = masked_cross_entropy(plus, targets, mask)
            down, _ = masked_cross_entropy(minus, targets, mask)
            assert_grad_close(grad[index], (up - down) / (2 * eps))

    def test_shape_mismatch(self):
        with pytest.raises(ParameterError):
            masked_cross_entropy(
                np.zeros((2, 3, 4)),
                np.zeros((2, 2), dtype=int),
                np.ones((2, 2), dtype=bool),
            )


class TestLoss:
    """Test cases for loss_and_grads and the training step."""

    def test_gradients_match_finite_differences(self, model_parts, examples):
        params, codebooks, projection, config = model_parts
        frozen = frozen_for(examples, config)
        result = loss_and_grads(params, codebooks, projection, examples, config, frozen)
        assert result.penalty > 0

        def loss(candidate):
            return loss_and_grads(
                candidate, codebooks, projection, examples, config, frozen
            ).loss

        eps = 1e-6
        rng = np.random.default_rng(6)
        for name, array in sorted(params.arrays.items()):
            for _ in range(2):
                index = tuple(int(rng.integers(s)) for s in array.shape)
                plus, minus = params.copy(), params.copy()
                plus.arrays[name][index] += eps
                minus.arrays[name][index] -= eps
                numeric = (loss(plus) - loss(minus)) / (2 * eps)
                assert_grad_close(result.grads[name][index], numeric)

    def test_encoder_gradient_is_nonzero(self, model_parts, examples):
        params, codebooks, projection, config = model_parts
        result = loss_and_grads(params, codebooks, projection, examples, config)
        assert np.abs(result.grads["cond.block.attn.wq"]).sum() > 0
        assert np.abs(result.grads["cond.in.w"]).sum() > 0

    @pytest.mark.parametrize("case", list(ConditionCase))
    def test_loss_masking_in_every_case(self, model_parts, tiny_corpus, case):
        params, codebooks, projection, config = model_parts
        song = tiny_corpus.splits["train"][0]
        result = loss_and_grads(
            params, codebooks, projection, [example(song, (8, 16), case, 2)], config
        )

        keeps_text = case in (ConditionCase.BOTH, ConditionCase.TEXT)
        if keeps_text:
            text = params["text_emb"][song.style_id]
        else:
            text = params["null_text"]
        if case in (ConditionCase.BOTH, ConditionCase.STYLE):
            encoded = encode_style(song.tokens[8:24], params, codebooks, 2, projection)
            style = encoded.prefix.vectors
        else:
            style = params["null_style"][None]
        prefix = np.concatenate([text[None], style])
        logits, _ = decode_batch(params, [prefix], song.tokens[None, :-1])
        mask = np.ones((1, len(song)), dtype=bool)
        mask[0, 8:24] = False
        expected, _ = masked_cross_entropy(logits, song.tokens[None], mask)
        assert result.cross_entropy == pytest.approx(expected, rel=1e-12)

    def test_no_masking_scores_every_target(self, model_parts, tiny_corpus):
        params, codebooks, projection, tiny_config = model_parts
        config = tiny_config.with_overrides({"training.loss_masking": False})
        song = tiny_corpus.splits["train"][0]
        unmasked = TrainingExample(
            tokens=song.tokens,
            label=0,
            span=(8, 16),
            case=ConditionCase.NONE,
            n_streams=1,
        )
        result = loss_and_grads(params, codebooks, projection, [unmasked], config)
        prefix = np.stack([params["null_text"], params["null_style"]])
        logits, _ = decode_batch(params, [prefix], song.tokens[None, :-1])
        mask = np.ones((1, len(song)), dtype=bool)
        expected, _ = masked_cross_entropy(logits, song.tokens[None], mask)
        assert result.cross_entropy == pytest.approx(expected, rel=1e-12)

    def test_draw_examples_covers_cases_and_depths(self, tiny_config, tiny_corpus):
        config = tiny_config.with_overrides({"training.batch_size": 400})
        rng = np.random.default_rng(0)
        examples = draw_examples(tiny_corpus.splits["train"], rng, config, 2)
        assert {ex.case for ex in examples} == set(ConditionCase)
        assert {ex.n_streams for ex in examples} == {1, 2}
        for ex in examples:
            assert 12 <= ex.span[1] <= 24
            assert 0 <= ex.span[0] <= 48 - ex.span[1]

    def test_dropout_disabled(self, tiny_config, tiny_corpus):
        config = tiny_config.with_overrides(
            {"training.condition_dropout": False, "training.depth_dropout": False}
        )
        rng = np.random.default_rng(0)
        examples = draw_examples(tiny_corpus.splits["train"], rng, config, 2)
        assert all(
            ex.case == ConditionCase.BOTH and ex.n_streams == 2 for ex in examples
        )

    def test_training_step_is_deterministic(self, model_parts, tiny_corpus):
        tiny_params, tiny_codebooks, projection, config = model_parts
        songs = tiny_corpus.splits["train"]
        outcomes = []
        for _ in range(2):
            params, codebooks = tiny_params.copy(), tiny_codebooks.copy()
            optimizer = Adam(0.9, 0.95)
            for step in range(3):
                rng = rng_for(0, Stream.TRAIN, step)
                stats, codebooks = training_step(
                    params, codebooks, optimizer, songs, rng, projection, config
                )
                assert np.isfinite(stats.loss)
            outcomes.append((params_hash(params), codebooks.books.copy()))
        assert outcomes[0][0] == outcomes[1][0]
        assert np.array_equal(outcomes[0][1], outcomes[1][1])
        assert outcomes[0][0] != params_hash(tiny_params)
