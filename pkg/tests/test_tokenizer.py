import numpy as np
import pytest

from conftest import tiny_model_config
from mobility.config import ModelConfig
from mobility.core.tensor import Tensor, concat, finite_diff_check_params, mul, narrow, sum_all
from mobility.errors import EmptySegment, IndivisibleLength
from mobility.model.blocks import AttentionCounter, BlockParams, gated_block
from mobility.model.tokenizer import (
    HierarchicalTokenizer,
    PoolParams,
    inter_attention,
    intra_attention,
    mean_pool,
    pool_with_weights,
    segment,
)


def _layer_norm(x, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(((x - mu) ** 2).mean(axis=-1, keepdims=True) + eps)


def _gelu(x):
    return 0.5 * x * (1.0 + np.tanh(0.7978845608 * (x + 0.044715 * x ** 3)))


class TestGatedBlock:

    def test_single_position_expansion(self, rng):
        params = BlockParams.initialize(8, 2, rng)
        x = rng.normal(size=(1, 8))
        out = gated_block(Tensor(x), params).values

        z = x + _layer_norm(x) @ params.w_v.values @ params.w_out.values
        h = _layer_norm(z)
        gate = 1.0 / (1.0 + np.exp(-(h @ params.w_gate.values)))
        expected = z + (_gelu(h @ params.w_1.values) @ params.w_2.values) * gate
        np.testing.assert_allclose(out, expected, rtol=1e-10, atol=1e-12)

    def test_zero_output_projections_are_identity(self, rng):
        params = BlockParams.initialize(8, 4, rng)
        params.w_out.assign(np.zeros((8, 8)))
        params.w_2.assign(np.zeros((32, 8)))
        x = rng.normal(size=(3, 5, 8))
        np.testing.assert_array_equal(gated_block(Tensor(x), params).values, x)

    def test_gradients(self, rng):
        params = BlockParams.initialize(8, 2, rng)
        x = Tensor(rng.normal(size=(2, 3, 8)), requires_grad=True)
        weights = Tensor.constant(rng.normal(size=(2, 3, 8)))
        named = {**params.named_parameters('block'), 'x': x}
        errors = finite_diff_check_params(lambda: sum_all(mul(gated_block(x, params), weights)),
                                          named, max_coords=10)
        assert max(errors.values()) < 1e-5


class TestSegmentation:

    def test_week_of_days(self, rng):
        x = Tensor(rng.normal(size=(2, 336, 4)))
        segments = segment(x, 48)
        assert segments.shape == (2, 7, 48, 4)
        parts = [narrow(segments, 1, i, i + 1) for i in range(7)]
        rebuilt = concat(parts, axis=2).values.reshape(2, 336, 4)
        np.testing.assert_array_equal(rebuilt, x.values)

    def test_single_segment(self, rng):
        assert segment(Tensor(rng.normal(size=(336, 4))), 336).shape == (1, 336, 4)

    def test_indivisible(self, rng):
        with pytest.raises(IndivisibleLength):
            segment(Tensor(rng.normal(size=(100, 4))), 48)


class TestSegmentAttention:

    def test_zero_layers_is_identity(self, rng):
        x = Tensor(rng.normal(size=(7, 48, 8)))
        assert intra_attention(x, []) is x
        assert inter_attention(x, []) is x

    def test_identical_segments_identical_outputs(self, rng):
        day = rng.normal(size=(1, 12, 8))
        layers = [BlockParams.initialize(8, 2, rng) for _ in range(2)]
        out = intra_attention(Tensor(np.concatenate([day, day, rng.normal(size=(1, 12, 8))])), layers).values
        np.testing.assert_allclose(out[0], out[1], rtol=1e-12, atol=1e-14)
        assert out.shape == (3, 12, 8)

    def test_single_token_inter_matches_block(self, rng):
        params = BlockParams.initialize(8, 2, rng)
        x = Tensor(rng.normal(size=(1, 8)))
        np.testing.assert_array_equal(inter_attention(x, [params]).values, gated_block(x, params).values)


class TestPooling:

    def test_identical_rows_pool_to_value(self, rng):
        params = PoolParams.initialize(6, rng)
        row = rng.normal(size=6)
        pooled, weights = pool_with_weights(Tensor(np.tile(row, (5, 1))), params)
        np.testing.assert_allclose(pooled.values, row @ params.w_value.values)
        np.testing.assert_allclose(weights.values, 0.2)

    def test_weights_form_convex_combination(self, rng):
        params = PoolParams.initialize(6, rng)
        params.query.assign(params.query.values * 2.0)
        refined = Tensor(rng.normal(size=(3, 9, 6)))
        pooled, weights = pool_with_weights(refined, params)
        w = weights.values
        assert (w >= 0).all()
        np.testing.assert_allclose(w.sum(axis=-1), 1.0)
        values = refined.values @ params.w_value.values
        np.testing.assert_allclose(pooled.values, np.einsum('bl,bld->bd', w, values))

    def test_mean_pool(self, rng):
        x = rng.normal(size=(4, 5, 3))
        np.testing.assert_allclose(mean_pool(Tensor(x)).values, x.mean(axis=1))

    def test_empty_segment(self, rng):
        with pytest.raises(EmptySegment):
            pool_with_weights(Tensor(np.zeros((0, 6))), PoolParams.initialize(6, rng))


class TestTokenizer:

    def test_token_per_day(self, rng):
        tokenizer = HierarchicalTokenizer(tiny_model_config(), rng)
        tokens = tokenizer(Tensor(rng.normal(size=(2, 336, 16))))
        assert tokens.shape == (2, 7, 16)

    def test_attention_cost_at_default_size(self, rng):
        tokenizer = HierarchicalTokenizer(ModelConfig(), rng)
        counter = AttentionCounter()
        tokenizer(Tensor(rng.normal(size=(1, 336, 64))), counter=counter)
        assert counter.get('intra') == 7 * 48 * 48
        assert counter.get('inter') == 49
        summary = counter.complexity_summary(336, 48)
        assert summary['history_entries'] == 16177
        assert summary['dense_history_entries'] == 112896
        assert summary['ratio'] >= 5.0

    def test_eval_mode_ignores_dropout(self):
        x = Tensor(np.random.default_rng(9).normal(size=(1, 336, 16)))
        a = HierarchicalTokenizer(tiny_model_config(dropout=0.0), np.random.default_rng(1))
        b = HierarchicalTokenizer(tiny_model_config(dropout=0.5), np.random.default_rng(1))
        np.testing.assert_array_equal(a(x, training=False).values, b(x, training=False).values)

    def test_training_dropout_is_seeded(self):
        x = Tensor(np.random.default_rng(9).normal(size=(1, 336, 16)))
        tokenizer = HierarchicalTokenizer(tiny_model_config(dropout=0.5), np.random.default_rng(1))
        first = tokenizer(x, training=True, rng=np.random.default_rng(3)).values
        second = tokenizer(x, training=True, rng=np.random.default_rng(3)).values
        np.testing.assert_array_equal(first, second)
        assert not np.array_equal(first, tokenizer(x, training=False).values)

    def test_mean_pooling_has_no_pool_parameters(self, rng):
        tokenizer = HierarchicalTokenizer(tiny_model_config(pooling='mean'), rng)
        assert not any(name.startswith('pool.') for name in tokenizer.named_parameters())
        assert tokenizer(Tensor(rng.normal(size=(336, 16)))).shape == (7, 16)
