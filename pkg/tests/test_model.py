import math

import numpy as np
import pytest

from conftest import tiny_train_config
from mobility.core.container import read_container, write_container
from mobility.core.tensor import ComputationTape, Tensor
from mobility.core.trajectory import GridSpec, MISSING, SampleBatch
from mobility.data.loader import build_samples
from mobility.errors import AllTargetsMissing, ChecksumMismatch, DimMismatch, ShapeMismatch, UsageError
from mobility.model.backbone import (
    BackboneSpec,
    FrozenRandomBackbone,
    IdentityBackbone,
    LoadedBackbone,
    get_backbone,
    save_backbone,
)
from mobility.model.blocks import AttentionCounter
from mobility.model.predictor import (
    HeadParams,
    build_model,
    fuse,
    predict_distribution,
    rank_locations,
    sequence_loss,
)
from mobility.semantic.cache import SemanticContext
from mobility.semantic.stub import StubEmbedder
from mobility.training.gradcheck import run_gradcheck


@pytest.fixture
def batch_inputs(small_dataset, grid):
    samples = [s for t in small_dataset.trajectories for s in build_samples(t, grid)][:3]
    te_hist, te_task = SemanticContext(StubEmbedder(16), grid).for_batch(samples)
    return SampleBatch.from_samples(samples), te_hist, te_task


class TestFusion:

    def test_zero_embeddings(self, rng):
        tokens = Tensor(rng.normal(size=(2, 7, 4)))
        future = Tensor(rng.normal(size=(2, 48, 4)))
        fused = fuse(tokens, np.zeros((2, 7, 4)), future, np.zeros((2, 4)))
        assert fused.history_positions == 7
        assert fused.horizon == 48
        np.testing.assert_array_equal(fused.sequence.values,
                                      np.concatenate([tokens.values, future.values], axis=1))

    def test_task_embedding_broadcast(self, rng):
        task = rng.normal(size=(1, 4))
        fused = fuse(Tensor(np.zeros((1, 7, 4))), np.zeros((1, 7, 4)), Tensor(np.zeros((1, 48, 4))), task)
        np.testing.assert_array_equal(fused.sequence.values[0, 7:], np.tile(task, (48, 1)))
        np.testing.assert_array_equal(fused.sequence.values[0, :7], 0.0)

    def test_linear_in_embeddings(self, rng):
        tokens = Tensor(rng.normal(size=(7, 4)))
        future = Tensor(rng.normal(size=(48, 4)))
        h1, h2 = rng.normal(size=(2, 7, 4))
        t1, t2 = rng.normal(size=(2, 4))
        base = fuse(tokens, np.zeros((7, 4)), future, np.zeros(4)).sequence.values
        one = fuse(tokens, h1, future, t1).sequence.values - base
        two = fuse(tokens, h2, future, t2).sequence.values - base
        both = fuse(tokens, h1 + h2, future, t1 + t2).sequence.values - base
        np.testing.assert_allclose(both, one + two, atol=1e-12)

    def test_disabled_terms(self, rng):
        tokens = Tensor(rng.normal(size=(7, 4)))
        future = Tensor(rng.normal(size=(48, 4)))
        fused = fuse(tokens, rng.normal(size=(7, 4)), future, rng.normal(size=4),
                     use_traj_info=False, use_task_desc=False)
        np.testing.assert_array_equal(fused.sequence.values,
                                      np.concatenate([tokens.values, future.values]))

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeMismatch):
            fuse(Tensor(np.zeros((7, 4))), np.zeros((6, 4)), Tensor(np.zeros((48, 4))), np.zeros(4))
        with pytest.raises(ShapeMismatch):
            fuse(Tensor(np.zeros((7, 4))), np.zeros((7, 4)), Tensor(np.zeros((48, 4))), np.zeros(5))


class TestBackbone:

    def test_identity(self, rng):
        x = Tensor(rng.normal(size=(2, 55, 16)))
        np.testing.assert_array_equal(IdentityBackbone(16).forward(x).values, x.values)

    def test_frozen_random_deterministic(self, rng):
        x = Tensor(rng.normal(size=(1, 10, 16)))
        a, b = FrozenRandomBackbone(16, 2, 4, seed=7), FrozenRandomBackbone(16, 2, 4, seed=7)
        assert a.checksum() == b.checksum()
        np.testing.assert_array_equal(a.forward(x).values, b.forward(x).values)
        assert a.checksum() != FrozenRandomBackbone(16, 2, 4, seed=8).checksum()
        assert all(p.frozen for p in a.named_parameters().values())

    def test_width_mismatch(self, rng):
        with pytest.raises(DimMismatch):
            FrozenRandomBackbone(16, 1, 4).forward(Tensor(rng.normal(size=(3, 8))))

    def test_counter_records_backbone(self, rng):
        counter = AttentionCounter()
        FrozenRandomBackbone(16, 1, 4).forward(Tensor(rng.normal(size=(1, 55, 16))), counter)
        assert counter.get('backbone') == 55 * 55

    def test_export_and_load(self, tmp_path, rng):
        backbone = FrozenRandomBackbone(16, 2, 4, seed=3)
        path = tmp_path / 'backbone.bin'
        save_backbone(backbone, path)
        loaded = get_backbone(BackboneSpec.parse(f'load:{path}'), 16)
        assert isinstance(loaded, LoadedBackbone)
        assert loaded.checksum() == backbone.checksum()
        x = Tensor(rng.normal(size=(1, 9, 16)))
        np.testing.assert_array_equal(loaded.forward(x).values, backbone.forward(x).values)

    def test_tampered_file(self, tmp_path):
        path = tmp_path / 'backbone.bin'
        save_backbone(FrozenRandomBackbone(16, 1, 4), path)
        meta, tensors = read_container(path)
        tensors['backbone.0.w_q'] = tensors['backbone.0.w_q'] + 1e-3
        write_container(path, meta, tensors)
        with pytest.raises(ChecksumMismatch):
            LoadedBackbone(path, 16)

    def test_expected_checksum(self, tmp_path):
        path = tmp_path / 'backbone.bin'
        save_backbone(FrozenRandomBackbone(16, 1, 4), path)
        with pytest.raises(ChecksumMismatch):
            LoadedBackbone(path, 16, expected_checksum='0' * 64)
        with pytest.raises(DimMismatch):
            LoadedBackbone(path, 32)

    def test_spec_parsing(self):
        assert BackboneSpec.parse('frozen-random:3:2', seed=5) == BackboneSpec('frozen-random', 3, 2, 5)
        assert str(BackboneSpec.parse('frozen-random:3:2')) == 'frozen-random:3:2'
        assert BackboneSpec.parse('identity').variant == 'identity'
        for bad in ('frozen-random:x', 'frozen-random:0:4', 'load:', 'gpt'):
            with pytest.raises(UsageError):
                BackboneSpec.parse(bad)


class TestHead:

    def test_zero_head_is_uniform(self, rng):
        head = HeadParams.initialize(8, 100, rng)
        head.w_o.assign(np.zeros((8, 100)))
        probs = predict_distribution(Tensor(rng.normal(size=(3, 8))), head).values
        np.testing.assert_allclose(probs, 1.0 / 100)

    def test_bias_shift_keeps_ranking(self, rng):
        head = HeadParams.initialize(8, 50, rng)
        hidden = Tensor(rng.normal(size=(4, 8)))
        before = predict_distribution(hidden, head).values
        head.b_o.assign(head.b_o.values + 3.0)
        after = predict_distribution(hidden, head).values
        np.testing.assert_allclose(before, after, atol=1e-12)
        np.testing.assert_array_equal(before.argmax(axis=-1), after.argmax(axis=-1))

    def test_ranking_order(self):
        logits = np.array([[0.1, 3.0, 3.0, -1.0, 2.0]])
        np.testing.assert_array_equal(rank_locations(logits, 3), [[1, 2, 4]])
        np.testing.assert_array_equal(rank_locations(logits), [[1, 2, 4, 0, 3]])

    def test_uniform_loss_full_vocabulary(self):
        v = 40_000
        targets = np.arange(48) * 800
        loss = sequence_loss(Tensor(np.zeros((1, 48, v))), targets[None, :])
        assert abs(loss.item() - math.log(v)) < 1e-9

    def test_missing_targets_are_masked(self, rng):
        logits = rng.normal(size=(2, 4, 6))
        targets = np.array([[1, MISSING, 5, MISSING], [MISSING, 0, MISSING, MISSING]])
        log_p = logits - np.log(np.exp(logits).sum(axis=-1, keepdims=True))
        expected = -np.mean([log_p[0, 0, 1], log_p[0, 2, 5], log_p[1, 1, 0]])
        assert abs(sequence_loss(Tensor(logits), targets).item() - expected) < 1e-12

    def test_all_missing(self):
        with pytest.raises(AllTargetsMissing):
            sequence_loss(Tensor(np.zeros((1, 3, 4))), np.full((1, 3), MISSING))


class TestModel:

    def test_logits_shape(self, batch_inputs, grid):
        batch, te_hist, te_task = batch_inputs
        model = build_model(tiny_train_config(), grid)
        counter = AttentionCounter()
        logits = model.forward(batch, te_hist, te_task, counter=counter)
        assert logits.shape == (3, 48, 100)
        assert counter.get('intra') == 7 * 48 * 48
        assert counter.get('backbone') == 55 * 55
        assert model.rankings(batch, te_hist, te_task).shape == (3, 48, 5)

    def test_full_ranking_orders_every_cell(self, batch_inputs, grid):
        batch, te_hist, te_task = batch_inputs
        model = build_model(tiny_train_config(), grid)
        full = model.rankings(batch, te_hist, te_task, full=True)
        assert full.shape == (3, 48, 100)
        np.testing.assert_array_equal(np.sort(full, axis=-1), np.broadcast_to(np.arange(100), full.shape))
        np.testing.assert_array_equal(full[..., :5], model.rankings(batch, te_hist, te_task))

    def test_optimizer_view_excludes_backbone(self, grid):
        model = build_model(tiny_train_config(), grid)
        trainable = model.named_parameters()
        assert not any(p.frozen for p in trainable.values())
        assert not set(trainable) & set(model.frozen_parameters())
        assert model.frozen_parameters()

    def test_every_trainable_tensor_gets_gradient(self, batch_inputs, grid):
        batch, te_hist, te_task = batch_inputs
        model = build_model(tiny_train_config(), grid)
        with ComputationTape() as tape:
            loss = sequence_loss(model.forward(batch, te_hist, te_task), batch.targets)
        tape.backward(loss)
        for name, p in model.named_parameters().items():
            assert p.grad is not None and np.linalg.norm(p.grad) > 0, name

    def test_dense_history_path(self, batch_inputs, grid):
        batch, te_hist, te_task = batch_inputs
        model = build_model(tiny_train_config(no_tokenization=True), grid)
        counter = AttentionCounter()
        assert model.forward(batch, te_hist, te_task, counter=counter).shape == (3, 48, 100)
        assert counter.get('dense_history') == 336 * 336
        assert counter.get('backbone') == (336 + 48) ** 2
        assert not any(name.startswith(('intra', 'inter', 'pool')) for name in model.named_parameters())

    def test_no_hierarchical_attention(self, grid):
        model = build_model(tiny_train_config(no_hierarchical_attention=True), grid)
        names = set(model.named_parameters())
        assert 'pool.query' in names
        assert not any(name.startswith(('intra', 'inter')) for name in names)

    def test_state_dict_roundtrip(self, batch_inputs, grid):
        batch, te_hist, te_task = batch_inputs
        a = build_model(tiny_train_config(), grid)
        b = build_model(tiny_train_config(), grid)
        for p in b.named_parameters().values():
            p.assign(p.values + 0.5)
        assert not np.array_equal(a.forward(batch, te_hist, te_task).values,
                                  b.forward(batch, te_hist, te_task).values)
        b.load_state_dict(a.state_dict())
        np.testing.assert_array_equal(a.forward(batch, te_hist, te_task).values,
                                      b.forward(batch, te_hist, te_task).values)

    def test_end_to_end_gradients(self):
        result = run_gradcheck(dim=16, grid=GridSpec(10, 10), users=2, seed=0)
        assert result.max_error < 1e-4, result.worst
        assert result.backbone_unchanged
        assert result.frozen_in_optimizer == 0
