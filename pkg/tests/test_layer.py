import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dymoe import diffmath as dm
from dymoe.diffmath import DiffValue, ShapeError
from dymoe.expert import ExpertParams, forward_batch
from dymoe.graph import LayerBlock, build_ego_batch
from dymoe.layer import (add_expert, all_params, arrival_gate, compute_gates, gate_dense, gate_sparse,
                         layer_forward, new_layer, similarity, trainable_params)
from dymoe.optim import Adam

from .conftest import tiny_sequence


def _layer(t, n=4, k=2, seed=0, gates=None):
    rng = np.random.default_rng(seed)
    layer = new_layer(n, k, rng)
    for i in range(t):
        add_expert(layer, None if gates is None else gates[i], rng)
    return layer


def _checksum(params):
    return float(sum(np.sum(p.data) for p in params))


def test_similarity_examples():
    assert similarity([1, 0], [1, 0]) == 1.0
    assert similarity([1, 0], [0, 1]) == 0.0
    assert similarity([0.3, -2.0], [0.3, -2.0], kind="gaussian") == 0.0
    assert similarity([1, 0], [0, 0], kind="gaussian", sigma=1.0) == -0.5
    with pytest.raises(ShapeError):
        similarity([1, 0], [1, 0, 0])


def test_gate_dense_examples():
    assert gate_dense(np.ones(2), _layer(1, n=2)).alphas.tolist() == [1.0]
    x = np.array([1.0, 0.0])
    two = _layer(2, n=2, gates=[np.zeros(2), np.zeros(2)])
    np.testing.assert_allclose(gate_dense(x, two).alphas, [0.5, 0.5])
    skew = _layer(2, n=2, gates=[np.array([np.log(3.0), 0.0]), np.zeros(2)])
    np.testing.assert_allclose(gate_dense(x, skew).alphas, [0.75, 0.25], atol=1e-12)


def test_gate_sparse_top2_example():
    layer = _layer(3, n=3, k=2, gates=[np.array([0.9, 0, 0]), np.array([0.1, 0, 0]), np.array([0.5, 0, 0])])
    dec = gate_sparse(np.array([1.0, 0.0, 0.0]), layer, training=False)
    assert dec.selected.tolist() == [0, 2]
    np.testing.assert_allclose(dec.alphas, [0.5987, 0.0, 0.4013], atol=1e-4)
    e = np.exp([0.9, 0.5])
    np.testing.assert_allclose(dec.alphas[[0, 2]], e / e.sum(), atol=1e-12)


def test_gate_sparse_k1_is_one_hot():
    layer = _layer(3, n=3, k=1, gates=[np.array([0.2, 0, 0]), np.array([0.7, 0, 0]), np.array([0.1, 0, 0])])
    assert gate_sparse(np.array([1.0, 0, 0]), layer, training=False).alphas.tolist() == [0.0, 1.0, 0.0]


def test_gate_sparse_ties_prefer_lower_index():
    layer = _layer(3, n=2, k=1, gates=[np.zeros(2)] * 3)
    assert gate_sparse(np.ones(2), layer, training=False).selected.tolist() == [0]


def test_gate_sparse_training_needs_seed_determinism():
    layer = _layer(3, n=4, k=2, seed=1)
    x = np.random.default_rng(0).normal(size=4)
    a = gate_sparse(x, layer, training=True, rng_seed=3)
    b = gate_sparse(x, layer, training=True, rng_seed=3)
    assert a.alphas.tobytes() == b.alphas.tobytes()
    assert len(a.selected) == 2


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), t=st.integers(1, 5), k=st.integers(1, 6))
def test_sparse_equals_dense_when_k_covers_all(seed, t, k):
    layer = _layer(t, n=4, k=k, seed=seed)
    x = np.random.default_rng(seed).normal(size=4)
    sp = gate_sparse(x, layer, training=False)
    assert abs(sp.alphas.sum() - 1.0) <= 1e-12
    assert np.count_nonzero(sp.alphas) == min(k, t)
    if k >= t:
        assert sp.alphas.tobytes() == gate_dense(x, layer).alphas.tobytes()


def test_arrival_gate_examples():
    layer = _layer(2, n=2)
    layer.proj.data[...] = np.eye(2)
    layer.arrival[0].data[...] = 0.0
    layer.arrival[1].data[...] = [np.log(3.0), 0.0]
    assert arrival_gate([1.0, 5.0], 1, layer) == 0.5
    assert arrival_gate([1.0, 5.0], 2, layer) == pytest.approx(0.75, abs=1e-12)
    layer.arrival[1].data[...] = [-50.0, 0.0]
    b = arrival_gate([1.0, 0.0], 2, layer)
    assert b == dm.EPS and np.isfinite(np.log(b))
    with pytest.raises(IndexError):
        arrival_gate([1.0, 0.0], 3, layer)


def _star_block(d, n, seed=0):
    rng = np.random.default_rng(seed)
    h = DiffValue(rng.normal(size=(d + 1, n)))
    blk = LayerBlock(num_dst=1, nbr=np.arange(1, d + 1).reshape(1, d), mask=np.ones((1, d), dtype=bool))
    return h, blk


def test_single_expert_output_equals_expert():
    layer = _layer(1, k=1)
    layer.use_arrival = False
    h, blk = _star_block(3, 4)
    out = layer_forward(layer, h, blk).h.data
    ref = forward_batch(layer.experts[0], h, np.array([0]), blk.nbr, blk.mask).data
    assert out.tobytes() == ref.tobytes()


def test_forced_expert_equals_standalone():
    layer = _layer(3, k=2)
    layer.use_arrival = False
    h, blk = _star_block(4, 4, seed=1)
    out = layer_forward(layer, h, blk, force_expert=1).h.data
    ref = forward_batch(layer.experts[1], h, np.array([0]), blk.nbr, blk.mask).data
    np.testing.assert_allclose(out, ref, atol=1e-15)


def test_equal_experts_half_weights():
    layer = _layer(2, k=2, gates=[np.zeros(4), np.zeros(4)])
    layer.use_arrival = False
    layer.experts[1] = ExpertParams.from_arrays({f: getattr(layer.experts[0], f).data.copy()
                                                 for f in ExpertParams.FIELDS})
    h, blk = _star_block(3, 4, seed=2)
    res = layer_forward(layer, h, blk)
    np.testing.assert_allclose(res.alphas, [[0.5, 0.5]])
    ref = forward_batch(layer.experts[0], h, np.array([0]), blk.nbr, blk.mask).data
    np.testing.assert_allclose(res.h.data, ref, atol=1e-14)


def test_add_expert_bookkeeping_and_freezing():
    layer = _layer(2, k=2, seed=3)
    before = _checksum([p for e in layer.experts for p in e.params()])
    mean = np.array([0.5, -1.0, 2.0, 0.0])
    add_expert(layer, mean, np.random.default_rng(9))
    assert layer.t == 3
    assert len(layer.gates) == len(layer.noise) == len(layer.arrival) == 3
    assert layer.frozen_below == 2
    assert _checksum([p for e in layer.experts[:2] for p in e.params()]) == before
    np.testing.assert_array_equal(layer.gates[2].data, mean)
    bound = 1 / np.sqrt(4)
    assert all(np.all(np.abs(p.data) <= bound) for p in layer.experts[2].params())
    with pytest.raises(ShapeError):
        add_expert(layer, np.zeros(3), np.random.default_rng(0))


def test_trainable_params_sets():
    one = _layer(1)
    assert {id(p) for p in trainable_params(one)} == {id(p) for p in all_params(one)}
    three = _layer(3)
    train = {id(p) for p in trainable_params(three)}
    for e in three.experts[:2]:
        assert not any(id(p) in train for p in e.params())
    assert all(id(p) in train for p in three.experts[2].params())
    assert all(id(g) in train for g in three.gates + three.noise + three.arrival + [three.proj])


def test_optimizer_step_leaves_frozen_experts_unchanged():
    layer = _layer(3, k=3, seed=4)
    h, blk = _star_block(5, 4, seed=4)
    frozen = [p.data.copy() for e in layer.experts[:2] for p in e.params()]
    opt = Adam(lr=1e-2)
    for _ in range(3):
        res = layer_forward(layer, h, blk)
        dm.backward(dm.vsum(dm.mul(res.h, res.h)))
        opt.step(trainable_params(layer))
        opt.zero_grad(all_params(layer))
    after = [p.data for e in layer.experts[:2] for p in e.params()]
    assert all(a.tobytes() == b.tobytes() for a, b in zip(frozen, after))


def test_unselected_experts_get_zero_gradient():
    layer = _layer(3, k=1, seed=5)
    for e in layer.experts:
        e.set_trainable(True)
    h, blk = _star_block(3, 4, seed=5)
    res = layer_forward(layer, h, blk, mode="sparse")
    chosen = int(np.nonzero(res.selected[0])[0][0])
    dm.backward(dm.vsum(res.h))
    for j, e in enumerate(layer.experts):
        total = sum(np.abs(p.grad).sum() for p in e.params())
        assert (total > 0) == (j == chosen)


def test_alphas_sum_to_one_in_batch():
    layer = _layer(4, k=2, seed=6)
    h = DiffValue(np.random.default_rng(6).normal(size=(7, 4)))
    for mode in ("dense", "sparse"):
        _, alpha, mask = compute_gates(layer, h, mode, training=False)
        np.testing.assert_allclose(alpha.data.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(alpha.data[~mask] == 0)


def test_perfect_recovery_on_later_snapshot():
    """Forcing expert j with exact arrival labels reproduces the snapshot-j output."""
    seq = tiny_sequence()
    layer = _layer(3, n=4, k=3, seed=7)
    for j in (1, 2):
        targets = seq.nodes_where(max_block=j)
        outs = []
        for snap in (j, 3):
            view = seq.snapshot(snap)
            batch = build_ego_batch(view, targets, 1, None, np.random.default_rng(0))
            res = layer_forward(layer, DiffValue(batch.features), batch.layers[0], force_expert=j - 1,
                                exact_beta_blocks=batch.blocks[0])
            outs.append(res.h.data)
        assert np.max(np.abs(outs[0] - outs[1])) <= 1e-6
