import numpy as np
import pytest

from dymoe.graph import build_ego_batch
from dymoe.layer import add_expert
from dymoe.model import CheckpointError, checkpoint_bytes, forward, init_model, load_checkpoint, save_checkpoint

from .conftest import tiny_sequence


def _model(seed=0, t=2, mode="sparse", use_arrival=True):
    seq = tiny_sequence()
    rng = np.random.default_rng(seed)
    model = init_model(seq.num_features, 6, 2, 2, mode, rng, use_arrival=use_arrival)
    for _ in range(t):
        for layer in model.layers:
            add_expert(layer, None, rng)
    model.widen_readout([4, 1, 0], rng)
    return seq, model


def test_checkpoint_round_trip(tmp_path):
    seq, model = _model()
    model.freeze_input()
    path = save_checkpoint(model, tmp_path / "m.bin")
    again = load_checkpoint(path)
    assert checkpoint_bytes(again) == path.read_bytes()
    assert again.classes == [4, 1, 0] and again.t == 2 and again.mode == "sparse" and again.input_frozen
    batch = build_ego_batch(seq.snapshot(3), np.arange(10), 2, None, np.random.default_rng(0))
    a = forward(model, batch).logits.data
    b = forward(again, batch).logits.data
    assert a.tobytes() == b.tobytes()
    assert not any(p.requires_grad for p in again.layers[0].experts[0].params())
    assert all(p.requires_grad for p in again.layers[0].experts[1].params())


def test_checkpoint_without_arrival_gates():
    _, model = _model(use_arrival=False, mode="dense")
    again = load_checkpoint(checkpoint_bytes(model))
    assert not again.layers[0].use_arrival and again.mode == "dense"


def test_checkpoint_rejects_garbage():
    _, model = _model()
    blob = checkpoint_bytes(model)
    with pytest.raises(CheckpointError):
        load_checkpoint(b"NOTACKPT" + blob[8:])
    with pytest.raises(CheckpointError):
        load_checkpoint(blob + b"\x00")


def test_readout_widening_keeps_old_rows():
    _, model = _model()
    old = model.readout_w.data.copy()
    model.widen_readout([1, 7], np.random.default_rng(3))
    assert model.classes == [4, 1, 0, 7]
    np.testing.assert_array_equal(model.readout_w.data[:3], old)
    assert model.class_index([7, 4]).tolist() == [3, 0]
    with pytest.raises(KeyError):
        model.class_index([99])


def test_trainable_excludes_frozen_input_and_old_experts():
    _, model = _model(t=3)
    model.freeze_input()
    train = {id(p) for p in model.trainable()}
    assert id(model.input_w) not in train
    for layer in model.layers:
        assert not any(id(p) in train for e in layer.experts[:2] for p in e.params())
