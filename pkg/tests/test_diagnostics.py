import numpy as np

from dymoe.config import TrainConfig
from dymoe.diagnostics import expert_specialization, gate_accuracy, specialized_blocks, write_specialization_csv
from dymoe.graph import SynthConfig, synth_gaussian_sequence
from dymoe.metrics import average_accuracy
from dymoe.trainer import run_incremental

FAST = dict(epochs=4, balancing_epochs=2, embedding_dim=16, learning_rate=1e-3, fanout=5)


def test_single_block_table_equals_diagonal():
    seq = synth_gaussian_sequence(SynthConfig(num_blocks=1, nodes_per_block=60, dim=8, seed=4))
    cfg = TrainConfig(**FAST)
    res = run_incremental(seq, cfg)
    table = expert_specialization(res.model, seq, cfg.fanout, cfg.seed)
    assert table.shape == (1, 1)
    assert table[0, 0] == average_accuracy(res.metrics)
    assert gate_accuracy(res.model, seq, cfg.fanout) == 1.0


def test_specialized_blocks_reads_column_argmax():
    table = np.array([[0.9, 0.2, 0.5], [0.1, 0.8, 0.6], [0.0, 0.1, 0.4]])
    assert specialized_blocks(table).tolist() == [True, True, False]
    assert specialized_blocks(np.eye(4)).all()


def test_table_shape_and_csv(small_synth, tmp_path):
    cfg = TrainConfig(**FAST)
    res = run_incremental(small_synth, cfg)
    table = expert_specialization(res.model, small_synth, cfg.fanout, cfg.seed)
    assert table.shape == (3, 3) and np.all((table >= 0) & (table <= 1))
    assert 0.0 <= gate_accuracy(res.model, small_synth, cfg.fanout) <= 1.0
    text = write_specialization_csv(tmp_path / "s.csv", table).read_text().splitlines()
    assert text[0] == "expert,block1,block2,block3" and len(text) == 4
