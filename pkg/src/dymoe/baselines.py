"""Pretrain, online and retrain baselines plus the parameter-isolation combiner.

The baselines reuse the DyMoE backbone with a single expert per layer, no
arrival scores and dense gating (which is the identity for one expert), so
the mixture machinery is the only difference from the full model.
"""

from __future__ import annotations

import time

import numpy as np

from . import diffmath as dm
from .config import TrainConfig, rng_stream
from .diffmath import ShapeError
from .graph import GraphBlockSequence
from .layer import add_expert
from .losses import LossConfig
from .metrics import MetricsMatrix, record, set_cell
from .model import ModelState, checkpoint_bytes, init_model
from .optim import Adam
from .trainer import RunResult, TrainLog, accuracy, evaluate_upto, leakage_report, reset_views, train_epochs

NO_AUX = LossConfig(gamma=0.0, delta=0.0)


def single_expert_model(seq: GraphBlockSequence, cfg: TrainConfig, rng: np.random.Generator) -> ModelState:
    """Backbone with exactly one expert per layer and no arrival scores."""
    model = init_model(seq.num_features, cfg.embedding_dim, cfg.layer_count, 1, "dense", rng,
                       use_arrival=False)
    for layer in model.layers:
        add_expert(layer, None, rng)
    return model


def _fit(model: ModelState, seq: GraphBlockSequence, t: int, nodes: np.ndarray, cfg: TrainConfig,
         rng: np.random.Generator, train_log: TrainLog, epoch_times: list) -> None:
    model.widen_readout(np.unique(seq.labels[seq.blocks <= t]), rng)
    opt = Adam(cfg.learning_rate, cfg.weight_decay)
    train_epochs(model, seq.snapshot(t), nodes, cfg.epochs, cfg, NO_AUX, opt, rng,
                 train_log, t, 1, epoch_times)


def _finish(model, matrix, checkpoints, train_log, walls, seq, t_total, epoch_times) -> RunResult:
    return RunResult(model, matrix, checkpoints, train_log, walls, leakage_report(seq, t_total),
                     None, epoch_times)


def pretrain_run(seq: GraphBlockSequence, cfg: TrainConfig, num_blocks: int | None = None) -> RunResult:
    """Train on block 1 only and never again.

    Block ``i`` is scored once, on snapshot ``i`` when it first appears, and
    that value is carried along the row: the frozen model has no way to change
    its predictions for block ``i`` other than through later neighbors, and a
    frozen-model row is meant to show zero forgetting.
    """
    t_total = num_blocks or seq.num_blocks
    reset_views(seq)
    model = single_expert_model(seq, cfg, rng_stream(cfg.seed, "init"))
    rng = rng_stream(cfg.seed, "train", 1)
    train_log, epoch_times = TrainLog(), {1: []}
    start = time.perf_counter()
    _fit(model, seq, 1, seq.nodes_where(block=1, split="train"), cfg, rng, train_log, epoch_times[1])
    walls = [time.perf_counter() - start] + [0.0] * (t_total - 1)
    blob = checkpoint_bytes(model)
    matrix = MetricsMatrix(t_total)
    for i in range(1, t_total + 1):
        nodes = seq.nodes_where(block=i, split="test")
        correct, total = accuracy(model, seq, seq.snapshot(i), nodes, cfg.fanout,
                                  rng_stream(cfg.seed, "eval", i, i))
        record(matrix, i, i, correct, total)
        for j in range(i + 1, t_total + 1):
            set_cell(matrix, i, j, matrix.get(i, i))
    return _finish(model, matrix, [blob] * t_total, train_log, walls, seq, t_total, epoch_times)


def online_run(seq: GraphBlockSequence, cfg: TrainConfig, num_blocks: int | None = None) -> RunResult:
    """Fine-tune one model on each new block's training nodes, no replay."""
    t_total = num_blocks or seq.num_blocks
    reset_views(seq)
    model = single_expert_model(seq, cfg, rng_stream(cfg.seed, "init"))
    matrix, train_log = MetricsMatrix(t_total), TrainLog()
    checkpoints, walls, epoch_times = [], [], {}
    for t in range(1, t_total + 1):
        start = time.perf_counter()
        epoch_times[t] = []
        rng = rng_stream(cfg.seed, "train", t)
        _fit(model, seq, t, seq.nodes_where(block=t, split="train"), cfg, rng, train_log, epoch_times[t])
        walls.append(time.perf_counter() - start)
        evaluate_upto(model, seq, t, matrix, cfg)
        checkpoints.append(checkpoint_bytes(model))
    return _finish(model, matrix, checkpoints, train_log, walls, seq, t_total, epoch_times)


def retrain_run(seq: GraphBlockSequence, cfg: TrainConfig, num_blocks: int | None = None) -> RunResult:
    """Train a fresh model on every training node of snapshot ``i``, for each ``i``.

    Every fresh model starts from the same initialization as the other
    baselines, so all three agree exactly on the first cell.
    """
    t_total = num_blocks or seq.num_blocks
    reset_views(seq)
    matrix, train_log = MetricsMatrix(t_total), TrainLog()
    checkpoints, walls, epoch_times = [], [], {}
    model = None
    for t in range(1, t_total + 1):
        start = time.perf_counter()
        epoch_times[t] = []
        model = single_expert_model(seq, cfg, rng_stream(cfg.seed, "init"))
        rng = rng_stream(cfg.seed, "train", t)
        nodes = seq.nodes_where(split="train", max_block=t)
        _fit(model, seq, t, nodes, cfg, rng, train_log, epoch_times[t])
        walls.append(time.perf_counter() - start)
        evaluate_upto(model, seq, t, matrix, cfg)
        checkpoints.append(checkpoint_bytes(model))
    return _finish(model, matrix, checkpoints, train_log, walls, seq, t_total, epoch_times)


def pi_combine(f1_logits, f2_logits) -> np.ndarray:
    """Parameter-isolation combination ``softmax(f1 + f2)``."""
    f1 = np.asarray(f1_logits, dtype=np.float64)
    f2 = np.asarray(f2_logits, dtype=np.float64)
    if f1.shape != f2.shape:
        raise ShapeError(f"logit shapes differ: {f1.shape} vs {f2.shape}")
    return dm.softmax(dm.DiffValue(f1 + f2), axis=-1).data
