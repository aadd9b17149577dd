"""Shared experiment plumbing for the acceptance suite and the scripts.

Holds the desk-scale synthetic settings, a method dispatcher, the
perfect-recovery measurement and the sparse-versus-dense epoch timer.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .baselines import online_run, pretrain_run, retrain_run
from .config import TrainConfig, rng_stream
from .diagnostics import expert_specialization, gate_accuracy, specialized_blocks
from .graph import GraphBlockSequence, SynthConfig, synth_gaussian_sequence
from .losses import LossConfig
from .metrics import average_accuracy, average_forgetting
from .model import load_checkpoint
from .optim import Adam
from .trainer import RunResult, TrainLog, embed, run_incremental, train_epochs

ACCEPTANCE_SYNTH = SynthConfig(num_blocks=5, classes_per_block=2, nodes_per_block=200, dim=16)
STRETCHED_SYNTH = SynthConfig(num_blocks=8, classes_per_block=2, nodes_per_block=200, dim=16)
RUNNERS = {"dymoe": run_incremental, "pretrain": pretrain_run, "online": online_run,
           "retrain": retrain_run}


def synth(base: SynthConfig, seed: int) -> GraphBlockSequence:
    return synth_gaussian_sequence(dataclasses.replace(base, seed=seed))


def acceptance_config(seed: int, **changes) -> TrainConfig:
    """Defaults with ``p = 0.05`` and ``k = 3`` unless overridden."""
    values = dict(p=0.05, k=3, seed=seed)
    values.update(changes)
    return TrainConfig(**values)


def run_method(method: str, seq: GraphBlockSequence, cfg: TrainConfig) -> RunResult:
    return RUNNERS[method](seq, cfg)


def summarize(result: RunResult, seq: GraphBlockSequence | None = None, cfg: TrainConfig | None = None) -> dict:
    """AA, AF and leakage totals; with ``seq`` and ``cfg``, also routing diagnostics."""
    out = {
        "AA": average_accuracy(result.metrics),
        "AF": average_forgetting(result.metrics),
        "diagonal": result.metrics.diagonal(),
        "violations": int(sum(v["violations"] for v in result.leakage.values())),
        "max_block_ok": all(v["max_block_seen"] <= b for b, v in result.leakage.items()),
        "wall_time": float(sum(result.wall_times)),
    }
    if seq is not None and cfg is not None and result.model.t > 1 and result.model.layers[0].use_arrival:
        table = expert_specialization(result.model, seq, cfg.fanout, cfg.seed)
        out["specialization"] = table.tolist()
        out["specialized"] = specialized_blocks(table).tolist()
        out["gate_accuracy"] = gate_accuracy(result.model, seq, cfg.fanout, cfg.seed)
    return out


def recovery_error(seq: GraphBlockSequence, old_blob: bytes, new_blob: bytes, old_block: int = 1,
                   expert: int = 1) -> float:
    """Max-norm gap between an old checkpoint's embeddings and a later one's
    with gates pinned to ``expert`` (1-based) and exact arrival masks.

    Full neighborhoods are used on both sides so the only difference is the
    later snapshot's extra nodes and edges.
    """
    old, new = load_checkpoint(old_blob), load_checkpoint(new_blob)
    nodes = seq.nodes_where(block=old_block)
    kwargs = dict(force_expert=expert - 1, exact_beta=True)
    a = embed(old, seq.snapshot(old_block), nodes, None, np.random.default_rng(0), **kwargs)
    b = embed(new, seq.snapshot(new.t), nodes, None, np.random.default_rng(0), **kwargs)
    return float(np.max(np.abs(a - b)))


def epoch_time_ratio(seq: GraphBlockSequence, blob: bytes, cfg: TrainConfig, repeats: int = 3) -> dict:
    """Median per-epoch training time in sparse and dense mode from one checkpoint.

    Both copies start from the same parameters and train on the same nodes;
    epochs alternate between the modes so drift in machine load hits both.
    """
    models = {m: load_checkpoint(blob) for m in ("sparse", "dense")}
    t = models["sparse"].t
    nodes = seq.nodes_where(split="train", max_block=t)
    view = seq.snapshot(t)
    loss_cfg = LossConfig(cfg.gamma, cfg.delta)
    times = {m: [] for m in models}
    opts = {m: Adam(cfg.learning_rate, cfg.weight_decay) for m in models}
    for r in range(repeats):
        for mode, model in models.items():
            model.mode = mode
            train_epochs(model, view, nodes, 1, cfg, loss_cfg, opts[mode], rng_stream(cfg.seed, "timing", r),
                         TrainLog(), t, 1, times[mode])
    sparse, dense = float(np.median(times["sparse"])), float(np.median(times["dense"]))
    return {"sparse": sparse, "dense": dense, "ratio": sparse / dense}
