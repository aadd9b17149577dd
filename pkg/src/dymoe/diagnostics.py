"""Expert specialization and gate routing diagnostics for trained models."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .config import rng_stream
from .graph import GraphBlockSequence
from .model import ModelState
from .trainer import accuracy, run_inference


def expert_specialization(model: ModelState, seq: GraphBlockSequence, fanout: int | None = 10,
                          seed: int = 0, snapshot: int | None = None) -> np.ndarray:
    """``(t, t)`` table: entry ``(e, b)`` is block-``b`` test accuracy with every
    layer's gate pinned to expert ``e`` (0-based rows and columns).

    Arrival scores stay as learned.  Evaluation uses the latest snapshot the
    model has been trained on unless ``snapshot`` is given.
    """
    t = model.t
    view = seq.snapshot(snapshot or t)
    table = np.zeros((t, t))
    for b in range(1, t + 1):
        nodes = seq.nodes_where(block=b, split="test")
        for e in range(t):
            correct, total = accuracy(model, seq, view, nodes, fanout,
                                      rng_stream(seed, "specialization", b), force_expert=e)
            table[e, b - 1] = correct / max(total, 1)
    return table


def specialized_blocks(table: np.ndarray) -> np.ndarray:
    """Boolean per block: does the column argmax pick the block's own expert?

    Ties resolve to the lowest expert index, as ``np.argmax`` does.
    """
    return np.argmax(table, axis=0) == np.arange(table.shape[1])


def gate_accuracy(model: ModelState, seq: GraphBlockSequence, fanout: int | None = 10,
                  seed: int = 0, snapshot: int | None = None) -> float:
    """Fraction of test nodes whose first-layer gate argmax is their own block."""
    t = model.t
    if t <= 1:
        return 1.0
    nodes = seq.nodes_where(split="test", max_block=t)
    if nodes.size == 0:
        return 1.0
    hits = 0
    view = seq.snapshot(snapshot or t)
    for targets, res, _ in run_inference(model, view, nodes, fanout, rng_stream(seed, "gate-accuracy")):
        raw = res.layer_outputs[0].raw_logits.data[: targets.size]
        hits += int((np.argmax(raw, axis=1) + 1 == seq.blocks[targets]).sum())
    return hits / nodes.size


def write_specialization_csv(path, table: np.ndarray) -> Path:
    """CSV with one row per expert and one column per block, both 1-based."""
    path = Path(path)
    t = table.shape[1]
    lines = ["expert," + ",".join(f"block{b}" for b in range(1, t + 1))]
    for e, row in enumerate(table, start=1):
        lines.append(f"{e}," + ",".join(f"{v:.6f}" for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path
