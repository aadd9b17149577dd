"""Incremental training loop: expert growth, two-stage training, evaluation."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffmath as dm
from .config import TrainConfig, rng_stream
from .graph import GraphBlockSequence, GraphView, build_ego_batch
from .layer import add_expert, layer_forward
from .losses import LossConfig, block_guided_loss, graph_block_guided_loss, total_loss
from .memory import MemoryBank, select_by_representativeness, training_mix
from .metrics import MetricsMatrix, record
from .model import ModelState, checkpoint_bytes, embed_input, forward, init_model
from .optim import Adam

log = logging.getLogger(__name__)

LOG_COLUMNS = ("block", "stage", "epoch", "L_cls", "L_BL", "L_GBL", "total")


class SequencingError(RuntimeError):
    pass


@dataclass
class TrainLog:
    rows: list[tuple] = field(default_factory=list)

    def add(self, *row) -> None:
        self.rows.append(row)

    def to_csv(self, path) -> Path:
        path = Path(path)
        lines = [",".join(LOG_COLUMNS)]
        for r in self.rows:
            lines.append(",".join(f"{x:.6g}" if isinstance(x, float) else str(x) for x in r))
        path.write_text("\n".join(lines) + "\n")
        return path


def minibatches(nodes: np.ndarray, batch_size: int, rng: np.random.Generator):
    nodes = rng.permutation(np.unique(nodes))
    for lo in range(0, nodes.size, batch_size):
        yield nodes[lo:lo + batch_size]


# -- forward helpers -------------------------------------------------------
def batch_loss(model: ModelState, batch, loss_cfg: LossConfig, training: bool = True,
               rng: np.random.Generator | None = None):
    """Return ``(total, cls, bl, gbl)`` for one ego batch (bl/gbl may be None)."""
    res = forward(model, batch, training=training, rng=rng)
    cls = dm.cross_entropy(res.logits, model.class_index(batch.labels))
    bl_terms, gbl_terms = [], []
    if loss_cfg.gamma > 0 and model.t > 1:
        for depth, out in enumerate(res.layer_outputs):
            blocks = batch.blocks[depth + 1]
            bl_terms.append((block_guided_loss(out.raw_logits, blocks), blocks.size))
    if loss_cfg.delta > 0:
        for depth, out in enumerate(res.layer_outputs):
            if out.beta is not None:
                blocks = batch.blocks[depth]
                gbl_terms.append((graph_block_guided_loss(out.beta, blocks), blocks.size))
    total, bl, gbl = total_loss(cls, bl_terms, gbl_terms, loss_cfg)
    return total, cls, bl, gbl


def train_epochs(model: ModelState, view: GraphView, nodes: np.ndarray, epochs: int,
                 cfg: TrainConfig, loss_cfg: LossConfig, opt: Adam, rng: np.random.Generator,
                 train_log: TrainLog | None = None, block: int = 0, stage: int = 1,
                 epoch_times: list | None = None) -> None:
    if nodes.size == 0:
        return
    for epoch in range(1, epochs + 1):
        start = time.perf_counter()
        sums = np.zeros(4)
        count = 0
        for targets in minibatches(nodes, cfg.batch_size, rng):
            batch = build_ego_batch(view, targets, len(model.layers), cfg.fanout, rng)
            params = model.trainable()
            for p in params:
                p.zero_grad()
            total, cls, bl, gbl = batch_loss(model, batch, loss_cfg, training=True, rng=rng)
            dm.backward(total)
            opt.step(params)
            sums += [cls.item(), bl.item() if bl is not None else 0.0,
                     gbl.item() if gbl is not None else 0.0, total.item()]
            count += 1
        if epoch_times is not None:
            epoch_times.append(time.perf_counter() - start)
        if train_log is not None:
            m = sums / max(count, 1)
            train_log.add(block, stage, epoch, *[float(x) for x in m])


def run_inference(model: ModelState, view: GraphView, nodes, fanout: int | None,
                  rng: np.random.Generator, batch_size: int = 512, **fwd_kwargs):
    """Noise-free forward over ``nodes``; yields ``(targets, ForwardResult, batch)``."""
    nodes = np.asarray(nodes, dtype=np.int64)
    with dm.no_grad():
        for lo in range(0, nodes.size, batch_size):
            targets = nodes[lo:lo + batch_size]
            batch = build_ego_batch(view, targets, len(model.layers), fanout, rng)
            yield targets, forward(model, batch, training=False, **fwd_kwargs), batch


def predict(model: ModelState, view: GraphView, nodes, fanout: int | None,
            rng: np.random.Generator, **fwd_kwargs) -> np.ndarray:
    """Predicted labels (original class ids) for ``nodes``."""
    out = []
    classes = np.asarray(model.classes)
    for _, res, _ in run_inference(model, view, nodes, fanout, rng, **fwd_kwargs):
        out.append(classes[np.argmax(res.logits.data, axis=1)])
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def embed(model: ModelState, view: GraphView, nodes, fanout: int | None,
          rng: np.random.Generator, **fwd_kwargs) -> np.ndarray:
    out = [res.embeddings.data for _, res, _ in run_inference(model, view, nodes, fanout, rng, **fwd_kwargs)]
    return np.concatenate(out) if out else np.zeros((0, model.width))


def accuracy(model: ModelState, seq: GraphBlockSequence, view: GraphView, nodes, fanout,
             rng, **fwd_kwargs) -> tuple[int, int]:
    nodes = np.asarray(nodes, dtype=np.int64)
    pred = predict(model, view, nodes, fanout, rng, **fwd_kwargs)
    return int((pred == seq.labels[nodes]).sum()), int(nodes.size)


def layer_input_mean(model: ModelState, view: GraphView, nodes, depth: int, fanout,
                     rng) -> np.ndarray:
    """Mean layer-``depth`` input representation of ``nodes`` under the current model."""
    nodes = np.asarray(nodes, dtype=np.int64)
    with dm.no_grad():
        batch = build_ego_batch(view, nodes, len(model.layers), fanout, rng)
        h = embed_input(model, batch.features)
        for d in range(depth):
            h = layer_forward(model.layers[d], h, batch.layers[d], mode=model.mode).h
    return h.data[: nodes.size].mean(axis=0)


# -- block training --------------------------------------------------------
def new_model(seq: GraphBlockSequence, cfg: TrainConfig, rng, use_arrival: bool = True,
              k: int | None = None, mode: str | None = None) -> ModelState:
    return init_model(seq.num_features, cfg.embedding_dim, cfg.layer_count,
                      cfg.k if k is None else k, mode or cfg.mode, rng, use_arrival=use_arrival)


def grow_model(model: ModelState, seq: GraphBlockSequence, t: int, cfg: TrainConfig,
               rng: np.random.Generator) -> None:
    """Add the block-``t`` expert to every layer and widen the readout.

    Each new gate starts at the mean layer input of the block's training nodes.
    """
    if model.t != t - 1:
        raise SequencingError(f"model has {model.t} experts; cannot grow to block {t}")
    view = seq.snapshot(t)
    train_nodes = seq.nodes_where(block=t, split="train")
    if t > 1 and not model.input_frozen:
        model.freeze_input()
    for depth, layer in enumerate(model.layers):
        init = (layer_input_mean(model, view, train_nodes, depth, cfg.fanout, rng)
                if train_nodes.size else None)
        add_expert(layer, init, rng)
    model.widen_readout(np.unique(seq.labels[seq.blocks == t]), rng)


def select_memory(model: ModelState, seq: GraphBlockSequence, t: int, p: float,
                  cfg: TrainConfig) -> np.ndarray:
    """Representative training nodes of block ``t`` scored on final-layer embeddings."""
    nodes = seq.nodes_where(block=t, split="train")
    emb = embed(model, seq.snapshot(t), nodes, cfg.fanout, rng_stream(cfg.seed, "memory", t))
    return select_by_representativeness(nodes, seq.labels[nodes], emb, p)


def train_block(model: ModelState, seq: GraphBlockSequence, t: int, bank: MemoryBank,
                cfg: TrainConfig, train_log: TrainLog | None = None,
                epoch_times: list | None = None) -> tuple[ModelState, MemoryBank]:
    """Stage 1 on old memory plus the new block, then memory selection and stage 2."""
    missing = [b for b in range(1, t) if b not in bank.sets]
    if missing:
        raise SequencingError(f"block {t} trained before memory of blocks {missing}")
    rng = rng_stream(cfg.seed, "train", t)
    if model.t == t - 1:
        grow_model(model, seq, t, cfg, rng)
    elif model.t != t:
        raise SequencingError(f"model has {model.t} experts at block {t}")
    view = seq.snapshot(t)
    loss_cfg = LossConfig(cfg.gamma, cfg.delta)
    opt = Adam(cfg.learning_rate, cfg.weight_decay)
    new_train = seq.nodes_where(block=t, split="train")
    mix1 = training_mix(bank, new_train, 1, t)
    train_epochs(model, view, mix1, cfg.epochs, cfg, loss_cfg, opt, rng, train_log, t, 1, epoch_times)
    bank.add(t, select_memory(model, seq, t, cfg.p, cfg))
    mix2 = training_mix(bank, new_train, 2, t)
    train_epochs(model, view, mix2, cfg.balancing_for(seq.task_kind), cfg, loss_cfg, opt, rng,
                 train_log, t, 2)
    return model, bank


def evaluate_upto(model: ModelState, seq: GraphBlockSequence, j: int, matrix: MetricsMatrix,
                  cfg: TrainConfig) -> None:
    """Fill column ``j``: block-``i`` test accuracy on snapshot ``j`` for ``i <= j``."""
    view = seq.snapshot(j)
    for i in range(1, j + 1):
        nodes = seq.nodes_where(block=i, split="test")
        correct, total = accuracy(model, seq, view, nodes, cfg.fanout, rng_stream(cfg.seed, "eval", i, j))
        record(matrix, i, j, correct, total)


@dataclass
class RunResult:
    model: ModelState
    metrics: MetricsMatrix
    checkpoints: list[bytes]
    train_log: TrainLog
    wall_times: list[float]
    leakage: dict[int, dict[str, int]]
    bank: MemoryBank | None = None
    epoch_times: dict[int, list[float]] = field(default_factory=dict)


def leakage_report(seq: GraphBlockSequence, upto: int) -> dict[int, dict[str, int]]:
    out = {}
    for b in range(1, upto + 1):
        v = seq.snapshot(b)
        out[b] = {"snapshot": b, "max_block_seen": v.max_block_seen,
                  "violations": v.violations, "accesses": v.accesses}
    return out


def reset_views(seq: GraphBlockSequence) -> None:
    for b in range(1, seq.num_blocks + 1):
        seq.snapshot(b).reset_instrumentation()


def run_incremental(seq: GraphBlockSequence, cfg: TrainConfig, out_dir=None,
                    num_blocks: int | None = None) -> RunResult:
    t_total = num_blocks or seq.num_blocks
    reset_views(seq)
    model = new_model(seq, cfg, rng_stream(cfg.seed, "init"))
    bank = MemoryBank(cfg.p)
    matrix = MetricsMatrix(t_total)
    train_log = TrainLog()
    checkpoints, walls = [], []
    epoch_times: dict[int, list[float]] = {}
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    for t in range(1, t_total + 1):
        start = time.perf_counter()
        epoch_times[t] = []
        train_block(model, seq, t, bank, cfg, train_log, epoch_times[t])
        walls.append(time.perf_counter() - start)
        evaluate_upto(model, seq, t, matrix, cfg)
        blob = checkpoint_bytes(model)
        checkpoints.append(blob)
        if out:
            (out / f"checkpoint_block{t}.bin").write_bytes(blob)
            bank.write_manifest(out / "memory.tsv")
        log.info("block %d: diag %.3f, %.1fs", t, matrix.get(t, t), walls[-1])
    if out:
        train_log.to_csv(out / "train_log.csv")
    return RunResult(model, matrix, checkpoints, train_log, walls, leakage_report(seq, t_total),
                     bank, epoch_times)
