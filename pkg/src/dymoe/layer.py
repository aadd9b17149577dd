"""Dynamic mixture-of-experts graph layer.

One expert per data block.  Each target node is routed by gate logits
``s(h, g_i)``; the selected experts run with their own arrival scores
``beta_{u,i} = sigmoid(p_i . W^P h_u)`` masking neighbors, and the outputs
are mixed by the gate weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffmath as dm
from .diffmath import DiffValue, ShapeError
from .expert import ExpertParams, forward_batch
from .graph import LayerBlock

EPS = dm.EPS


def similarity(x, g, kind: str = "dot", sigma: float = 1.0) -> float:
    """Dot product, or ``-||x-g||^2 / (2 sigma^2)`` with ``kind="gaussian"``."""
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if x.shape != g.shape:
        raise ShapeError(f"similarity width mismatch: {x.shape} vs {g.shape}")
    if kind == "dot":
        return float(x @ g)
    if kind == "gaussian":
        return float(-np.sum((x - g) ** 2) / (2 * sigma**2))
    raise ValueError(f"unknown similarity {kind!r}")


@dataclass
class GateDecision:
    alphas: np.ndarray
    selected: np.ndarray
    raw_logits: np.ndarray


@dataclass
class DyMoELayerState:
    width: int
    k: int
    experts: list[ExpertParams] = field(default_factory=list)
    gates: list[DiffValue] = field(default_factory=list)
    noise: list[DiffValue] = field(default_factory=list)
    arrival: list[DiffValue] = field(default_factory=list)
    proj: DiffValue | None = None
    frozen_below: int = 0
    use_arrival: bool = True

    @property
    def t(self) -> int:
        return len(self.experts)

    @property
    def effective_k(self) -> int:
        return min(self.k, self.t)

    def check(self) -> None:
        if not (len(self.experts) == len(self.gates) == len(self.noise) == len(self.arrival)):
            raise AssertionError("expert/gate/noise/arrival lists out of step")


def new_layer(width: int, k: int, rng: np.random.Generator, use_arrival: bool = True) -> DyMoELayerState:
    bound = 1.0 / np.sqrt(width)
    proj = dm.parameter(rng.uniform(-bound, bound, size=(width, width)), name="proj")
    return DyMoELayerState(width=width, k=k, proj=proj, use_arrival=use_arrival)


def add_expert(layer: DyMoELayerState, init_gate, rng: np.random.Generator) -> None:
    """Append an expert and its gate/noise/arrival vectors; freeze the older experts."""
    n = layer.width
    if init_gate is None:
        init_gate = rng.normal(0.0, 1.0 / np.sqrt(n), size=n)
    init_gate = np.asarray(init_gate, dtype=np.float64)
    if init_gate.shape != (n,):
        raise ShapeError(f"init gate shape {init_gate.shape} != ({n},)")
    for e in layer.experts:
        e.set_trainable(False)
    layer.experts.append(ExpertParams.init(n, rng))
    layer.gates.append(dm.parameter(init_gate.copy(), name="gate"))
    layer.noise.append(dm.parameter(rng.normal(0.0, 0.01, size=n), name="noise"))
    layer.arrival.append(dm.parameter(rng.normal(0.0, 0.01, size=n), name="arrival"))
    layer.frozen_below = layer.t - 1
    layer.check()


def trainable_params(layer: DyMoELayerState) -> list[DiffValue]:
    """Newest expert plus every gate, noise and arrival vector and ``W^P``."""
    if layer.t < 1:
        return []
    out = list(layer.experts[-1].params())
    out += layer.gates + layer.noise + layer.arrival
    if layer.proj is not None:
        out.append(layer.proj)
    return out


def all_params(layer: DyMoELayerState) -> list[DiffValue]:
    out = [p for e in layer.experts for p in e.params()]
    return out + layer.gates + layer.noise + layer.arrival + [layer.proj]


# -- gating ----------------------------------------------------------------
def _topk_mask(h: np.ndarray, k: int) -> np.ndarray:
    # stable sort on -h keeps the lower expert index first among ties
    order = np.argsort(-h, axis=1, kind="stable")[:, :k]
    mask = np.zeros(h.shape, dtype=bool)
    np.put_along_axis(mask, order, True, axis=1)
    return mask


def gate_logits(layer: DyMoELayerState, h: DiffValue) -> DiffValue:
    return dm.matmul(h, dm.transpose(dm.stack_rows(layer.gates)))


def compute_gates(layer: DyMoELayerState, h: DiffValue, mode: str, training: bool,
                  rng: np.random.Generator | None = None):
    """Return ``(raw_logits, alphas, selected_mask)`` for rows of ``h``.

    ``raw_logits`` and ``alphas`` are DiffValues; in sparse mode with
    ``training`` the selection logits carry softplus-scaled Gaussian noise.
    """
    raw = gate_logits(layer, h)
    m, t = raw.shape
    if mode == "dense":
        return raw, dm.softmax(raw, axis=1), np.ones((m, t), dtype=bool)
    if mode != "sparse":
        raise ValueError(f"unknown gating mode {mode!r}")
    logits = raw
    if training:
        if rng is None:
            raise ValueError("sparse training gates need an rng")
        scale = dm.softplus(dm.matmul(h, dm.transpose(dm.stack_rows(layer.noise))))
        logits = dm.add(raw, dm.mul(scale, rng.standard_normal((m, t))))
    mask = _topk_mask(logits.data, layer.effective_k)
    return raw, dm.softmax(logits, axis=1, mask=mask), mask


def gate_dense(x, layer: DyMoELayerState) -> GateDecision:
    with dm.no_grad():
        raw, alpha, mask = compute_gates(layer, DiffValue(np.atleast_2d(x)), "dense", False)
    return GateDecision(alpha.data[0], np.nonzero(mask[0])[0], raw.data[0])


def gate_sparse(x, layer: DyMoELayerState, training: bool, rng_seed=None) -> GateDecision:
    rng = np.random.default_rng(rng_seed)
    with dm.no_grad():
        raw, alpha, mask = compute_gates(layer, DiffValue(np.atleast_2d(x)), "sparse", training, rng)
    return GateDecision(alpha.data[0], np.nonzero(mask[0])[0], raw.data[0])


def arrival_logits(layer: DyMoELayerState, h: DiffValue) -> DiffValue:
    z = dm.matmul(h, dm.transpose(layer.proj))
    return dm.matmul(z, dm.transpose(dm.stack_rows(layer.arrival)))


def arrival_scores(layer: DyMoELayerState, h: DiffValue) -> DiffValue:
    """``(rows, t)`` matrix of clamped sigmoid arrival scores."""
    return dm.clamp(dm.sigmoid(arrival_logits(layer, h)), EPS, 1.0 - EPS)


def arrival_gate(h_u, j: int, layer: DyMoELayerState) -> float:
    """Arrival score of one node for expert ``j`` (1-based)."""
    if not 1 <= j <= layer.t:
        raise IndexError(f"expert {j} outside [1, {layer.t}]")
    with dm.no_grad():
        b = arrival_scores(layer, DiffValue(np.atleast_2d(h_u)))
    return float(b.data[0, j - 1])


def exact_arrival(src_blocks: np.ndarray, t: int) -> np.ndarray:
    """Multi-hot arrival targets: entry ``(u, j)`` is 1 iff ``b(u) <= j+1``."""
    j = np.arange(1, t + 1)
    return (np.asarray(src_blocks)[:, None] <= j[None, :]).astype(np.float64)


# -- forward ---------------------------------------------------------------
@dataclass
class LayerOutput:
    h: DiffValue
    raw_logits: DiffValue
    alphas: np.ndarray
    selected: np.ndarray
    beta: DiffValue | None


def layer_forward(layer: DyMoELayerState, h_src: DiffValue, block: LayerBlock,
                  mode: str = "dense", training: bool = False,
                  rng: np.random.Generator | None = None,
                  force_expert: int | None = None,
                  exact_beta_blocks: np.ndarray | None = None) -> LayerOutput:
    """Mix expert outputs for the first ``block.num_dst`` rows of ``h_src``.

    ``force_expert`` (0-based) pins the gate to a single expert.
    ``exact_beta_blocks`` replaces learned arrival scores by the exact
    multi-hot targets computed from the given per-row block indices, with
    ``EPS`` in place of 0.  Unselected experts are never evaluated.
    """
    if h_src.shape[1] != layer.width:
        raise ShapeError(f"layer input width {h_src.shape[1]} != {layer.width}")
    t = layer.t
    m = block.num_dst
    dst_idx = np.arange(m)
    h_dst = dm.gather_rows(h_src, dst_idx, unique=True)
    if force_expert is not None:
        raw = gate_logits(layer, h_dst)
        mask = np.zeros((m, t), dtype=bool)
        mask[:, force_expert] = True
        alpha = DiffValue(mask.astype(np.float64))
    else:
        raw, alpha, mask = compute_gates(layer, h_dst, mode, training, rng)

    beta = None
    log_beta = None
    if layer.use_arrival:
        if exact_beta_blocks is not None:
            exact = np.maximum(exact_arrival(exact_beta_blocks, t), EPS)
            log_beta = DiffValue(np.log(exact))
        else:
            beta = arrival_scores(layer, h_src)
            log_beta = dm.log(beta)

    out = None
    for j in range(t):
        rows = np.nonzero(mask[:, j])[0]
        if rows.size == 0:
            continue
        lb = dm.getitem(log_beta, (slice(None), j)) if log_beta is not None else None
        y = forward_batch(layer.experts[j], h_src, rows, block.nbr[rows], block.mask[rows], lb)
        if rows.size == m and t == 1:
            term = y
        else:
            a = dm.reshape(dm.getitem(alpha, (rows, np.full(rows.size, j))), (rows.size, 1))
            term = dm.scatter_rows(dm.mul(a, y), rows, m)
        out = term if out is None else dm.add(out, term)
    if out is None:
        out = DiffValue(np.zeros((m, layer.width)))
    return LayerOutput(h=out, raw_logits=raw, alphas=alpha.data, selected=mask, beta=beta)
