"""Classification, block-guided and graph block-guided losses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import diffmath as dm
from .diffmath import DiffValue, ShapeError


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 1.0
    delta: float = 5.0

    def __post_init__(self):
        if self.gamma < 0 or self.delta < 0:
            raise ValueError("loss weights must be nonnegative")


def one_hot(j: int, t: int) -> np.ndarray:
    if not 1 <= j <= t:
        raise IndexError(f"block {j} outside [1, {t}]")
    out = np.zeros(t)
    out[j - 1] = 1.0
    return out


def multi_hot_arrival(b: int, t: int) -> np.ndarray:
    """Zeros for the first ``b-1`` experts, ones for experts ``b..t``."""
    if not 1 <= b <= t:
        raise IndexError(f"block {b} outside [1, {t}]")
    return (np.arange(1, t + 1) >= b).astype(np.float64)


def block_guided_loss(raw_logits, blocks) -> DiffValue:
    """Cross-entropy of ``softmax(raw_logits)`` against each row's block.

    Accepts a single logit vector with a scalar block, or a ``(rows, t)``
    matrix with one 1-based block per row; the result is the row mean.
    """
    logits = dm.as_value(raw_logits)
    if logits.data.ndim == 1:
        logits = dm.reshape(logits, (1, -1))
    blocks = np.atleast_1d(np.asarray(blocks, dtype=np.int64))
    t = logits.shape[1]
    if blocks.size and (blocks.min() < 1 or blocks.max() > t):
        raise IndexError(f"block index outside [1, {t}]")
    return dm.cross_entropy(logits, blocks - 1)


def graph_block_guided_loss(beta, blocks) -> DiffValue:
    """Mean BCE between arrival scores and multi-hot arrival targets.

    ``beta`` is one node's length-``t`` vector or a ``(rows, t)`` matrix.
    """
    beta = dm.as_value(beta)
    if beta.data.ndim == 1:
        beta = dm.reshape(beta, (1, -1))
    blocks = np.atleast_1d(np.asarray(blocks, dtype=np.int64))
    if blocks.size != beta.shape[0]:
        raise ShapeError(f"{blocks.size} blocks for {beta.shape[0]} beta rows")
    t = beta.shape[1]
    if blocks.size and (blocks.min() < 1 or blocks.max() > t):
        raise IndexError(f"block index outside [1, {t}]")
    target = (blocks[:, None] <= np.arange(1, t + 1)[None, :]).astype(np.float64)
    return dm.binary_cross_entropy(beta, target)


def _weighted_mean(terms: Sequence[tuple[DiffValue, int]]) -> DiffValue | None:
    """Mean of per-item losses given as (mean over group, group size) pairs."""
    terms = [(v, n) for v, n in terms if n > 0]
    if not terms:
        return None
    total = sum(n for _, n in terms)
    out = None
    for v, n in terms:
        part = dm.mul(v, n / total)
        out = part if out is None else dm.add(out, part)
    return out


def total_loss(cls, bl_terms=(), gbl_terms=(), cfg: LossConfig = LossConfig()):
    """``L_cls + gamma * mean(BL) + delta * mean(GBL)``.

    ``bl_terms``/``gbl_terms`` are ``(group mean, group size)`` pairs, e.g.
    one per layer, so the result is the mean over every node term.  Returns
    ``(total, bl_mean, gbl_mean)``; missing terms count as 0.
    """
    cls = dm.as_value(cls)
    bl = _weighted_mean(bl_terms)
    gbl = _weighted_mean(gbl_terms)
    out = cls
    if bl is not None and cfg.gamma > 0:
        out = dm.add(out, dm.mul(bl, cfg.gamma))
    if gbl is not None and cfg.delta > 0:
        out = dm.add(out, dm.mul(gbl, cfg.delta))
    return out, bl, gbl
