"""Transformer-style graph convolution expert.

An expert maps a target node ``h_v`` and its neighbors ``H_N`` to
``MLP(h_v + Att(h_v, H_N))`` where the attention is single-headed with the
target as query.  Optional per-neighbor arrival scores ``beta`` enter the
attention logits as ``log(beta)``, and the attended vector is scaled by the
visible mass ``min(1, sum(beta))`` so that fully masked neighborhoods act
like empty ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffmath as dm
from .diffmath import DiffValue, ShapeError

EPS = dm.EPS


@dataclass
class ExpertParams:
    wq: DiffValue
    wk: DiffValue
    wv: DiffValue
    w1: DiffValue
    b1: DiffValue
    w2: DiffValue
    b2: DiffValue

    FIELDS = ("wq", "wk", "wv", "w1", "b1", "w2", "b2")

    @property
    def width(self) -> int:
        return self.wq.shape[0]

    def params(self) -> list[DiffValue]:
        return [getattr(self, f) for f in self.FIELDS]

    def set_trainable(self, flag: bool) -> None:
        for p in self.params():
            p.requires_grad = flag
            if not flag:
                p.zero_grad()

    @classmethod
    def init(cls, n: int, rng: np.random.Generator) -> "ExpertParams":
        bound = 1.0 / np.sqrt(n)
        mats = {f: dm.parameter(rng.uniform(-bound, bound, size=(n, n)), name=f) for f in ("wq", "wk", "wv", "w1", "w2")}
        vecs = {f: dm.parameter(rng.uniform(-bound, bound, size=n), name=f) for f in ("b1", "b2")}
        return cls(**mats, **vecs)

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "ExpertParams":
        return cls(**{f: dm.parameter(arrays[f], name=f) for f in cls.FIELDS})


def _linear(x: DiffValue, w: DiffValue, b: DiffValue | None = None) -> DiffValue:
    y = dm.matmul(x, dm.transpose(w))
    return dm.add(y, b) if b is not None else y


def mlp(p: ExpertParams, x: DiffValue) -> DiffValue:
    return _linear(dm.relu(_linear(x, p.w1, p.b1)), p.w2, p.b2)


def attend_batch(p: ExpertParams, h_src: DiffValue, dst_idx: np.ndarray, nbr: np.ndarray,
                 mask: np.ndarray, log_beta: DiffValue | None = None,
                 return_weights: bool = False):
    """Attention for many targets at once.

    ``h_src`` holds every input row; ``dst_idx`` selects the query rows and
    ``nbr``/``mask`` (shape ``(m, F)``) index neighbor rows.  ``log_beta`` is a
    per-source-row vector added to the logits of the matching neighbors.
    Rows whose mask is all False produce a zero vector.
    """
    n = p.width
    if h_src.shape[1] != n:
        raise ShapeError(f"input width {h_src.shape[1]} != expert width {n}")
    m, f = nbr.shape
    hv = dm.gather_rows(h_src, dst_idx, unique=True)
    if f == 0:
        att = DiffValue(np.zeros((m, n)))
        return (att, np.zeros((m, 0))) if return_weights else att
    uniq, inv = np.unique(nbr, return_inverse=True)
    inv = inv.reshape(nbr.shape)
    hs = dm.gather_rows(h_src, uniq, unique=True)
    keys = dm.gather_rows(_linear(hs, p.wk), inv)
    vals = dm.gather_rows(_linear(hs, p.wv), inv)
    q = dm.reshape(_linear(hv, p.wq), (m, n, 1))
    logits = dm.mul(dm.reshape(dm.bmm(keys, q), (m, f)), 1.0 / np.sqrt(n))
    if log_beta is not None:
        lb = dm.gather_rows(log_beta, nbr)
        logits = dm.add(logits, lb)
    w = dm.softmax(logits, axis=1, mask=mask)
    att = dm.reshape(dm.bmm(dm.reshape(w, (m, 1, f)), vals), (m, n))
    if log_beta is not None:
        # The softmax renormalizes, so a node whose neighbors are all masked
        # would still attend to them at full weight.  Scaling by the visible
        # mass min(1, sum beta) makes that case match an empty neighborhood.
        visible = dm.vsum(dm.mul(dm.exp(lb), mask.astype(np.float64)), axis=1, keepdims=True)
        att = dm.mul(att, dm.clamp(visible, 0.0, 1.0))
    return (att, w.data) if return_weights else att


def forward_batch(p: ExpertParams, h_src: DiffValue, dst_idx, nbr, mask,
                  log_beta: DiffValue | None = None) -> DiffValue:
    hv = dm.gather_rows(h_src, dst_idx, unique=True)
    return mlp(p, dm.add(hv, attend_batch(p, h_src, dst_idx, nbr, mask, log_beta)))


# -- single-node interface ------------------------------------------------
def _pack(h_v, H_N):
    h_v = dm.as_value(h_v)
    H_N = dm.as_value(H_N)
    n = h_v.shape[-1]
    if H_N.data.ndim != 2:
        H_N = dm.reshape(H_N, (-1, n))
    if H_N.shape[1] != n:
        raise ShapeError(f"neighbor width {H_N.shape[1]} != target width {n}")
    d = H_N.shape[0]
    h_src = dm.concat_rows([dm.reshape(h_v, (1, n)), H_N])
    nbr = np.arange(1, d + 1).reshape(1, d)
    return h_src, np.array([0]), nbr, np.ones((1, d), dtype=bool), d


def _log_beta(beta, d: int) -> DiffValue:
    beta = dm.as_value(beta)
    if beta.size != d:
        raise ShapeError(f"beta length {beta.size} != neighbor count {d}")
    lb = dm.log(dm.clamp(dm.reshape(beta, (d,)), EPS, 1.0))
    return dm.concat_rows([DiffValue(np.zeros(1)), lb])


def attention(p: ExpertParams, h_v, H_N) -> DiffValue:
    """``softmax(q K^T / sqrt(n)) V`` for one target; zero vector when no neighbors."""
    h_src, dst, nbr, mask, _ = _pack(h_v, H_N)
    return dm.reshape(attend_batch(p, h_src, dst, nbr, mask), (p.width,))


def masked_attention(p: ExpertParams, h_v, H_N, beta) -> DiffValue:
    h_src, dst, nbr, mask, d = _pack(h_v, H_N)
    return dm.reshape(attend_batch(p, h_src, dst, nbr, mask, _log_beta(beta, d)), (p.width,))


def attention_weights(p: ExpertParams, h_v, H_N, beta=None) -> np.ndarray:
    h_src, dst, nbr, mask, d = _pack(h_v, H_N)
    lb = None if beta is None else _log_beta(beta, d)
    return attend_batch(p, h_src, dst, nbr, mask, lb, return_weights=True)[1][0]


def expert_forward(p: ExpertParams, h_v, H_N, beta=None) -> DiffValue:
    h_src, dst, nbr, mask, d = _pack(h_v, H_N)
    lb = None if beta is None else _log_beta(beta, d)
    return dm.reshape(forward_batch(p, h_src, dst, nbr, mask, lb), (p.width,))
