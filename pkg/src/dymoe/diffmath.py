"""Dense float64 arrays with tape-style reverse-mode gradients.

Every operation on a :class:`DiffValue` that has at least one input with
``requires_grad`` set records a backward closure.  ``backward`` walks the
recorded ancestors in descending ``node_id`` order, which is a valid reverse
topological order because ids are handed out at creation time.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import sparse

EPS = 1e-12

_ids = itertools.count()
_grad_enabled = True


class ShapeError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    """Disable recording inside the block (inference only)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class DiffValue:
    __slots__ = ("data", "_grad", "requires_grad", "node_id", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)) and requires_grad:
            raise FloatingPointError("non-finite value in differentiable input")
        self.data = arr
        self._grad = None
        self.requires_grad = requires_grad
        self.node_id = next(_ids)
        self._parents: tuple[DiffValue, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    # -- bookkeeping -----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value) -> None:
        self._grad = np.asarray(value, dtype=np.float64)

    def zero_grad(self) -> None:
        self._grad = None

    def detach(self) -> "DiffValue":
        return DiffValue(self.data.copy())

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"DiffValue(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def _accum(self, g: np.ndarray, fresh: bool = False) -> None:
        # fresh=True: g was allocated by the caller and may be adopted as-is
        if self._grad is None:
            self._grad = g if fresh and g.flags.writeable and g.dtype == np.float64 else np.array(g, dtype=np.float64)
        else:
            self._grad += g

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, DiffValue):
            raise TypeError("division by a DiffValue is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    @property
    def T(self):
        return transpose(self)


def as_value(x) -> DiffValue:
    return x if isinstance(x, DiffValue) else DiffValue(x)


def _make(data: np.ndarray, parents: Sequence[DiffValue], backward) -> DiffValue:
    out = DiffValue.__new__(DiffValue)
    out.data = data
    out._grad = None
    out.node_id = next(_ids)
    out.name = None
    live = tuple(p for p in parents if p.requires_grad)
    if _grad_enabled and live:
        out.requires_grad = True
        out._parents = live
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _index_add(num_rows: int, idx: np.ndarray, g: np.ndarray, unique: bool = False) -> np.ndarray:
    """``out[idx] += g`` along the first axis, duplicates summed."""
    flat = idx.reshape(-1)
    tail = g.shape[idx.ndim:]
    g2 = g.reshape(flat.size, -1)
    if unique:
        out = np.zeros((num_rows, g2.shape[1]))
        out[flat] = g2
    else:
        scat = sparse.csr_matrix((np.ones(flat.size), (flat, np.arange(flat.size))),
                                 shape=(num_rows, flat.size))
        out = np.asarray(scat @ g2)
    return out.reshape((num_rows,) + tail)


# -- elementwise ---------------------------------------------------------
def add(a, b) -> DiffValue:
    a, b = as_value(a), as_value(b)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b) -> DiffValue:
    a, b = as_value(a), as_value(b)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(-_unbroadcast(g, b.shape))

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b) -> DiffValue:
    a, b = as_value(a), as_value(b)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bw)


def exp(a: DiffValue) -> DiffValue:
    out_data = np.exp(a.data)

    def bw(g):
        a._accum(g * out_data)

    return _make(out_data, (a,), bw)


def log(a: DiffValue, eps: float = 0.0) -> DiffValue:
    """Natural log; with ``eps > 0`` the input is clamped to ``[eps, inf)`` first."""
    x = np.maximum(a.data, eps) if eps > 0 else a.data
    if np.any(x <= 0):
        raise FloatingPointError("log of non-positive value")

    def bw(g):
        grad = g / x
        if eps > 0:
            grad = np.where(a.data >= eps, grad, 0.0)
        a._accum(grad)

    return _make(np.log(x), (a,), bw)


def relu(a: DiffValue) -> DiffValue:
    mask = a.data > 0

    def bw(g):
        a._accum(g * mask)

    return _make(a.data * mask, (a,), bw)


def sigmoid(a: DiffValue) -> DiffValue:
    x = a.data
    out_data = np.empty_like(x)
    pos = x >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out_data[~pos] = ex / (1.0 + ex)

    def bw(g):
        a._accum(g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), bw)


def softplus(a: DiffValue) -> DiffValue:
    x = a.data
    out_data = np.logaddexp(0.0, x)

    def bw(g):
        a._accum(g / (1.0 + np.exp(-x)))

    return _make(out_data, (a,), bw)


def clamp(a: DiffValue, lo: float, hi: float) -> DiffValue:
    inside = (a.data >= lo) & (a.data <= hi)

    def bw(g):
        a._accum(g * inside)

    return _make(np.clip(a.data, lo, hi), (a,), bw)


# -- shape / reduction ---------------------------------------------------
def matmul(a, b) -> DiffValue:
    a, b = as_value(a), as_value(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        if a.requires_grad:
            a._accum(g @ b.data.T, fresh=True)
        if b.requires_grad:
            b._accum(a.data.T @ g, fresh=True)

    return _make(a.data @ b.data, (a, b), bw)


def bmm(a, b) -> DiffValue:
    """Batched product of ``(B, i, j)`` and ``(B, j, k)`` arrays."""
    a, b = as_value(a), as_value(b)
    if a.data.ndim != 3 or b.data.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeError(f"bmm shape mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        if a.requires_grad:
            a._accum(np.matmul(g, b.data.transpose(0, 2, 1)), fresh=True)
        if b.requires_grad:
            b._accum(np.matmul(a.data.transpose(0, 2, 1), g), fresh=True)

    return _make(np.matmul(a.data, b.data), (a, b), bw)


def transpose(a: DiffValue) -> DiffValue:
    def bw(g):
        a._accum(g.T)

    return _make(a.data.T, (a,), bw)


def reshape(a: DiffValue, shape) -> DiffValue:
    def bw(g):
        a._accum(g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), bw)


def vsum(a: DiffValue, axis=None, keepdims: bool = False) -> DiffValue:
    def bw(g):
        if axis is None:
            a._accum(np.broadcast_to(g, a.shape))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a._accum(np.broadcast_to(gg, a.shape))

    return _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bw)


def mean(a: DiffValue, axis=None) -> DiffValue:
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(vsum(a, axis=axis), 1.0 / n)


def getitem(a: DiffValue, key) -> DiffValue:
    """Basic or advanced indexing; backward scatters with ``np.add.at``."""

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        a._accum(full)

    return _make(a.data[key], (a,), bw)


def gather_rows(a: DiffValue, idx, unique: bool = False) -> DiffValue:
    """``a[idx]`` for an integer index array of any shape.

    ``unique`` promises no repeated index, which allows a cheaper backward.
    """
    idx = np.asarray(idx, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise IndexError(f"row index out of range for {a.shape[0]} rows")

    def bw(g):
        a._accum(_index_add(a.shape[0], idx, g, unique), fresh=True)

    return _make(a.data[idx], (a,), bw)


def scatter_rows(src: DiffValue, idx, num_rows: int) -> DiffValue:
    """Rows of ``src`` placed into a zero ``num_rows``-row array at distinct ``idx``."""
    idx = np.asarray(idx, dtype=np.intp)
    out = _index_add(num_rows, idx, src.data, unique=True)

    def bw(g):
        src._accum(g[idx])

    return _make(out, (src,), bw)


def concat_rows(parts: Sequence[DiffValue]) -> DiffValue:
    parts = [as_value(p) for p in parts]
    widths = {p.shape[1:] for p in parts}
    if len(widths) != 1:
        raise ShapeError(f"concat_rows width mismatch: {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def bw(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            if p.requires_grad:
                p._accum(g[lo:hi])

    return _make(np.concatenate([p.data for p in parts], axis=0), parts, bw)


def stack_rows(vectors: Sequence[DiffValue]) -> DiffValue:
    """Stack 1-D vectors into a matrix, one vector per row."""
    return concat_rows([reshape(v, (1, -1)) for v in vectors])


# -- softmax family ------------------------------------------------------
def softmax(a: DiffValue, axis: int = -1, mask: np.ndarray | None = None) -> DiffValue:
    """Softmax along ``axis``; entries where ``mask`` is False get weight 0.

    A slice with every entry masked yields all zeros.
    """
    x = a.data
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x - m)
    s = e.sum(axis=axis, keepdims=True)
    out_data = np.divide(e, s, out=np.zeros_like(e), where=s > 0)

    def bw(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        a._accum(out_data * (g - dot))

    return _make(out_data, (a,), bw)


def row_softmax(a: DiffValue) -> DiffValue:
    if a.data.ndim != 2:
        raise ShapeError(f"row_softmax expects a matrix, got {a.shape}")
    return softmax(a, axis=1)


def log_softmax(a: DiffValue, axis: int = -1) -> DiffValue:
    x = a.data
    m = x.max(axis=axis, keepdims=True)
    lse = m + np.log(np.exp(x - m).sum(axis=axis, keepdims=True))
    out_data = x - lse

    def bw(g):
        p = np.exp(out_data)
        a._accum(g - p * g.sum(axis=axis, keepdims=True))

    return _make(out_data, (a,), bw)


# -- losses --------------------------------------------------------------
def cross_entropy(logits: DiffValue, target) -> DiffValue:
    """Mean over rows of ``-log softmax(logits)[target]``."""
    target = np.asarray(target, dtype=np.intp).reshape(-1)
    if logits.data.ndim != 2 or logits.shape[0] != target.size:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs {target.size} targets")
    c = logits.shape[1]
    if target.size and (target.min() < 0 or target.max() >= c):
        raise IndexError(f"target class out of range [0, {c})")
    rows = np.arange(target.size)
    lsm = log_softmax(logits, axis=1)
    return mul(vsum(getitem(lsm, (rows, target))), -1.0 / max(target.size, 1))


def binary_cross_entropy(p: DiffValue, target, eps: float = EPS) -> DiffValue:
    """Mean of ``-[t ln p + (1-t) ln(1-p)]`` with ``p`` clamped to ``[eps, 1-eps]``."""
    t = np.broadcast_to(np.asarray(target, dtype=np.float64), p.shape)
    pc = clamp(p, eps, 1.0 - eps)
    terms = add(mul(log(pc), t), mul(log(sub(1.0, pc)), 1.0 - t))
    return mul(vsum(terms), -1.0 / max(p.size, 1))


# -- driver --------------------------------------------------------------
def backward(loss: DiffValue) -> None:
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    nodes: dict[int, DiffValue] = {}
    stack = [loss]
    while stack:
        v = stack.pop()
        if v.node_id in nodes:
            continue
        nodes[v.node_id] = v
        stack.extend(v._parents)
    # Intermediate grads are recomputed each call; leaf grads accumulate.
    for v in nodes.values():
        if v._backward is not None:
            v._grad = None
    loss._accum(np.ones_like(loss.data))
    for nid in sorted(nodes, reverse=True):
        v = nodes[nid]
        if v._backward is not None and v._grad is not None:
            v._backward(v._grad)


def zero_grad(params: Iterable[DiffValue]) -> None:
    for p in params:
        p.zero_grad()


def parameter(data, name: str | None = None) -> DiffValue:
    return DiffValue(np.array(data, dtype=np.float64), requires_grad=True, name=name)
