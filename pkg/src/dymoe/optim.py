"""Adam with decoupled weight decay."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .diffmath import DiffValue


class Adam:
    """Adam whose weight decay shrinks parameters directly (not via the gradient).

    State is keyed by parameter identity, so parameters not passed to
    :meth:`step` are never touched.
    """

    def __init__(self, lr: float = 1e-4, weight_decay: float = 0.0,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.state: dict[int, list] = {}

    def step(self, params: Iterable[DiffValue]) -> None:
        for p in params:
            g = p.grad
            st = self.state.get(id(p))
            if st is None or st[0] is not p:
                st = [p, np.zeros_like(p.data), np.zeros_like(p.data), 0]
                self.state[id(p)] = st
            _, m, v, n = st
            n += 1
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1**n)
            v_hat = v / (1 - self.beta2**n)
            update = m_hat / (np.sqrt(v_hat) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data = p.data - self.lr * update
            st[3] = n

    def zero_grad(self, params: Iterable[DiffValue]) -> None:
        for p in params:
            p.zero_grad()


def optimizer_step(params, state: Adam, lr: float | None = None, weight_decay: float | None = None) -> None:
    if lr is not None:
        state.lr = lr
    if weight_decay is not None:
        state.weight_decay = weight_decay
    state.step(params)
