"""AdamW with decoupled weight decay and an exponential epoch schedule."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor


class AdamW:
    """Parameters are a name -> Tensor dict; updates iterate in sorted name
    order so runs are reproducible regardless of dict construction order.
    Parameters whose grad is None are skipped entirely for that step."""

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 1e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 1e-4,
    ):
        self.params = params
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self._names = sorted(params)
        self._m = {n: np.zeros_like(params[n].data) for n in self._names}
        self._v = {n: np.zeros_like(params[n].data) for n in self._names}
        self._t = 0

    def zero_grad(self) -> None:
        for n in self._names:
            self.params[n].grad = None

    def step(self) -> None:
        self._t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self._t
        c2 = 1.0 - b2 ** self._t
        for n in self._names:
            p = self.params[n]
            g = p.grad
            if g is None:
                continue
            m = self._m[n]
            v = self._v[n]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= self.lr * update


def exponential_lr(base_lr: float, decay: float, epoch: int) -> float:
    """Learning rate after ``epoch`` completed epochs."""
    return float(base_lr * decay**epoch)
