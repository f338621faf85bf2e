"""Gradient-descent optimisers and the cosine learning-rate schedule."""
from __future__ import annotations

import math

import numpy as np

from fdiff.numerics.tensor import Tensor


def cosine_lr(step: int, total: int, lr: float, lr_min: float = 0.0) -> float:
    """Cosine annealing from ``lr`` at ``step = 0`` towards ``lr_min`` at ``step = total``."""
    if total <= 0:
        return lr
    return lr_min + 0.5 * (lr - lr_min) * (1.0 + math.cos(math.pi * min(step, total) / total))


class SGD:
    """Plain gradient descent, with optional heavy-ball momentum."""

    def __init__(self, params: list[Tensor], momentum: float = 0.0):
        self.params = params
        self.momentum = momentum
        self._velocity = [np.zeros_like(p.data) for p in params] if momentum else None

    def step(self, lr: float) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad.astype(p.data.dtype, copy=False)
            if self._velocity is not None:
                v = self._velocity[i]
                v *= self.momentum
                v += g
                g = v
            p.data -= lr * g


class AdamW:
    """Adam with decoupled weight decay."""

    def __init__(self, params: list[Tensor], weight_decay: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in params]
        self._v = [np.zeros_like(p.data) for p in params]

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad.astype(p.data.dtype, copy=False)
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            if self.weight_decay:
                p.data -= lr * self.weight_decay * p.data
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
