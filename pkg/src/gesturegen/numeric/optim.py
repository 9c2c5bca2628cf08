"""Stochastic gradient descent with classical momentum."""

from __future__ import annotations

import numpy as np

from .tensor import Gradients, Tensor


class MomentumSGD:
    """v <- momentum * v + g;  p <- p - lr * v, all in float32.

    Velocity buffers are created lazily per parameter and keyed by tensor
    identity, so one optimizer instance can drive any fixed parameter set.
    """

    def __init__(self, lr: float, momentum: float = 0.9):
        if lr < 0:
            raise ValueError(f"learning rate must be >= 0, got {lr}")
        if not 0 <= momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {momentum}")
        self.lr = float(lr)
        self.momentum = float(momentum)
        self._velocity: dict[int, np.ndarray] = {}

    def step(self, params: list[Tensor], grads: Gradients) -> None:
        """Apply one update to every parameter using its gradient."""
        lr = np.float32(self.lr)
        mu = np.float32(self.momentum)
        for p in params:
            v = self._velocity.get(p.uid)
            if v is None:
                v = np.zeros_like(p.data)
                self._velocity[p.uid] = v
            v *= mu
            v += grads[p]
            p.data -= lr * v
