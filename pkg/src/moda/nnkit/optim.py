"""Adam optimizer over a fixed list of parameter arrays."""
from __future__ import annotations

import numpy as np

from moda.errors import TrainingError


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 names: list[str] | None = None):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.names = list(names) if names is not None else [
            f"param{i}" for i in range(len(self.params))
        ]
        self._m = [np.zeros_like(p) for p in self.params]
        self._v = [np.zeros_like(p) for p in self.params]
        self._t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise TrainingError(
                f"expected {len(self.params)} gradients, got {len(grads)}"
            )
        self._t += 1
        b1t = 1.0 - self.beta1 ** self._t
        b2t = 1.0 - self.beta2 ** self._t
        for i, (p, g) in enumerate(zip(self.params, grads)):
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for {self.names[i]}")
            m, v = self._m[i], self._v[i]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
