"""Adaptive-moment (Adam) optimizer with bias correction."""
from __future__ import annotations

import numpy as np


class Adam:
    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict):
        """One in-place update of every parameter that has a gradient."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for key, g in grads.items():
            p = params[key]
            m = self._m.get(key)
            if m is None:
                m = self._m[key] = np.zeros_like(p, dtype=np.float64)
            v = self._v.get(key)
            if v is None:
                v = self._v[key] = np.zeros_like(p, dtype=np.float64)
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            update = (self.lr / bias1) * m / (np.sqrt(v / bias2) + self.eps)
            p -= update.astype(p.dtype)
