"""AdamW with decoupled weight decay; Adam is the weight_decay=0 case."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor


class AdamW:
    """Bias-corrected Adam moments plus decoupled decay.

    Update per parameter: ``p -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)``.
    A non-finite gradient rejects the whole step and names the offending tensor.
    """

    def __init__(self, params: list[Tensor], lr: float, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        if lr <= 0:
            raise ValueError(f"lr must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        for i, p in enumerate(self.params):
            g = p.grad
            if g is not None and not np.all(np.isfinite(g)):
                name = p.name or f"param[{i}]"
                raise FloatingPointError(f"non-finite gradient for {name}; step rejected")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            m, v = self.m[i], self.v[i]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= np.float32(self.lr) * update

    def state_dict(self) -> dict:
        return {
            "t": self.t,
            "lr": self.lr,
            "m": [m.copy() for m in self.m],
            "v": [v.copy() for v in self.v],
        }

    def load_state_dict(self, state: dict):
        self.t = int(state["t"])
        self.lr = float(state["lr"])
        for dst, src in zip(self.m, state["m"]):
            dst[...] = src
        for dst, src in zip(self.v, state["v"]):
            dst[...] = src


def adam(params: list[Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8) -> AdamW:
    return AdamW(params, lr, betas=betas, eps=eps, weight_decay=0.0)
