"""Adam with step-decay schedule and global-norm clipping."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import Tensor


def _real_view(a: np.ndarray) -> np.ndarray:
    return a.view(a.real.dtype) if a.dtype.kind == "c" else a


class Adam:
    """Adam over real and complex parameters.

    Complex parameters are updated as independent (re, im) pairs, consistent
    with the gradient convention of the tape.  Updates are applied in place to
    the parameter arrays.
    """

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(_real_view(p.data)) for p in self.params]
        self.v = [np.zeros_like(_real_view(p.data)) for p in self.params]

    def step(self, grads: Sequence[np.ndarray]) -> None:
        b1, b2 = self.betas
        self.step_count += 1
        c1 = 1 - b1 ** self.step_count
        c2 = 1 - b2 ** self.step_count
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            g = _real_view(np.ascontiguousarray(g, dtype=p.data.dtype))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            upd = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            _real_view(p.data)[...] -= upd

    def state(self) -> dict:
        return {"step": self.step_count, "m": self.m, "v": self.v, "lr": self.lr}

    def load_state(self, state: dict) -> None:
        self.step_count = int(state["step"])
        self.lr = float(state["lr"])
        for dst, src in zip(self.m, state["m"]):
            dst[...] = src
        for dst, src in zip(self.v, state["v"]):
            dst[...] = src


def clip_global_norm(grads: list[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    total = float(np.sqrt(sum(float(np.sum(np.abs(g) ** 2)) for g in grads)))
    if total > max_norm and total > 0:
        scale = max_norm / total
        grads = [g * scale for g in grads]
    return grads, total


def step_decay_lr(base_lr: float, epoch: int, decay: float = 0.9, every: int = 10) -> float:
    """Learning rate at zero-based ``epoch``: ``base_lr * decay ** (epoch // every)``."""
    return base_lr * decay ** (epoch // every)
