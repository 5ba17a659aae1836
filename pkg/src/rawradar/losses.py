"""Training objectives.

Every term is computed per frame (summed over grid cells) and averaged over
the batch, except smooth-L1, which is averaged over all positive cells in the
batch.  Probabilities are clipped to ``[1e-12, 1]`` before any logarithm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError
from .numerics import Tensor, as_tensor, ops

EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 2.0
    beta: float = 1e2
    gamma: float = 1e5
    lam: float = 1e2
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "lam"):
            if getattr(self, name) <= 0:
                raise ContractError(f"loss weight {name} must be positive")


def _same_shape(pred: Tensor, truth: np.ndarray, what: str) -> None:
    if tuple(pred.shape) != tuple(truth.shape):
        raise ShapeError(f"{what}: prediction {pred.shape} vs truth {truth.shape}")


def _log_clipped(p):
    return ops.log(ops.clip(p, EPS, 1.0))


def _per_frame_mean(cellwise) -> Tensor:
    """Sum over all non-batch axes, mean over the batch axis."""
    return ops.mul(ops.sum(cellwise), 1.0 / cellwise.shape[0])


def focal_loss(p, y, focusing: float = 2.0, balance: float = 0.25) -> Tensor:
    """``-sum[a y (1-p)^g log p + (1-a)(1-y) p^g log(1-p)]`` per frame, batch mean."""
    p = as_tensor(p)
    y = np.asarray(y, dtype=float)
    _same_shape(p, y, "focal_loss")
    q = ops.sub(1.0, p)
    pos = ops.mul(ops.power(q, focusing), _log_clipped(p))
    neg = ops.mul(ops.power(p, focusing), _log_clipped(q))
    cell = ops.add(ops.mul(pos, balance * y), ops.mul(neg, (1 - balance) * (1 - y)))
    return ops.neg(_per_frame_mean(cell))


def smooth_l1(x) -> Tensor:
    """``0.5 x^2`` for ``|x| < 1``, ``|x| - 0.5`` otherwise."""
    x = as_tensor(x)
    a = ops.absolute(x)
    return ops.where(a.data < 1.0, ops.mul(ops.mul(x, x), 0.5), ops.sub(a, 0.5))


def regression_loss(pred, truth, positive) -> Tensor:
    """Smooth-L1 of offset residuals summed over both channels, averaged over positive cells."""
    pred = as_tensor(pred)
    truth = np.asarray(truth, dtype=float)
    _same_shape(pred, truth, "regression_loss")
    pos = np.asarray(positive, dtype=float)
    n_pos = pos.sum()
    mask = np.broadcast_to(pos[..., None], truth.shape)
    if n_pos == 0:
        return ops.mul(ops.sum(pred), 0.0)
    cell = ops.mul(smooth_l1(ops.sub(pred, truth)), mask)
    return ops.mul(ops.sum(cell), 1.0 / n_pos)


def binary_regression_loss(binary, regression, truth_binary, truth_regression,
                           w: LossWeights = LossWeights()) -> Tensor:
    focal = focal_loss(binary, truth_binary, w.focal_gamma, w.focal_alpha)
    reg = regression_loss(regression, truth_regression, truth_binary)
    return ops.add(ops.mul(focal, w.alpha), ops.mul(reg, w.beta))


def class_loss(logits, truth, gamma: float = 1e5) -> Tensor:
    """``-gamma * sum_cells sum_k y_k log softmax(logits)_k`` per frame, batch mean.

    Cells whose one-hot row is all zero contribute nothing.
    """
    logits = as_tensor(logits)
    truth = np.asarray(truth, dtype=float)
    _same_shape(logits, truth, "class_loss")
    logp = _log_clipped(ops.softmax(logits, axis=-1))
    return ops.mul(_per_frame_mean(ops.mul(logp, truth)), -gamma)


def bce(p, y) -> Tensor:
    p = as_tensor(p)
    y = np.asarray(y, dtype=float)
    return ops.neg(ops.add(ops.mul(_log_clipped(p), y), ops.mul(_log_clipped(ops.sub(1.0, p)), 1 - y)))


def freespace_loss(pred, truth, lam: float = 1e2) -> Tensor:
    pred = as_tensor(pred)
    truth = np.asarray(truth, dtype=float)
    _same_shape(pred, truth, "freespace_loss")
    return ops.mul(_per_frame_mean(bce(pred, truth)), lam)


def total_loss(grid, targets: dict, w: LossWeights = LossWeights()) -> tuple[Tensor, dict[str, float]]:
    """Sum of the scaled terms the model has heads for.

    ``targets`` holds batched ``binary``, ``regression`` and, where relevant,
    ``classes`` and ``freespace`` arrays.  Returns the loss and its parts.
    """
    parts = {"bin": binary_regression_loss(grid.binary, grid.regression, targets["binary"],
                                           targets["regression"], w)}
    if grid.class_logits is not None:
        parts["class"] = class_loss(grid.class_logits, targets["classes"], w.gamma)
    if grid.freespace is not None:
        parts["free"] = freespace_loss(grid.freespace, targets["freespace"], w.lam)
    total = None
    for v in parts.values():
        total = v if total is None else ops.add(total, v)
    return total, {k: float(v.data) for k, v in parts.items()}
