"""Central-difference verification of tape gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import NumericError
from .tensor import Tape, Tensor, grad


def _stencil(value: Callable[[complex], float], unit, h: float, points: int) -> float:
    """Central difference of ``value(x0 + t * unit)`` at ``t = 0``.

    Three points give O(h^2) truncation; five points give O(h^4), which
    allows a larger ``h`` and so much less roundoff.
    """
    if points == 3:
        return (value(unit * h) - value(-unit * h)) / (2 * h)
    if points == 5:
        d1 = value(unit * h) - value(-unit * h)
        d2 = value(2 * unit * h) - value(-2 * unit * h)
        return (8 * d1 - d2) / (12 * h)
    raise ValueError("points must be 3 or 5")


def _scalar(f: Callable, x: np.ndarray) -> float:
    val = f(Tensor(x))
    v = float(np.asarray(val.data if isinstance(val, Tensor) else val).real.reshape(()))
    if not np.isfinite(v):
        raise NumericError("function returned a non-finite value during finite differencing")
    return v


def finite_difference_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-6,
                            n_samples: int | None = None, seed: int = 0, points: int = 3) -> float:
    """Max relative error between tape and central-difference gradients.

    The error per coordinate is ``|auto - fd| / max(|fd|, 1e-8)``.  Complex
    inputs are perturbed along the real and imaginary parts separately.
    ``n_samples`` limits the check to a random subset of coordinates.
    """
    x0 = np.array(x.data if isinstance(x, Tensor) else x)
    if x0.dtype.kind in "biu":
        x0 = x0.astype(np.float64)
    leaf = Tensor(x0, requires_grad=True)
    with Tape():
        out = f(leaf)
    if not np.all(np.isfinite(out.data)):
        raise NumericError("function returned a non-finite value")
    (auto,) = grad(out, [leaf])

    flat = x0.reshape(-1)
    idx = np.arange(flat.size)
    if n_samples is not None and n_samples < flat.size:
        idx = np.random.default_rng(seed).choice(flat.size, size=n_samples, replace=False)
    auto_flat = auto.reshape(-1)
    parts = [(1.0, "real")] + ([(1j, "imag")] if x0.dtype.kind == "c" else [])

    worst = 0.0
    for i in idx:
        for unit, part in parts:
            def value(step, i=i):
                xs = flat.copy()
                xs[i] += step
                return _scalar(f, xs.reshape(x0.shape))

            fd = _stencil(value, unit, h, points)
            a = auto_flat[i].real if part == "real" else auto_flat[i].imag
            err = abs(a - fd) / max(abs(fd), 1e-8)
            worst = max(worst, err)
    return worst


def check_parameter_gradients(loss_fn: Callable[[], Tensor], params, h: float = 1e-6,
                              n_samples: int = 8, seed: int = 0, points: int = 3) -> float:
    """Finite-difference check over several parameter tensors of a model.

    ``loss_fn`` reads the parameters' ``data`` arrays directly; each is
    perturbed in place and restored.
    """
    with Tape():
        loss = loss_fn()
    autos = grad(loss, params)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, auto in zip(params, autos):
        flat = p.data.reshape(-1)
        idx = rng.choice(flat.size, size=min(n_samples, flat.size), replace=False)
        units = [1.0, 1j] if p.is_complex else [1.0]
        for i in idx:
            for unit in units:
                orig = flat[i]

                def value(step, i=i, orig=orig, flat=flat):
                    flat[i] = orig + step
                    try:
                        v = float(loss_fn().data.real)
                    finally:
                        flat[i] = orig
                    if not np.isfinite(v):
                        raise NumericError("loss became non-finite during finite differencing")
                    return v

                fd = _stencil(value, unit, h, points)
                g = auto.reshape(-1)[i]
                a = g.real if unit == 1.0 else g.imag
                worst = max(worst, abs(a - fd) / max(abs(fd), 1e-8))
    return worst
