"""Differentiable primitives.

Every function accepts tensors (or array-likes, treated as constants) and
returns a new tensor.  Backward rules use the independent-parts complex
convention described in :mod:`rawradar.numerics.tensor`; for holomorphic maps
this means the incoming gradient is multiplied by the conjugate derivative.

Broadcasting is restricted to leading dimensions: two operands must have equal
shapes, or one shape must be a suffix of the other (scalars included).

Non-smooth points take the derivative from the positive side
(``relu'(0) = 1``, ``|x|'(0) = 1``).
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ContractError, ShapeError
from .tensor import Tensor, as_tensor, record


def _check_broadcast(a: tuple, b: tuple, op: str) -> None:
    if a == b:
        return
    if len(a) < len(b):
        a, b = b, a
    if len(b) == 0 or a[len(a) - len(b):] == b:
        return
    raise ShapeError(f"{op}: shapes {a} and {b} are not compatible (leading-dimension broadcast only)")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead))) if lead > 0 else g


def _coerce(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if like is not None and np.isscalar(x):
        kind = like.dtype
        if isinstance(x, complex) and kind.kind != "c":
            kind = np.result_type(kind, np.complex64)
        return Tensor(np.asarray(x, dtype=kind))
    return Tensor(x)


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a, b = _coerce(a, b if isinstance(b, Tensor) else None), _coerce(b, a if isinstance(a, Tensor) else None)
    _check_broadcast(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape
    return record(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _coerce(a, b if isinstance(b, Tensor) else None), _coerce(b, a if isinstance(a, Tensor) else None)
    _check_broadcast(a.shape, b.shape, "sub")
    sa, sb = a.shape, b.shape
    return record(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = _coerce(a, b if isinstance(b, Tensor) else None), _coerce(b, a if isinstance(a, Tensor) else None)
    _check_broadcast(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g * np.conj(bd), ad.shape)
        gb = _unbroadcast(g * np.conj(ad), bd.shape)
        return ga, gb

    return record(ad * bd, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _coerce(a, b if isinstance(b, Tensor) else None), _coerce(b, a if isinstance(a, Tensor) else None)
    _check_broadcast(a.shape, b.shape, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        ga = _unbroadcast(g / np.conj(bd), ad.shape)
        gb = _unbroadcast(-g * np.conj(out / bd), bd.shape)
        return ga, gb

    return record(out, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return record(-a.data, (a,), lambda g: (-g,))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    if isinstance(p, Tensor):
        raise ContractError("power: exponent must be a Python number")
    ad = a.data
    return record(ad ** p, (a,), lambda g: (g * np.conj(p * ad ** (p - 1)),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return record(out, (a,), lambda g: (g * np.conj(out),))


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return record(np.log(ad), (a,), lambda g: (g / np.conj(ad),))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return record(out, (a,), lambda g: (g / (2.0 * np.conj(out)),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return record(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    out = np.empty_like(ad)
    pos = ad >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-ad[pos]))
    e = np.exp(ad[~pos])
    out[~pos] = e / (1.0 + e)
    return record(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data >= 0
    return record(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    a = as_tensor(a)
    mask = a.data >= 0
    scale = np.where(mask, 1.0, slope)
    return record(a.data * scale, (a,), lambda g: (g * scale,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Tensor:
    """Tanh-approximated GELU."""
    a = as_tensor(a)
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return record(out, (a,), backward)


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp; gradient passes only where the value was inside ``[lo, hi]``."""
    a = as_tensor(a)
    mask = (a.data >= lo) & (a.data <= hi)
    return record(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,))


def where(cond, a, b) -> Tensor:
    cond = np.asarray(cond.data if isinstance(cond, Tensor) else cond, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "where")
    sa, sb = a.shape, b.shape
    out = np.where(cond, a.data, b.data)
    return record(out, (a, b), lambda g: (_unbroadcast(np.where(cond, g, 0), sa),
                                          _unbroadcast(np.where(cond, 0, g), sb)))


# ---------------------------------------------------------------- complex

def real(a) -> Tensor:
    a = as_tensor(a)
    if not a.is_complex:
        return a
    return record(a.data.real.copy(), (a,), lambda g: (g.astype(a.dtype),))


def imag(a) -> Tensor:
    a = as_tensor(a)
    if not a.is_complex:
        return Tensor(np.zeros_like(a.data))
    return record(a.data.imag.copy(), (a,), lambda g: (1j * g,))


def conj(a) -> Tensor:
    a = as_tensor(a)
    return record(np.conj(a.data), (a,), lambda g: (np.conj(g),))


def make_complex(re, im) -> Tensor:
    re, im = as_tensor(re), as_tensor(im)
    if re.shape != im.shape:
        raise ShapeError(f"make_complex: shapes {re.shape} and {im.shape} differ")
    return record(re.data + 1j * im.data, (re, im), lambda g: (g.real, g.imag))


def absolute(a) -> Tensor:
    """Elementwise modulus.  At zero the gradient is ``+1`` (real) or ``0`` (complex)."""
    a = as_tensor(a)
    ad = a.data
    out = np.abs(ad)
    if a.is_complex:
        def backward(g):
            safe = np.where(out > 0, out, 1.0)
            return (np.where(out > 0, g * ad / safe, 0),)
    else:
        def backward(g):
            return (g * np.where(ad >= 0, 1.0, -1.0),)
    return record(out, (a,), backward)


def complex_to_channels(a) -> Tensor:
    """``(..., C)`` complex to ``(..., 2C)`` real with channel ``2i`` = re, ``2i+1`` = im."""
    a = as_tensor(a)
    ad = a.data
    out = np.empty(ad.shape[:-1] + (2 * ad.shape[-1],), dtype=ad.real.dtype)
    out[..., 0::2] = ad.real
    out[..., 1::2] = ad.imag

    def backward(g):
        return (g[..., 0::2] + 1j * g[..., 1::2],)

    return record(out, (a,), backward)


# ---------------------------------------------------------------- shape

def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return record(np.ascontiguousarray(a.data.transpose(axes)), (a,), lambda g: (g.transpose(inv),))


def swapaxes(a, i: int, j: int) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, axes)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    if isinstance(index, Tensor):
        index = index.data
    shape, dtype = a.shape, a.dtype

    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(i, (int, slice, type(Ellipsis))) or i is None for i in parts)

    def backward(g):
        full = np.zeros(shape, dtype=np.result_type(dtype, g.dtype))
        if basic:
            full[index] = g  # basic indexing never repeats an element
        else:
            np.add.at(full, index, g)
        return (full,)

    return record(np.array(a.data[index]), (a,), backward)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return record(out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)
    n = len(tensors)
    return record(out, tensors, lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def roll(a, shift, axis) -> Tensor:
    a = as_tensor(a)
    neg_shift = tuple(-s for s in shift) if isinstance(shift, (tuple, list)) else -shift
    return record(np.roll(a.data, shift, axis=axis), (a,), lambda g: (np.roll(g, neg_shift, axis=axis),))


def pad(a, pad_width) -> Tensor:
    """Zero padding; ``pad_width`` as for :func:`numpy.pad`."""
    a = as_tensor(a)
    pad_width = [tuple(p) for p in pad_width]
    sl = tuple(slice(lo, lo + n) for (lo, _), n in zip(pad_width, a.shape))
    return record(np.pad(a.data, pad_width), (a,), lambda g: (g[sl],))


# ---------------------------------------------------------------- reductions

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return record(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[i] for i in axes]))
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes.

    ``b`` may be 2-D (shared across ``a``'s leading axes) or carry the same
    leading axes as ``a``.  Real operands are promoted when mixed with complex.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs at least 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch dimensions differ: {a.shape} @ {b.shape}")
    if a.ndim == 2 and b.ndim > 2:
        raise ShapeError(f"matmul: left operand must carry the batch axes, got {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    tape_needs = (a.tracked, b.tracked)

    def backward(g):
        ga = gb = None
        if tape_needs[0]:
            ga = g @ np.conj(np.swapaxes(bd, -1, -2))
        if tape_needs[1]:
            if bd.ndim == 2:
                k, n = bd.shape
                gb = np.conj(ad.reshape(-1, k)).T @ g.reshape(-1, n)
            else:
                gb = np.conj(np.swapaxes(ad, -1, -2)) @ g
        return ga, gb

    return record(ad @ bd, (a, b), backward)


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` with weight shaped ``(in, out)``."""
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


# ---------------------------------------------------------------- fused nn ops

def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return record(out, (a,), backward)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    sm = np.exp(out)

    def backward(g):
        return (g - sm * g.sum(axis=axis, keepdims=True),)

    return record(out, (a,), backward)


def layer_norm(x, weight=None, bias=None, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply the optional affine map."""
    x = as_tensor(x)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    w = None if weight is None else as_tensor(weight)
    b = None if bias is None else as_tensor(bias)
    out = xhat
    if w is not None:
        out = out * w.data
    if b is not None:
        out = out + b.data
    inputs = [x] + [t for t in (w, b) if t is not None]

    def backward(g):
        gw = gb = None
        gxhat = g if w is None else g * w.data
        lead = tuple(range(g.ndim - 1))
        if w is not None:
            gw = (g * xhat).sum(axis=lead)
        if b is not None:
            gb = g.sum(axis=lead)
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        res = [gx]
        if w is not None:
            res.append(gw)
        if b is not None:
            res.append(gb)
        return tuple(res)

    return record(out, inputs, backward)


def conv2d(x, weight, bias=None) -> Tensor:
    """Stride-1 'same' convolution on channels-last input.

    ``x``: ``(B, H, W, Cin)``; ``weight``: ``(kh, kw, Cin, Cout)`` with odd
    kernel extents.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects (B,H,W,C) and (kh,kw,Cin,Cout), got {x.shape} and {weight.shape}")
    kh, kw, cin, cout = weight.shape
    if x.shape[-1] != cin:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape}, weight {weight.shape}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ContractError("conv2d needs odd kernel extents")
    B, H, W, _ = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    # (B, H, W, Cin, kh, kw) -> (B*H*W, kh*kw*Cin)
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(B * H * W, kh * kw * cin)
    wmat = weight.data.reshape(kh * kw * cin, cout)
    out = (cols @ wmat).reshape(B, H, W, cout)
    needs_x, needs_w = x.tracked, weight.tracked
    b = None if bias is None else as_tensor(bias)
    if b is not None:
        out = out + b.data

    def backward(g):
        g2 = g.reshape(-1, cout)
        gx = gw = None
        if needs_x:
            gcols = (g2 @ wmat.T).reshape(B, H, W, kh, kw, cin)
            gxp = np.zeros_like(xp)
            for dy in range(kh):
                for dx in range(kw):
                    gxp[:, dy:dy + H, dx:dx + W, :] += gcols[:, :, :, dy, dx, :]
            gx = gxp[:, ph:ph + H, pw:pw + W, :]
        if needs_w:
            gw = (cols.T @ g2).reshape(kh, kw, cin, cout)
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    inputs = (x, weight) if b is None else (x, weight, b)
    return record(out, inputs, backward)


def upsample_transpose(x, weight, bias=None, stride=(2, 2)) -> Tensor:
    """Transposed convolution whose kernel equals its stride (no overlap).

    ``x``: ``(B, H, W, Cin)``; ``weight``: ``(Cin, sh*sw*Cout)``.  Each input
    pixel is projected to an ``sh x sw`` output block.
    """
    x = as_tensor(x)
    sh, sw = stride
    B, H, W, _ = x.shape
    cout = weight.shape[-1] // (sh * sw)
    y = matmul(x, weight)
    y = reshape(y, (B, H, W, sh, sw, cout))
    y = transpose(y, (0, 1, 3, 2, 4, 5))
    y = reshape(y, (B, H * sh, W * sw, cout))
    return y if bias is None else add(y, bias)
