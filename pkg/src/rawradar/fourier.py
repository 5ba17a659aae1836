"""Learnable DFT layers that replace the fixed range/Doppler FFTs.

A :class:`ComplexLinear` layer is an ``M x M`` complex matrix initialized to a
DFT (optionally with its output rows rotated by ``M/2``, which is what an
``fftshift`` after the transform does).  :class:`FourierNet` chains a range
layer and a Doppler layer, optionally applies a magnitude-domain leaky ReLU
that keeps the phase, splits real and imaginary parts into channels and
standardizes each channel before the backbone.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, ShapeError
from .numerics import Module, Tensor, as_tensor, ops, parameter, record


def init_dft_weights(M: int, N: int | None = None, shifted: bool = False) -> np.ndarray:
    """``w[k, m] = exp(-2j pi k m / M)`` for ``0 <= k, m < M``.

    Only the first ``N`` input columns ever see data (the rest multiply zero
    padding), so for ``N < M`` the layer computes the length-``M`` DFT of the
    zero-padded slice.  ``shifted`` moves row ``(r + M/2) mod M`` to row ``r``.
    """
    N = M if N is None else N
    if not 1 <= N <= M:
        raise ContractError(f"need 1 <= N <= M, got N={N}, M={M}")
    k = np.arange(M)
    w = np.exp(-2j * np.pi * np.outer(k, k) / M)
    if shifted:
        w = w[(k + M // 2) % M]
    return w


def leaky_modrelu(z, bias, slope: float = 0.01) -> Tensor:
    """``LReLU(|z| + b) * z / |z|`` with ``f(0) = 0``.

    ``bias`` broadcasts over the trailing axes of ``z``.  Its gradient at
    ``z = 0`` is zero, and the kink at ``|z| + b = 0`` takes the positive-side slope.
    """
    z, bias = as_tensor(z), as_tensor(bias)
    ops._check_broadcast(z.shape, bias.shape, "leaky_modrelu")
    zd = z.data
    r = np.abs(zd)
    nz = r > 0
    safe = np.where(nz, r, 1.0)
    u = np.where(nz, zd / safe, 0)
    s = r + bias.data
    c = np.where(s >= 0, 1.0, slope)
    act = c * s
    out = np.where(nz, act * u, 0)

    def backward(g):
        h = np.where(nz, act / safe, 0.0)
        dh = np.where(nz, c / safe - act / safe ** 2, 0.0)
        gz = h * g + dh * np.real(np.conj(g) * zd) * u
        gb = ops._unbroadcast(np.real(np.conj(g) * u) * c, bias.shape)
        return gz, gb

    return record(out, (z, bias), backward)


def _standardize(x, axes: tuple, eps: float):
    """Per-channel standardization using the statistics of ``x`` itself."""
    x = as_tensor(x)
    xd = x.data
    count = int(np.prod([xd.shape[a] for a in axes]))
    mu = xd.mean(axis=axes, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def backward(g):
        gm = g.sum(axis=axes, keepdims=True) / count
        gxm = (g * xhat).sum(axis=axes, keepdims=True) / count
        return (inv * (g - gm - xhat * gxm),)

    return record(xhat, (x,), backward), mu.reshape(-1), var.reshape(-1)


class ChannelNorm(Module):
    """Standardize each channel (last axis).

    Training uses the batch statistics and folds them into running averages
    with ``momentum``; evaluation uses the frozen running averages.  The
    first training batch seeds the running statistics directly.
    """

    _buffer_names = ("running_mean", "running_var", "initialized")

    def __init__(self, channels: int, momentum: float = 0.99, eps: float = 1e-12):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.initialized = np.zeros(1)

    def forward(self, x):
        x = as_tensor(x)
        if x.shape[-1] != self.channels:
            raise ShapeError(f"ChannelNorm expects {self.channels} channels, got {x.shape}")
        if self.training:
            out, mu, var = _standardize(x, tuple(range(x.ndim - 1)), self.eps)
            if self.initialized[0]:
                m = self.momentum
                self.running_mean = m * self.running_mean + (1 - m) * mu
                self.running_var = m * self.running_var + (1 - m) * var
            else:
                self.running_mean, self.running_var = mu.copy(), var.copy()
                self.initialized = np.ones(1)
            return out
        inv = 1.0 / np.sqrt(self.running_var + self.eps)
        return ops.mul(ops.sub(x, self.running_mean), inv)

    def flop_records(self, in_shape):
        return tuple(in_shape), [("elementwise", 2 * int(np.prod(in_shape)))]


class ComplexLinear(Module):
    """Complex ``M x M`` transform applied along the last axis.

    Inputs of length ``N < M`` are zero padded, which is the same as using
    only the first ``N`` weight columns.
    """

    def __init__(self, M: int, N: int | None = None, shifted: bool = False):
        self.M = M
        self.N = M if N is None else N
        self.shifted = shifted
        self.weight = parameter(init_dft_weights(M, self.N, shifted))
        self.bias = parameter(np.zeros(M))  # only used by the nonlinearity

    def forward(self, x):
        x = as_tensor(x)
        if x.shape[-1] != self.N:
            raise ShapeError(f"ComplexLinear expects last axis {self.N}, got {x.shape}")
        w = self.weight if self.N == self.M else ops.getitem(self.weight, (slice(None), slice(0, self.N)))
        return ops.matmul(x, ops.transpose(w))

    def initial_weight(self) -> np.ndarray:
        return init_dft_weights(self.M, self.N, self.shifted)

    def flop_records(self, in_shape):
        rows = int(np.prod(in_shape[:-1]))
        return tuple(in_shape[:-1]) + (self.M,), [("complex_dense", rows * self.N * self.M)]


class FourierNet(Module):
    """Range layer, permutation, Doppler layer, channel split, ChannelNorm.

    Input ``(B, N, chirps, V)`` complex ADC samples.  Output
    ``(B, range_M, doppler_M, 2V)`` real, channel ``2i`` = re and ``2i+1`` = im.
    """

    def __init__(self, n_samples: int, n_chirps: int, n_channels: int, range_M: int | None = None,
                 doppler_M: int | None = None, shifted_init: bool = True,
                 nonlinearity: str = "none", leaky_slope: float = 0.01, momentum: float = 0.99):
        if nonlinearity not in ("none", "leaky_modrelu"):
            raise ContractError(f"unknown nonlinearity {nonlinearity!r}")
        self.in_shape = (n_samples, n_chirps, n_channels)
        self.nonlinearity = nonlinearity
        self.leaky_slope = leaky_slope
        self.range_layer = ComplexLinear(range_M or n_samples, n_samples, shifted=False)
        self.doppler_layer = ComplexLinear(doppler_M or n_chirps, n_chirps, shifted=shifted_init)
        self.norm = ChannelNorm(2 * n_channels, momentum=momentum)

    @property
    def out_channels(self) -> int:
        return 2 * self.in_shape[2]

    def _nl(self, x, layer):
        if self.nonlinearity == "none":
            return x
        return leaky_modrelu(x, layer.bias, self.leaky_slope)

    def transform(self, x):
        """Everything before the normalization layer: ``(B, range_M, doppler_M, V)`` complex."""
        x = as_tensor(x)
        if x.shape[1:] != self.in_shape:
            raise ShapeError(f"FourierNet expects (B,) + {self.in_shape}, got {x.shape}")
        x = ops.transpose(x, (0, 2, 3, 1))                  # (B, chirps, V, N)
        x = self._nl(self.range_layer(x), self.range_layer)
        x = ops.transpose(x, (0, 3, 2, 1))                  # (B, range, V, chirps)
        x = self._nl(self.doppler_layer(x), self.doppler_layer)
        return ops.transpose(x, (0, 1, 3, 2))               # (B, range, doppler, V)

    def forward(self, x):
        return self.norm(ops.complex_to_channels(self.transform(x)))

    def divergence(self) -> dict[str, float]:
        """``||W - W_init||_F / ||W_init||_F`` per layer."""
        out = {}
        for name, layer in (("range", self.range_layer), ("doppler", self.doppler_layer)):
            w0 = layer.initial_weight()
            out[name] = float(np.linalg.norm(layer.weight.data - w0) / np.linalg.norm(w0))
        return out

    def flop_records(self, in_shape):
        B, N, M, V = in_shape
        _, r1 = self.range_layer.flop_records((B, M, V, N))
        Rm = self.range_layer.M
        _, r2 = self.doppler_layer.flop_records((B, Rm, V, M))
        out = (B, Rm, self.doppler_layer.M, 2 * V)
        records = r1 + r2
        if self.nonlinearity != "none":
            records.append(("elementwise", 8 * B * Rm * V * (M + self.doppler_layer.M)))
        _, r3 = self.norm.flop_records(out)
        return out, records + r3
