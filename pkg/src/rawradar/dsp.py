"""Reference frequency-domain preprocessing.

Windows, a radix-2 FFT with a quadratic-time reference, fftshift, and the
assembly of range-Doppler (RD) and range-azimuth-Doppler (RAD) network
inputs.  The RD/RAD transformers follow the scikit-learn estimator protocol:
``fit`` freezes per-channel normalization statistics from a training split and
``transform`` applies them.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import ContractError
from .sim import ADCFrame

log = logging.getLogger(__name__)

STD_FLOOR = 1e-8


class DegenerateChannelWarning(UserWarning):
    """A channel's standard deviation fell below the floor."""


def hamming(n: int) -> np.ndarray:
    """``0.54 - 0.46 cos(2 pi k / (n - 1))`` for ``k = 0 .. n-1``.

    Written as ``0.08 + 0.46 (1 - cos)`` so the endpoints are exactly 0.08.
    """
    if n < 2:
        raise ContractError(f"hamming window needs n >= 2, got {n}")
    k = np.arange(n)
    return 0.08 + 0.46 * (1.0 - np.cos(2.0 * np.pi * k / (n - 1)))


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def dft_reference(x, axis: int = -1) -> np.ndarray:
    """Quadratic-time DFT ``X[k] = sum_m x[m] exp(-2j pi k m / N)``."""
    x = np.moveaxis(np.asarray(x, dtype=np.complex128), axis, -1)
    n = x.shape[-1]
    k = np.arange(n)
    out = np.zeros_like(x)
    for m in range(n):
        out += x[..., m:m + 1] * np.exp(-2j * np.pi * k * m / n)
    return np.moveaxis(out, -1, axis)


def fft(x, axis: int = -1) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT along ``axis`` (unnormalized).

    Non-power-of-two lengths fall back to :func:`dft_reference`.
    """
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[axis]
    if n < 1:
        raise ContractError("fft needs a non-empty axis")
    if not _is_pow2(n):
        log.info("fft: length %d is not a power of two; using the reference DFT", n)
        return dft_reference(x, axis)
    y = np.moveaxis(x, axis, -1)
    lead = y.shape[:-1]
    y = y.reshape(-1, n)[:, _bit_reverse(n)]
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = y.reshape(-1, n // size, size)
        u = blocks[..., :half]
        t = blocks[..., half:] * tw
        y = np.concatenate([u + t, u - t], axis=-1).reshape(-1, n)
        size *= 2
    return np.moveaxis(y.reshape(lead + (n,)), -1, axis)


def fftshift(x, axis: int = -1) -> np.ndarray:
    """Swap spectrum halves: index ``k`` moves to ``(k + N//2) mod N``."""
    x = np.asarray(x)
    return np.roll(x, x.shape[axis] // 2, axis=axis)


# ---------------------------------------------------------------- input assembly

def _frames_array(frames) -> np.ndarray:
    """Stack ADCFrames / arrays into ``(B, N, M, V)`` complex."""
    if isinstance(frames, ADCFrame):
        return frames.samples[None]
    if isinstance(frames, np.ndarray):
        if frames.ndim == 3:
            return frames[None]
        if frames.ndim == 4:
            return frames
        raise ContractError(f"expected a (N, M, V) or (B, N, M, V) array, got {frames.shape}")
    return np.stack([f.samples if isinstance(f, ADCFrame) else np.asarray(f) for f in frames])


def rd_spectrum(frames, window: bool = True, shift: bool = True) -> np.ndarray:
    """Complex range-Doppler cube ``(B, N, M, V)``: windows, range FFT, Doppler FFT, shift."""
    x = _frames_array(frames)
    if window:
        x = x * hamming(x.shape[1])[:, None, None] * hamming(x.shape[2])[None, :, None]
    x = fft(x, axis=1)
    x = fft(x, axis=2)
    if shift:
        x = fftshift(x, axis=2)
    return x


def split_complex(x: np.ndarray) -> np.ndarray:
    """``(..., V)`` complex to ``(..., 2V)`` real; channel 2i = re, 2i+1 = im."""
    out = np.empty(x.shape[:-1] + (2 * x.shape[-1],))
    out[..., 0::2] = x.real
    out[..., 1::2] = x.imag
    return out


def rad_cube(frames, azimuth_bins: int, window: bool = True, shift_doppler: bool = True,
             shift_azimuth: bool = True) -> np.ndarray:
    """Magnitude cube ``(B, range, doppler, azimuth)`` with zero-padded azimuth FFT."""
    x = rd_spectrum(frames, window=window, shift=shift_doppler)
    v = x.shape[-1]
    if azimuth_bins < v:
        raise ContractError(f"azimuth_bins {azimuth_bins} smaller than channel count {v}")
    x = np.concatenate([x, np.zeros(x.shape[:-1] + (azimuth_bins - v,), dtype=x.dtype)], axis=-1)
    x = fft(x, axis=-1)
    if shift_azimuth:
        x = fftshift(x, axis=-1)
    return np.abs(x)


class ChannelStats:
    """Streaming per-channel mean/variance (Chan et al. pairwise update)."""

    def __init__(self, n_channels: int):
        self.count = 0
        self.mean = np.zeros(n_channels)
        self.m2 = np.zeros(n_channels)

    def update(self, x: np.ndarray) -> None:
        flat = x.reshape(-1, x.shape[-1])
        n = flat.shape[0]
        mu = flat.mean(axis=0)
        m2 = ((flat - mu) ** 2).sum(axis=0)
        total = self.count + n
        delta = mu - self.mean
        self.mean = self.mean + delta * n / total
        self.m2 = self.m2 + m2 + delta ** 2 * self.count * n / total
        self.count = total

    def finalize(self) -> tuple[np.ndarray, np.ndarray]:
        std = np.sqrt(self.m2 / max(self.count, 1))
        if np.any(std < STD_FLOOR):
            warnings.warn("degenerate channel: standard deviation below 1e-8, using 1e-8",
                          DegenerateChannelWarning)
            std = np.maximum(std, STD_FLOOR)
        return self.mean, std


def normalize(x: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    """``(M - mu_k) / sigma_k`` over the last axis."""
    return (x - mean) / np.maximum(std, STD_FLOOR)


@dataclass
class RDInput:
    tensor: np.ndarray
    mean: np.ndarray
    std: np.ndarray


@dataclass
class RADInput:
    tensor: np.ndarray
    mean: np.ndarray
    std: np.ndarray


def make_rd_input(frame, window: bool = True, shift: bool = True,
                  stats: tuple[np.ndarray, np.ndarray] | None = None) -> RDInput:
    """RD channels for one frame, normalized with ``stats`` (or the frame's own)."""
    x = split_complex(rd_spectrum(frame, window, shift))[0]
    if stats is None:
        acc = ChannelStats(x.shape[-1])
        acc.update(x)
        stats = acc.finalize()
    mean, std = stats
    return RDInput(normalize(x, mean, std), np.asarray(mean), np.asarray(std))


def make_rad_input(frame, window: bool = True, shift_doppler: bool = True,
                   shift_azimuth: bool = True, azimuth_bins: int | None = None,
                   stats: tuple | None = None) -> RADInput:
    if azimuth_bins is None:
        if not isinstance(frame, ADCFrame):
            raise ContractError("azimuth_bins is required for raw arrays")
        azimuth_bins = frame.config.azimuth_bins
    cube = rad_cube(frame, azimuth_bins, window, shift_doppler, shift_azimuth)[0]
    if stats is None:
        acc = ChannelStats(1)
        acc.update(cube.reshape(-1, 1))
        stats = acc.finalize()
    mean, std = (np.asarray(s).reshape(()) for s in stats)
    return RADInput((cube - mean) / max(float(std), STD_FLOOR), mean, std)


class RDTransformer(TransformerMixin, BaseEstimator):
    """Raw ADC frames to normalized RD channels ``(B, N, M, 2V)``.

    Parameters
    ----------
    window : bool
        Apply Hamming windows along fast and slow time.
    shift : bool
        Centre zero Doppler.
    chunk_size : int
        Frames processed per batch while fitting statistics.
    """

    def __init__(self, window: bool = True, shift: bool = True, chunk_size: int = 64):
        self.window = window
        self.shift = shift
        self.chunk_size = chunk_size

    def _raw(self, frames) -> np.ndarray:
        return split_complex(rd_spectrum(frames, self.window, self.shift))

    def fit(self, X, y=None):
        X = _frames_array(X)
        acc = None
        for start in range(0, len(X), self.chunk_size):
            raw = self._raw(X[start:start + self.chunk_size])
            if acc is None:
                acc = ChannelStats(raw.shape[-1])
            acc.update(raw)
        self.mean_, self.std_ = acc.finalize()
        self.n_channels_ = len(self.mean_)
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "mean_")
        raw = self._raw(X)
        if raw.shape[-1] != self.n_channels_:
            raise ContractError(f"fitted on {self.n_channels_} channels, got {raw.shape[-1]}")
        return normalize(raw, self.mean_, self.std_)


class RADTransformer(TransformerMixin, BaseEstimator):
    """Raw ADC frames to normalized RAD magnitude cubes ``(B, range, doppler, azimuth)``."""

    def __init__(self, azimuth_bins: int = 32, window: bool = True, shift_doppler: bool = True,
                 shift_azimuth: bool = True, chunk_size: int = 64):
        self.azimuth_bins = azimuth_bins
        self.window = window
        self.shift_doppler = shift_doppler
        self.shift_azimuth = shift_azimuth
        self.chunk_size = chunk_size

    def _raw(self, frames) -> np.ndarray:
        return rad_cube(frames, self.azimuth_bins, self.window, self.shift_doppler, self.shift_azimuth)

    def fit(self, X, y=None):
        X = _frames_array(X)
        acc = ChannelStats(1)
        for start in range(0, len(X), self.chunk_size):
            acc.update(self._raw(X[start:start + self.chunk_size]).reshape(-1, 1))
        mean, std = acc.finalize()
        self.mean_, self.std_ = float(mean[0]), float(std[0])
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "mean_")
        return (self._raw(X) - self.mean_) / self.std_

