"""Range-angle decoder, output heads, and detection decoding.

The decoder turns a range-Doppler feature pyramid into range-azimuth
features.  For RD and ADC inputs, each pyramid level's channel axis is
projected to the azimuth extent and swapped with the Doppler axis, so Doppler
becomes the channel dimension.  RAD inputs already carry azimuth as a spatial
axis and only need widening along it.  Levels are then fused coarse to fine
with range-only transposed convolutions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, TextIO

import numpy as np

from .errors import ContractError, ShapeError
from .numerics import Conv2d, Linear, Module, Tensor, as_tensor, ops, parameter
from .numerics.module import init_uniform
from .sim import RadarConfig

FOCAL_PRIOR = 0.01


class Upsample(Module):
    """Transposed convolution with kernel equal to stride."""

    def __init__(self, c_in: int, c_out: int, stride: tuple[int, int], rng: np.random.Generator,
                 bias: bool = True):
        sh, sw = stride
        self.stride = (sh, sw)
        self.c_out = c_out
        self.weight = parameter(init_uniform(rng, c_in, (c_in, sh * sw * c_out)))
        self.bias = parameter(np.zeros(c_out)) if bias else None

    def forward(self, x):
        return ops.upsample_transpose(x, self.weight, self.bias, self.stride)

    def flop_records(self, in_shape):
        B, H, W, C = in_shape
        sh, sw = self.stride
        out = (B, H * sh, W * sw, self.c_out)
        return out, [("conv", B * H * W * C * sh * sw * self.c_out)]


class Lateral(Module):
    """Brings one pyramid level to ``(B, H_s, A_out, width)``."""

    def __init__(self, level_shape: tuple[int, int, int], a_out: int, width: int, swap: bool,
                 rng: np.random.Generator, bias: bool = True):
        H, W, C = level_shape
        self.swap = swap
        if swap:
            self.to_azimuth = Linear(C, a_out, rng, bias=bias)
            self.proj = Linear(W, width, rng, bias=bias)
        else:
            if a_out % W:
                raise ContractError(f"azimuth extent {a_out} not a multiple of level width {W}")
            self.widen = Upsample(C, width, (1, a_out // W), rng, bias=bias)

    def forward(self, x):
        if self.swap:
            x = self.to_azimuth(x)                      # (B, H, W, A)
            x = ops.transpose(x, (0, 1, 3, 2))          # (B, H, A, W): Doppler now channels
            return self.proj(x)
        return self.widen(x)

    def flop_records(self, in_shape):
        if self.swap:
            B, H, W, C = in_shape
            s, r1 = self.to_azimuth.flop_records(in_shape)
            out, r2 = self.proj.flop_records((B, H, s[-1], W))
            return out, r1 + r2
        return self.widen.flop_records(in_shape)


class RADecoder(Module):
    """Coarse-to-fine fusion of pyramid levels ``1 .. S-1`` onto the detection grid.

    Level 1 must already sit at the grid's range extent, so ``S - 2``
    range-doubling blocks are needed.
    """

    def __init__(self, level_shapes: list[tuple[int, int, int]], grid: tuple[int, int], width: int,
                 rng: np.random.Generator, swap: bool = True, bias: bool = True):
        if len(level_shapes) < 2:
            raise ContractError("the decoder needs at least two pyramid levels")
        R, A = grid
        if level_shapes[1][0] != R:
            raise ShapeError(f"pyramid level 1 has range extent {level_shapes[1][0]}, grid needs {R}")
        self.grid = (R, A)
        self.width = width
        self.level_shapes = [tuple(s) for s in level_shapes]
        used = self.level_shapes[1:]
        self.laterals = [Lateral(s, A, width, swap, rng, bias) for s in used]
        self.ups = [Upsample(width, width, (2, 1), rng, bias) for _ in used[:-1]]
        self.fuse = [Conv2d(2 * width, width, rng, 3, bias) for _ in used[:-1]]

    def forward(self, pyramid):
        levels = list(pyramid)[1:]
        if len(levels) != len(self.laterals):
            raise ShapeError(f"expected {len(self.laterals) + 1} pyramid levels, got {len(levels) + 1}")
        for lvl, shape in zip(levels, self.level_shapes[1:]):
            if tuple(lvl.shape[1:]) != shape:
                raise ShapeError(f"pyramid level shape {lvl.shape[1:]} does not match {shape}")
        x = self.laterals[-1](levels[-1])
        for k in range(len(levels) - 2, -1, -1):
            x = self.ups[k](x)
            x = ops.concat([x, self.laterals[k](levels[k])], axis=-1)
            x = ops.relu(self.fuse[k](x))
        return x

    def flop_records(self, in_shape):
        B = in_shape[0]
        recs = []
        shapes = [(B,) + s for s in self.level_shapes[1:]]
        x, r = self.laterals[-1].flop_records(shapes[-1])
        recs += r
        for k in range(len(shapes) - 2, -1, -1):
            x, r = self.ups[k].flop_records(x)
            recs += r
            _, r = self.laterals[k].flop_records(shapes[k])
            recs += r
            x, r = self.fuse[k].flop_records(x[:-1] + (2 * self.width,))
            recs += r
        return x, recs


class ConvHead(Module):
    """``depth`` conv+ReLU layers then a conv to ``c_out`` channels."""

    def __init__(self, c_in: int, hidden: int, c_out: int, depth: int, rng: np.random.Generator,
                 out_bias: float = 0.0):
        self.layers = []
        c = c_in
        for _ in range(depth):
            self.layers.append(Conv2d(c, hidden, rng, 3))
            c = hidden
        self.out = Conv2d(c, c_out, rng, 3)
        self.out.bias.data[:] = out_bias

    def forward(self, x):
        for conv in self.layers:
            x = ops.relu(conv(x))
        return self.out(x)

    def flop_records(self, in_shape):
        recs = []
        s = tuple(in_shape)
        for conv in self.layers:
            s, r = conv.flop_records(s)
            recs += r
        s, r = self.out.flop_records(s)
        return s, recs + r


@dataclass
class DetectionGrid:
    """Head outputs for a batch.

    ``binary`` and ``freespace`` are probabilities; ``regression`` holds the
    (range, azimuth) offsets in coarse-cell units; ``class_logits`` are raw.
    Arrays are batched: ``binary`` is ``(B, R, A)``.
    """

    binary: Tensor
    regression: Tensor
    class_logits: Tensor | None = None
    freespace: Tensor | None = None

    def numpy(self) -> dict[str, np.ndarray | None]:
        return {k: (None if v is None else np.asarray(v.data)) for k, v in vars(self).items()}

    def frame(self, b: int) -> dict[str, np.ndarray | None]:
        return {k: (None if v is None else v[b]) for k, v in self.numpy().items()}


class DetectionHeads(Module):
    """Binary, regression, and optional class / free-space heads."""

    def __init__(self, c_in: int, rng: np.random.Generator, n_classes: int = 0, freespace: bool = False,
                 hidden: int = 32, depth: int = 1, freespace_stride: tuple[int, int] = (2, 2)):
        self.n_classes = n_classes
        prior = -math.log((1 - FOCAL_PRIOR) / FOCAL_PRIOR)
        self.binary = ConvHead(c_in, hidden, 1, depth, rng, out_bias=prior)
        self.regression = ConvHead(c_in, hidden, 2, depth, rng)
        self.classes = ConvHead(c_in, hidden, n_classes, depth, rng) if n_classes > 1 else None
        if freespace:
            self.freespace_up = Upsample(c_in, hidden, freespace_stride, rng)
            self.freespace = ConvHead(hidden, hidden, 1, depth, rng)
        else:
            self.freespace_up = self.freespace = None

    def forward(self, x) -> DetectionGrid:
        x = as_tensor(x)
        B, R, A, _ = x.shape
        binary = ops.reshape(ops.sigmoid(self.binary(x)), (B, R, A))
        reg = self.regression(x)
        cls = self.classes(x) if self.classes is not None else None
        free = None
        if self.freespace is not None:
            f = self.freespace(ops.relu(self.freespace_up(x)))
            free = ops.reshape(ops.sigmoid(f), f.shape[:-1])
        return DetectionGrid(binary, reg, cls, free)

    def flop_records(self, in_shape):
        recs = []
        for head in (self.binary, self.regression, self.classes):
            if head is not None:
                recs += head.flop_records(in_shape)[1]
        if self.freespace is not None:
            s, r = self.freespace_up.flop_records(in_shape)
            recs += r + self.freespace.flop_records(s)[1]
        return tuple(in_shape[:-1]), recs


# ---------------------------------------------------------------- decoding

@dataclass
class Detection:
    range: float
    azimuth: float
    score: float
    class_id: int | None = None


def cell_to_physical(i, j, dr, da, config: RadarConfig, range_reduction: int | None = None,
                     azimuth_reduction: int | None = None) -> tuple[float, float]:
    """Inverse of the ground-truth offset encoding."""
    nr = range_reduction or config.range_reduction
    na = azimuth_reduction or config.azimuth_reduction
    rng_m = float(config.bin_to_range((i + dr) * nr))
    az = float(config.bin_to_azimuth((j + da) * na))
    return rng_m, az


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def decode_detections(grid: dict, config: RadarConfig, threshold: float = 0.3,
                      nms_radius: tuple[float, float] | None = (2.0, 5.0),
                      range_reduction: int | None = None,
                      azimuth_reduction: int | None = None) -> list[Detection]:
    """Detections for one frame from its head outputs.

    ``grid`` maps ``binary`` ``(R, A)``, ``regression`` ``(R, A, 2)`` and
    optionally ``class_logits`` ``(R, A, C)`` to arrays.  Greedy suppression
    drops a candidate lying within ``nms_radius`` (metres, degrees) of an
    already kept, higher-scoring one; ``None`` disables it.
    """
    binary = np.asarray(grid["binary"])
    reg = np.asarray(grid["regression"])
    logits = grid.get("class_logits")
    cells = np.argwhere(binary >= threshold)
    if len(cells) == 0:
        return []
    scores = binary[cells[:, 0], cells[:, 1]]
    order = np.argsort(-scores, kind="stable")
    probs = _softmax(np.asarray(logits)) if logits is not None else None
    kept: list[Detection] = []
    for k in order:
        i, j = cells[k]
        dr, da = reg[i, j]
        r, az = cell_to_physical(i, j, dr, da, config, range_reduction, azimuth_reduction)
        if nms_radius is not None and any(
                abs(d.range - r) <= nms_radius[0] and abs(d.azimuth - az) <= nms_radius[1] for d in kept):
            continue
        cls = int(np.argmax(probs[i, j])) if probs is not None else None
        kept.append(Detection(r, az, float(scores[k]), cls))
    return kept


DETECTION_HEADER = "# frame_id range_m azimuth_deg score class_id"


def write_detections(fh: TextIO, frames: Iterable[tuple[int, list[Detection]]]) -> None:
    """One whitespace-separated record per detection; class ``-1`` means none."""
    fh.write(DETECTION_HEADER + "\n")
    for frame_id, dets in frames:
        for d in dets:
            cls = -1 if d.class_id is None else d.class_id
            fh.write(f"{frame_id} {d.range:.6f} {d.azimuth:.6f} {d.score:.6f} {cls}\n")


def read_detections(fh: TextIO) -> dict[int, list[Detection]]:
    out: dict[int, list[Detection]] = {}
    for line in fh:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fid, r, az, score, cls = line.split()
        c = int(cls)
        out.setdefault(int(fid), []).append(Detection(float(r), float(az), float(score), None if c < 0 else c))
    return out
