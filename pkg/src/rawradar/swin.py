"""Hierarchical shifted-window attention backbone.

Feature maps are channels-last ``(B, H, W, C)``.  Each stage halves the
spatial extent and doubles the width; within a stage, blocks alternate between
plain window attention and attention over windows cyclically shifted by half a
window, with a mask that blocks pairs of tokens that only became neighbours
through the wrap-around.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError
from .numerics import LayerNorm, Linear, Module, as_tensor, ops, parameter
from .numerics.module import trunc_normal

MASK_VALUE = -1e4


@dataclass
class SwinConfig:
    embed_dim: int = 32
    depths: tuple = (2, 2, 4)
    heads: tuple = (2, 4, 8)
    window_size: int = 4
    mlp_ratio: float = 4.0
    patch_size: int = 2

    def __post_init__(self):
        if len(self.depths) != len(self.heads):
            raise ContractError("depths and heads need one entry per stage")
        for s, h in enumerate(self.heads):
            if (self.embed_dim * 2 ** s) % h:
                raise ContractError(f"stage {s}: width {self.embed_dim * 2 ** s} not divisible by {h} heads")

    @property
    def num_stages(self) -> int:
        return len(self.depths)

    def stage_dims(self) -> list[int]:
        return [self.embed_dim * 2 ** s for s in range(self.num_stages)]

    def stage_extents(self, H: int, W: int) -> list[tuple[int, int]]:
        return [(H // 2 ** (s + 1), W // 2 ** (s + 1)) for s in range(self.num_stages)]


SWIN_PRESETS = {
    "HD": dict(embed_dim=48, depths=(2, 2, 6, 2), heads=(3, 6, 12, 24), window_size=8),
    "LD": dict(embed_dim=32, depths=(2, 2, 4), heads=(2, 4, 8), window_size=4),
    "desk": dict(embed_dim=32, depths=(2, 2, 4), heads=(2, 4, 8), window_size=4),
}


@dataclass
class FeaturePyramid:
    levels: list = field(default_factory=list)

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, i):
        return self.levels[i]

    @property
    def shapes(self) -> list[tuple]:
        return [lvl.shape[1:] for lvl in self.levels]


def _pair_down(x, name: str):
    """``(B, H, W, C)`` to ``(B, H/2, W/2, 4C)``; each output pixel holds its 2x2 patch."""
    x = as_tensor(x)
    B, H, W, C = x.shape
    if H % 2 or W % 2:
        raise ContractError(f"{name} needs even spatial extents, got {(H, W)}")
    x = ops.reshape(x, (B, H // 2, 2, W // 2, 2, C))
    x = ops.transpose(x, (0, 1, 3, 2, 4, 5))
    return ops.reshape(x, (B, H // 2, W // 2, 4 * C))


class PatchEmbed(Module):
    """Non-overlapping 2x2 patches, linear projection, LayerNorm."""

    def __init__(self, c_in: int, dim: int, rng: np.random.Generator):
        self.proj = Linear(4 * c_in, dim, rng)
        self.norm = LayerNorm(dim)

    def forward(self, x):
        return self.norm(self.proj(_pair_down(x, "patch_embed")))

    def flop_records(self, in_shape):
        B, H, W, C = in_shape
        s, r1 = self.proj.flop_records((B, H // 2, W // 2, 4 * C))
        _, r2 = self.norm.flop_records(s)
        return s, r1 + r2


class PatchMerging(Module):
    """Concatenate 2x2 neighbourhoods (4C), LayerNorm, linear to 2C."""

    def __init__(self, dim: int, rng: np.random.Generator):
        self.norm = LayerNorm(4 * dim)
        self.reduction = Linear(4 * dim, 2 * dim, rng, bias=False)

    def forward(self, x):
        return self.reduction(self.norm(_pair_down(x, "patch_merging")))

    def flop_records(self, in_shape):
        B, H, W, C = in_shape
        s = (B, H // 2, W // 2, 4 * C)
        _, r1 = self.norm.flop_records(s)
        out, r2 = self.reduction.flop_records(s)
        return out, r1 + r2


def relative_position_index(w: int) -> np.ndarray:
    """``(w*w, w*w)`` index into a ``(2w-1)^2`` bias table."""
    coords = np.stack(np.meshgrid(np.arange(w), np.arange(w), indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :] + (w - 1)
    return rel[0] * (2 * w - 1) + rel[1]


def window_partition(x, w: int):
    """``(B, H, W, C)`` to ``(B * nW, w*w, C)`` in row-major window order."""
    B, H, W, C = x.shape
    if H % w or W % w:
        raise ShapeError(f"extent {(H, W)} not divisible by window {w}")
    x = ops.reshape(x, (B, H // w, w, W // w, w, C))
    x = ops.transpose(x, (0, 1, 3, 2, 4, 5))
    return ops.reshape(x, (B * (H // w) * (W // w), w * w, C))


def window_reverse(x, w: int, B: int, H: int, W: int):
    C = x.shape[-1]
    x = ops.reshape(x, (B, H // w, W // w, w, w, C))
    x = ops.transpose(x, (0, 1, 3, 2, 4, 5))
    return ops.reshape(x, (B, H, W, C))


def shift_region_labels(H: int, W: int, w: int, shift: int) -> np.ndarray:
    """Label map of the rolled feature map; tokens may only attend within a label."""
    labels = np.zeros((H, W), dtype=np.int64)
    cnt = 0
    for hs in (slice(0, -w), slice(-w, -shift), slice(-shift, None)):
        for ws in (slice(0, -w), slice(-w, -shift), slice(-shift, None)):
            labels[hs, ws] = cnt
            cnt += 1
    return labels


def shifted_window_mask(H: int, W: int, w: int, shift: int) -> np.ndarray:
    """``(nW, w*w, w*w)`` additive mask: 0 within a region, ``MASK_VALUE`` across."""
    labels = shift_region_labels(H, W, w, shift)
    win = labels.reshape(H // w, w, W // w, w).transpose(0, 2, 1, 3).reshape(-1, w * w)
    diff = win[:, :, None] != win[:, None, :]
    return np.where(diff, MASK_VALUE, 0.0)


class WindowAttention(Module):
    """Multi-head self-attention inside each window with relative position bias.

    ``score_entries`` accumulates the number of attention scores computed,
    which makes the linear-in-tokens cost directly observable.
    """

    def __init__(self, dim: int, heads: int, window: int, rng: np.random.Generator,
                 relative_bias: bool = True):
        if dim % heads:
            raise ContractError(f"dim {dim} not divisible by {heads} heads")
        self.dim, self.heads, self.window = dim, heads, window
        self.scale = (dim // heads) ** -0.5
        self.qkv = Linear(dim, 3 * dim, rng, std=0.02)
        self.proj = Linear(dim, dim, rng, std=0.02)
        self.relative_bias = relative_bias
        if relative_bias:
            self.bias_table = parameter(trunc_normal(rng, ((2 * window - 1) ** 2, heads)))
            self._rel_index = relative_position_index(window)
        self.score_entries = 0
        self.keep_attention = False
        self.last_attention = None

    def forward(self, x, mask: np.ndarray | None = None):
        x = as_tensor(x)
        Bn, T, C = x.shape
        if T != self.window ** 2:
            raise ShapeError(f"expected {self.window ** 2} tokens per window, got {T}")
        h, d = self.heads, C // self.heads
        qkv = ops.reshape(self.qkv(x), (Bn, T, 3, h, d))
        qkv = ops.transpose(qkv, (2, 0, 3, 1, 4))                  # (3, Bn, h, T, d)
        q, k, v = (ops.getitem(qkv, i) for i in range(3))
        scores = ops.mul(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), self.scale)
        if self.relative_bias:
            bias = ops.getitem(self.bias_table, self._rel_index.reshape(-1))
            bias = ops.transpose(ops.reshape(bias, (T, T, h)), (2, 0, 1))
            scores = ops.add(scores, bias)
        if mask is not None:
            nW = mask.shape[0]
            scores = ops.reshape(scores, (Bn // nW, nW, h, T, T))
            scores = ops.add(scores, np.broadcast_to(mask[:, None], (nW, h, T, T)))
            scores = ops.reshape(scores, (Bn, h, T, T))
        self.score_entries += Bn * h * T * T
        attn = ops.softmax(scores, axis=-1)
        if self.keep_attention:
            self.last_attention = attn.data
        out = ops.matmul(attn, v)                                  # (Bn, h, T, d)
        out = ops.reshape(ops.transpose(out, (0, 2, 1, 3)), (Bn, T, C))
        return self.proj(out)

    def flop_records(self, in_shape):
        Bn, T, C = in_shape
        _, r1 = self.qkv.flop_records(in_shape)
        _, r2 = self.proj.flop_records(in_shape)
        attn = [("attention", 2 * Bn * T * T * C), ("elementwise", 3 * Bn * self.heads * T * T)]
        return tuple(in_shape), r1 + attn + r2


class Mlp(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.fc1 = Linear(dim, hidden, rng, std=0.02)
        self.fc2 = Linear(hidden, dim, rng, std=0.02)

    def forward(self, x):
        return self.fc2(ops.gelu(self.fc1(x)))

    def flop_records(self, in_shape):
        s, r1 = self.fc1.flop_records(in_shape)
        out, r2 = self.fc2.flop_records(s)
        return out, r1 + [("elementwise", 8 * int(np.prod(s)))] + r2


class SwinBlock(Module):
    """``x + Attn(LN(x))`` then ``x + MLP(LN(x))``; ``shift > 0`` makes it the shifted variant."""

    def __init__(self, dim: int, heads: int, window: int, shift: int, rng: np.random.Generator,
                 mlp_ratio: float = 4.0, relative_bias: bool = True):
        if not 0 <= shift < window:
            raise ContractError(f"shift {shift} outside [0, {window})")
        self.window, self.shift = window, shift
        self.norm1 = LayerNorm(dim)
        self.attn = WindowAttention(dim, heads, window, rng, relative_bias)
        self.norm2 = LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio), rng)
        self._mask_cache: dict = {}
        self.residual = True

    def _mask(self, H, W):
        if self.shift == 0:
            return None
        if (H, W) not in self._mask_cache:
            self._mask_cache[(H, W)] = shifted_window_mask(H, W, self.window, self.shift)
        return self._mask_cache[(H, W)]

    def attention(self, x):
        """The (S)W-MHSA term alone, applied to an un-normalized map."""
        B, H, W, C = x.shape
        s, w = self.shift, self.window
        if s:
            x = ops.roll(x, (-s, -s), (1, 2))
        y = self.attn(window_partition(x, w), self._mask(H, W))
        y = window_reverse(y, w, B, H, W)
        if s:
            y = ops.roll(y, (s, s), (1, 2))
        return y

    def forward(self, x):
        x = as_tensor(x)
        a = self.attention(self.norm1(x))
        x = ops.add(a, x) if self.residual else a
        m = self.mlp(self.norm2(x))
        return ops.add(m, x) if self.residual else m

    def flop_records(self, in_shape):
        B, H, W, C = in_shape
        w = self.window
        tokens = (B * (H // w) * (W // w), w * w, C)
        recs = self.norm1.flop_records(in_shape)[1] + self.attn.flop_records(tokens)[1]
        recs += self.norm2.flop_records(in_shape)[1] + self.mlp.flop_records(in_shape)[1]
        recs.append(("elementwise", 2 * int(np.prod(in_shape))))
        return tuple(in_shape), recs


def effective_window(H: int, W: int, window: int) -> tuple[int, int]:
    """Window and shift actually used at extent ``(H, W)``.

    Maps no larger than one window use a single window and no shift, since
    shifting would only wrap the map onto itself.
    """
    m = min(H, W)
    if m <= window:
        return m, 0
    return window, window // 2


class SwinStage(Module):
    def __init__(self, dim: int, depth: int, heads: int, window: int, extent: tuple[int, int],
                 rng: np.random.Generator, mlp_ratio: float = 4.0, downsample: bool = False,
                 relative_bias: bool = True):
        H, W = extent
        w, s = effective_window(H, W, window)
        if H % w or W % w:
            raise ContractError(f"stage extent {extent} not divisible by window {w}")
        self.blocks = [SwinBlock(dim, heads, w, s if i % 2 else 0, rng, mlp_ratio, relative_bias)
                       for i in range(depth)]
        self.downsample = PatchMerging(dim, rng) if downsample else None

    def forward(self, x):
        for blk in self.blocks:
            x = blk(x)
        return x

    def flop_records(self, in_shape):
        recs = []
        for blk in self.blocks:
            recs += blk.flop_records(in_shape)[1]
        return tuple(in_shape), recs


class SwinBackbone(Module):
    """Patch embedding followed by stages joined by patch merging.

    ``forward`` returns a :class:`FeaturePyramid` with one map per stage.
    """

    def __init__(self, c_in: int, input_extent: tuple[int, int], config: SwinConfig,
                 rng: np.random.Generator, relative_bias: bool = True):
        H, W = input_extent
        div = 2 ** config.num_stages
        if H % div or W % div:
            raise ContractError(f"input extent {input_extent} must be divisible by {div}")
        self.config = config
        self.input_extent = (H, W)
        self.c_in = c_in
        self.patch_embed = PatchEmbed(c_in, config.embed_dim, rng)
        extents = config.stage_extents(H, W)
        dims = config.stage_dims()
        self.stages = [
            SwinStage(dims[s], config.depths[s], config.heads[s], config.window_size, extents[s], rng,
                      config.mlp_ratio, downsample=s < config.num_stages - 1, relative_bias=relative_bias)
            for s in range(config.num_stages)
        ]

    def forward(self, x) -> FeaturePyramid:
        x = as_tensor(x)
        if x.ndim != 4 or x.shape[1:] != self.input_extent + (self.c_in,):
            raise ShapeError(f"backbone expects (B, {self.input_extent[0]}, {self.input_extent[1]}, "
                             f"{self.c_in}), got {x.shape}")
        x = self.patch_embed(x)
        levels = []
        for stage in self.stages:
            x = stage(x)
            levels.append(x)
            if stage.downsample is not None:
                x = stage.downsample(x)
        return FeaturePyramid(levels)

    def out_shapes(self) -> list[tuple[int, int, int]]:
        return [ext + (d,) for ext, d in zip(self.config.stage_extents(*self.input_extent),
                                             self.config.stage_dims())]

    def flop_records(self, in_shape):
        s, recs = self.patch_embed.flop_records(in_shape)
        for stage in self.stages:
            s, r = stage.flop_records(s)
            recs += r
            if stage.downsample is not None:
                s, r = stage.downsample.flop_records(s)
                recs += r
        return s, recs

    def score_entries(self) -> int:
        return sum(blk.attn.score_entries for st in self.stages for blk in st.blocks)
