"""The full detector: input front end, backbone, range-angle decoder, heads."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ContractError, ShapeError
from .fourier import FourierNet
from .heads import DetectionHeads, RADecoder
from .numerics import Module, as_tensor, ops
from .sim import RadarConfig
from .swin import SWIN_PRESETS, SwinBackbone, SwinConfig

INPUT_MODES = ("ADC", "RD", "RAD")


@dataclass
class ModelConfig:
    swin: SwinConfig = field(default_factory=SwinConfig)
    decoder_width: int = 32
    head_hidden: int = 32
    head_depth: int = 1
    nonlinearity: str = "none"
    shifted_init: bool = True
    rad_azimuth_bins: int | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["swin"] = asdict(self.swin)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        sw = dict(d.pop("swin"))
        sw["depths"], sw["heads"] = tuple(sw["depths"]), tuple(sw["heads"])
        return cls(swin=SwinConfig(**sw), **d)


MODEL_PRESETS = {
    # widths sized so the ADC model lands near the published operation count
    "HD": dict(decoder_width=192, head_hidden=192, head_depth=2),
    "LD": dict(decoder_width=64, head_hidden=64, head_depth=1),
    "desk": dict(decoder_width=32, head_hidden=32, head_depth=1),
}


def model_config(preset_name: str, **overrides) -> ModelConfig:
    base = dict(MODEL_PRESETS.get(preset_name, MODEL_PRESETS["desk"]))
    swin_kw = dict(SWIN_PRESETS.get(preset_name, SWIN_PRESETS["desk"]))
    swin_kw.update(overrides.pop("swin", {}))
    base.update(overrides)
    return ModelConfig(swin=SwinConfig(**swin_kw), **base)


class RadarNet(Module):
    """Detector for one sensor configuration and input mode.

    Inputs, batched:

    * ``ADC``: raw complex frames ``(B, N, chirps, V)``;
    * ``RD``: normalized range-Doppler channels ``(B, N, chirps, 2V)``;
    * ``RAD``: normalized magnitude cubes ``(B, N, chirps, azimuth)``.  The
      cube is reordered to a (range, azimuth) map with Doppler as channels,
      so the decoder needs no axis swap.
    """

    def __init__(self, radar: RadarConfig, input_mode: str = "ADC", config: ModelConfig | None = None,
                 seed: int = 0):
        if input_mode not in INPUT_MODES:
            raise ContractError(f"input_mode must be one of {INPUT_MODES}, got {input_mode!r}")
        self.radar = radar
        self.input_mode = input_mode
        self.config = config or model_config(radar.name)
        cfg = self.config
        rng = np.random.default_rng(seed)
        N, M, V = radar.frame_shape
        if input_mode == "ADC":
            self.front = FourierNet(N, M, V, shifted_init=cfg.shifted_init, nonlinearity=cfg.nonlinearity)
            extent, c_in, swap = (N, M), 2 * V, True
        elif input_mode == "RD":
            self.front = None
            extent, c_in, swap = (N, M), 2 * V, True
        else:
            self.front = None
            a = cfg.rad_azimuth_bins or radar.azimuth_bins
            extent, c_in, swap = (N, a), M, False
        self.extent, self.c_in = extent, c_in
        self.backbone = SwinBackbone(c_in, extent, cfg.swin, rng)
        grid = radar.grid_shape
        self.decoder = RADecoder(self.backbone.out_shapes(), grid, cfg.decoder_width, rng, swap=swap)
        n_cls = radar.n_classes if radar.n_classes > 1 else 0
        want_free = radar.n_classes <= 1
        fs = None
        if want_free:
            FR, FA = radar.freespace_shape
            if FR % grid[0] or FA % grid[1]:
                raise ContractError(f"free-space extent {radar.freespace_shape} not a multiple of grid {grid}")
            fs = (FR // grid[0], FA // grid[1])
        self.heads = DetectionHeads(cfg.decoder_width, rng, n_classes=n_cls, freespace=want_free,
                                    hidden=cfg.head_hidden, depth=cfg.head_depth,
                                    freespace_stride=fs or (2, 2))

    @property
    def input_shape(self) -> tuple[int, ...]:
        N, M, V = self.radar.frame_shape
        if self.input_mode == "ADC":
            return (N, M, V)
        if self.input_mode == "RD":
            return (N, M, 2 * V)
        return (N, M, self.extent[1])

    def features(self, x):
        x = as_tensor(x)
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(f"{self.input_mode} model expects (B,) + {self.input_shape}, got {x.shape}")
        if self.input_mode == "ADC":
            return self.front(x)
        if self.input_mode == "RAD":
            return ops.transpose(x, (0, 1, 3, 2))
        return x

    def forward(self, x):
        return self.heads(self.decoder(self.backbone(self.features(x))))

    def flop_records(self, in_shape):
        recs = []
        if self.front is not None:
            s, recs = self.front.flop_records(in_shape)
        else:
            s = (in_shape[0],) + self.extent + (self.c_in,)
        _, r = self.backbone.flop_records(s)
        recs = recs + r
        s, r = self.decoder.flop_records((in_shape[0],))
        recs += r
        _, r = self.heads.flop_records(s)
        return s[:-1], recs + r
