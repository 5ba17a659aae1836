"""FMCW point-target simulator and ground-truth grid encoding.

The beat-signal model is the narrowband one: each target contributes a
separable complex exponential over fast time (range), slow time (Doppler)
and the virtual array (azimuth).  Range migration and path loss are ignored.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, SceneError

C_LIGHT = 299_792_458.0


class CollisionWarning(UserWarning):
    """Two targets fall into the same coarse detection cell."""


@dataclass(frozen=True)
class RadarConfig:
    """Sensor parameters plus the native range-azimuth grid they imply.

    ``channel_mode='virtual'`` forms ``n_tx * n_rx`` channels; ``'rx'`` keeps
    the receiver dimension only (the HD convention).
    """

    n_tx: int
    n_rx: int
    samples_per_chirp: int
    chirps_per_frame: int
    bandwidth: float
    chirp_duration: float
    sample_rate: float
    carrier: float = 77e9
    element_spacing: float | None = None
    noise_std: float = 0.0
    azimuth_bins: int = 32
    n_classes: int = 1
    range_reduction: int = 4
    azimuth_reduction: int = 2
    channel_mode: str = "virtual"
    name: str = "custom"

    def __post_init__(self):
        for fld in ("n_tx", "n_rx", "samples_per_chirp", "chirps_per_frame", "azimuth_bins"):
            if getattr(self, fld) < 1:
                raise ContractError(f"{fld} must be positive")
        if self.bandwidth <= 0 or self.chirp_duration <= 0 or self.sample_rate <= 0:
            raise ContractError("bandwidth, chirp_duration and sample_rate must be positive")
        if self.samples_per_chirp > self.sample_rate * self.chirp_duration * (1 + 1e-9):
            raise ContractError("samples_per_chirp exceeds sample_rate * chirp_duration")
        if self.channel_mode not in ("virtual", "rx"):
            raise ContractError(f"unknown channel_mode {self.channel_mode!r}")
        if self.element_spacing is None:
            object.__setattr__(self, "element_spacing", self.wavelength / 2)

    @property
    def wavelength(self) -> float:
        return C_LIGHT / self.carrier

    @property
    def n_virtual(self) -> int:
        return self.n_tx * self.n_rx if self.channel_mode == "virtual" else self.n_rx

    @property
    def frame_shape(self) -> tuple[int, int, int]:
        return (self.samples_per_chirp, self.chirps_per_frame, self.n_virtual)

    @property
    def range_resolution(self) -> float:
        return C_LIGHT / (2 * self.bandwidth)

    @property
    def range_bin(self) -> float:
        """Metres per range-FFT bin."""
        return self.range_resolution * self.sample_rate * self.chirp_duration / self.samples_per_chirp

    @property
    def max_range(self) -> float:
        return self.range_bin * self.samples_per_chirp

    @property
    def max_velocity(self) -> float:
        return self.wavelength / (4 * self.chirp_duration)

    @property
    def velocity_bin(self) -> float:
        return self.wavelength / (2 * self.chirp_duration * self.chirps_per_frame)

    @property
    def spacing_ratio(self) -> float:
        """Element spacing in wavelengths."""
        return self.element_spacing / self.wavelength

    @property
    def fov_deg(self) -> float:
        return float(np.degrees(np.arcsin(min(1.0, 0.5 / self.spacing_ratio))))

    @property
    def grid_shape(self) -> tuple[int, int]:
        return (self.samples_per_chirp // self.range_reduction, self.azimuth_bins // self.azimuth_reduction)

    @property
    def freespace_shape(self) -> tuple[int, int]:
        return (self.samples_per_chirp // 2, self.azimuth_bins // 4)

    # bin <-> physical conversions; fractional bins are allowed
    def range_to_bin(self, r):
        return np.asarray(r) / self.range_bin

    def bin_to_range(self, u):
        return np.asarray(u) * self.range_bin

    def azimuth_to_bin(self, deg):
        """Native azimuth bin after centring: uniform in ``sin(theta)``."""
        s = np.sin(np.radians(deg))
        return self.azimuth_bins / 2 + self.spacing_ratio * s * self.azimuth_bins

    def bin_to_azimuth(self, u):
        s = (np.asarray(u) - self.azimuth_bins / 2) / (self.spacing_ratio * self.azimuth_bins)
        return np.degrees(np.arcsin(np.clip(s, -1.0, 1.0)))

    def velocity_to_bin(self, v):
        """Doppler bin after centring."""
        return self.chirps_per_frame / 2 + np.asarray(v) / self.velocity_bin

    def azimuth_bin_width_deg(self, deg) -> float:
        """Local angular width of one native azimuth bin."""
        c = max(np.cos(np.radians(deg)), 1e-6)
        return float(np.degrees(1.0 / (self.spacing_ratio * self.azimuth_bins * c)))

    def replace(self, **changes) -> "RadarConfig":
        return dataclasses.replace(self, **changes)


def _preset(name, **kw) -> RadarConfig:
    n = kw["samples_per_chirp"]
    tc = kw["chirp_duration"]
    return RadarConfig(sample_rate=n / tc, name=name, **kw)


PRESETS = {
    # 12 Tx x 16 Rx sensor; only the receiver dimension is exposed
    "HD": _preset("HD", n_tx=12, n_rx=16, samples_per_chirp=512, chirps_per_frame=256,
                  bandwidth=750e6, chirp_duration=20e-6, carrier=76.6e9, azimuth_bins=896,
                  n_classes=1, range_reduction=4, azimuth_reduction=8, channel_mode="rx",
                  noise_std=0.1),
    "LD": _preset("LD", n_tx=2, n_rx=4, samples_per_chirp=256, chirps_per_frame=64,
                  bandwidth=768e6, chirp_duration=72e-6, carrier=77e9, azimuth_bins=256,
                  n_classes=6, range_reduction=4, azimuth_reduction=2, noise_std=0.1),
    "desk": _preset("desk", n_tx=2, n_rx=4, samples_per_chirp=64, chirps_per_frame=32,
                    bandwidth=150e6, chirp_duration=50e-6, carrier=77e9, azimuth_bins=32,
                    n_classes=2, range_reduction=4, azimuth_reduction=2, noise_std=0.5),
}

LD_CLASS_NAMES = ("bicycle", "bus", "car", "motorcycle", "person", "truck")


def preset(name: str) -> RadarConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ContractError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass
class Target:
    range: float
    radial_velocity: float
    azimuth: float
    amplitude: float = 1.0
    class_id: int = 0


@dataclass
class Scene:
    targets: list[Target] = field(default_factory=list)
    frame_id: int = 0

    def to_dict(self) -> dict:
        return {"frame_id": self.frame_id, "targets": [dataclasses.asdict(t) for t in self.targets]}

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        return cls([Target(**t) for t in d["targets"]], int(d["frame_id"]))


@dataclass
class ADCFrame:
    """Raw complex samples ``(N, chirps, channels)``; never normalized."""

    samples: np.ndarray
    config: RadarConfig
    scene: Scene


def validate_scene(scene: Scene, config: RadarConfig) -> None:
    for t in scene.targets:
        if not 0 < t.range < config.max_range:
            raise SceneError(f"range {t.range} m outside (0, {config.max_range:.3f})")
        if abs(t.radial_velocity) >= config.max_velocity:
            raise SceneError(f"velocity {t.radial_velocity} m/s beyond +-{config.max_velocity:.3f}")
        if abs(t.azimuth) >= config.fov_deg:
            raise SceneError(f"azimuth {t.azimuth} deg beyond +-{config.fov_deg:.2f}")
        if not 0 <= t.class_id < max(config.n_classes, 1):
            raise SceneError(f"class_id {t.class_id} outside [0, {config.n_classes})")


def target_signal(t: Target, config: RadarConfig) -> np.ndarray:
    n = np.arange(config.samples_per_chirp)
    m = np.arange(config.chirps_per_frame)
    a = np.arange(config.n_virtual)
    f_beat = 2 * config.bandwidth * t.range / (C_LIGHT * config.chirp_duration)
    f_dopp = 2 * t.radial_velocity / config.wavelength
    fast = np.exp(2j * np.pi * f_beat * n / config.sample_rate)
    slow = np.exp(2j * np.pi * f_dopp * m * config.chirp_duration)
    array = np.exp(2j * np.pi * config.spacing_ratio * a * np.sin(np.radians(t.azimuth)))
    return t.amplitude * fast[:, None, None] * slow[None, :, None] * array[None, None, :]


def synthesize_adc(scene: Scene, config: RadarConfig, seed: int = 0) -> ADCFrame:
    """Beat-signal frame for ``scene`` plus complex Gaussian noise.

    Identical ``(scene, config, seed)`` gives a bit-identical frame.
    """
    validate_scene(scene, config)
    samples = np.zeros(config.frame_shape, dtype=np.complex128)
    for t in scene.targets:
        samples += target_signal(t, config)
    if config.noise_std > 0:
        rng = np.random.default_rng(seed)
        noise = rng.normal(0.0, config.noise_std, size=config.frame_shape + (2,))
        samples += noise[..., 0] + 1j * noise[..., 1]
    return ADCFrame(samples, config, scene)


@dataclass
class GroundTruth:
    """Detection-grid labels for one frame.

    ``regression[..., 0]`` is the range offset and ``[..., 1]`` the azimuth
    offset, both fractions of a coarse cell in ``[0, 1)``.  ``freespace`` is 1
    for free cells.
    """

    binary: np.ndarray
    regression: np.ndarray
    classes: np.ndarray
    freespace: np.ndarray


def encode_target(t: Target, config: RadarConfig, range_reduction: int, azimuth_reduction: int):
    """Coarse cell ``(i, j)`` and fractional offsets of a target."""
    ur = float(config.range_to_bin(t.range)) / range_reduction
    ua = float(config.azimuth_to_bin(t.azimuth)) / azimuth_reduction
    i, j = int(np.floor(ur)), int(np.floor(ua))
    return i, j, ur - i, ua - j


def ground_truth_grids(scene: Scene, config: RadarConfig, range_reduction: int | None = None,
                       azimuth_reduction: int | None = None) -> GroundTruth:
    nr = range_reduction or config.range_reduction
    na = azimuth_reduction or config.azimuth_reduction
    if config.samples_per_chirp % nr or config.azimuth_bins % na:
        raise ContractError(f"reductions ({nr}, {na}) must divide native bins "
                            f"({config.samples_per_chirp}, {config.azimuth_bins})")
    R, A = config.samples_per_chirp // nr, config.azimuth_bins // na
    C = max(config.n_classes, 1)
    binary = np.zeros((R, A))
    regression = np.zeros((R, A, 2))
    classes = np.zeros((R, A, C))
    owner: dict[tuple[int, int], float] = {}
    for t in scene.targets:
        i, j, dr, da = encode_target(t, config, nr, na)
        if not (0 <= i < R and 0 <= j < A):
            continue
        if (i, j) in owner:
            warnings.warn(f"two targets in coarse cell ({i}, {j}); keeping the stronger", CollisionWarning)
            if owner[(i, j)] >= t.amplitude:
                continue
        owner[(i, j)] = t.amplitude
        binary[i, j] = 1.0
        regression[i, j] = (dr, da)
        classes[i, j] = 0.0
        classes[i, j, t.class_id] = 1.0
    return GroundTruth(binary, regression, classes, freespace_mask(scene, config))


def freespace_mask(scene: Scene, config: RadarConfig) -> np.ndarray:
    """Cells strictly nearer than the closest reflector in their azimuth column."""
    FR, FA = config.freespace_shape
    nearest = np.full(FA, np.inf)
    for t in scene.targets:
        j = int(np.floor(float(config.azimuth_to_bin(t.azimuth)) / 4))
        if 0 <= j < FA:
            nearest[j] = min(nearest[j], t.range)
    centers = (np.arange(FR) + 0.5) * 2 * config.range_bin
    return (centers[:, None] < nearest[None, :]).astype(float)


# ---------------------------------------------------------------- scene sampling

def class_profile(class_id: int, n_classes: int, config: RadarConfig) -> tuple[tuple, tuple]:
    """Amplitude and |velocity| intervals that make classes separable."""
    vmax = 0.9 * config.max_velocity
    width = vmax / max(n_classes, 1)
    amp = (0.5 + 1.0 * class_id, 1.0 + 1.0 * class_id)
    vel = (class_id * width, (class_id + 0.8) * width)
    return amp, vel


def random_scene(config: RadarConfig, rng: np.random.Generator, max_targets: int = 3,
                 min_targets: int = 1, max_azimuth: float = 50.0, frame_id: int = 0,
                 max_tries: int = 100) -> Scene:
    """Random scene with at most one target per coarse cell.

    Targets are kept at least two coarse cells apart in range or azimuth so
    labels never collide.
    """
    n = int(rng.integers(min_targets, max_targets + 1))
    az_lim = min(max_azimuth, 0.95 * config.fov_deg)
    C = max(config.n_classes, 1)
    targets: list[Target] = []
    cells: list[tuple[int, int]] = []
    for _ in range(max_tries):
        if len(targets) == n:
            break
        cls = int(rng.integers(C))
        (a_lo, a_hi), (v_lo, v_hi) = class_profile(cls, C, config)
        t = Target(
            range=float(rng.uniform(2 * config.range_bin, config.max_range - 2 * config.range_bin)),
            radial_velocity=float(rng.choice([-1.0, 1.0]) * rng.uniform(v_lo, v_hi)),
            azimuth=float(rng.uniform(-az_lim, az_lim)),
            amplitude=float(rng.uniform(a_lo, a_hi)),
            class_id=cls,
        )
        i, j, _, _ = encode_target(t, config, config.range_reduction, config.azimuth_reduction)
        if any(abs(i - ci) < 2 and abs(j - cj) < 2 for ci, cj in cells):
            continue
        targets.append(t)
        cells.append((i, j))
    return Scene(targets, frame_id)
