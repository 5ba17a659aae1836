"""On-disk datasets.

A dataset root holds one directory per split.  Each split directory has

* ``manifest.txt``: ``key=value`` lines (sensor fields, frame count, seed);
* ``frames.bin``: fixed-size records, one per frame, of little-endian real64
  values with I and Q interleaved, in ``(N, chirps, channels)`` row-major order;
* ``scenes.jsonl``: one serialized scene per line, in record order.

Preprocessed inputs (``preprocess``) are written next to the frames as
``inputs.bin`` with an ``inputs.txt`` manifest, using the same record layout
with real values.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError
from .sim import RadarConfig, Scene, random_scene, synthesize_adc

log = logging.getLogger(__name__)

FORMAT = "rawradar-dataset"
FORMAT_VERSION = 1
SPLITS = ("train", "val", "test")
SPLIT_SIZES = {"desk": (2000, 400, 400), "LD": (400, 80, 80), "HD": (40, 8, 8)}


def write_manifest(path, entries: dict) -> None:
    with open(path, "w") as fh:
        for k, v in entries.items():
            fh.write(f"{k}={v}\n")


def read_manifest(path) -> dict[str, str]:
    out = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ContractError(f"{path}:{n}: expected key=value")
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def _parse_value(v: str):
    if v == "None":
        return None
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return v


def config_to_manifest(config: RadarConfig) -> dict:
    return {f"radar.{f.name}": repr(getattr(config, f.name)) if isinstance(getattr(config, f.name), float)
            else getattr(config, f.name) for f in dataclasses.fields(config)}


def config_from_manifest(entries: dict) -> RadarConfig:
    kw = {k[6:]: _parse_value(v) for k, v in entries.items() if k.startswith("radar.")}
    for name in ("bandwidth", "chirp_duration", "sample_rate", "carrier", "element_spacing", "noise_std"):
        if kw.get(name) is not None:
            kw[name] = float(kw[name])
    return RadarConfig(**kw)


def frame_seed(seed: int, split: str, index: int) -> int:
    ss = np.random.SeedSequence([seed, SPLITS.index(split), index])
    return int(ss.generate_state(1)[0])


@dataclass
class Split:
    frames: np.ndarray
    scenes: list[Scene]
    config: RadarConfig
    manifest: dict

    def __len__(self):
        return len(self.scenes)


def write_split(directory, config: RadarConfig, scenes: list[Scene], seed: int, split: str) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    record_bytes = int(np.prod(config.frame_shape)) * 2 * 8
    with open(d / "frames.bin", "wb") as fb, open(d / "scenes.jsonl", "w") as fs:
        for i, scene in enumerate(scenes):
            frame = synthesize_adc(scene, config, seed=frame_seed(seed, split, i))
            inter = np.empty(frame.samples.shape + (2,), dtype="<f8")
            inter[..., 0] = frame.samples.real
            inter[..., 1] = frame.samples.imag
            fb.write(inter.tobytes())
            fs.write(json.dumps(scene.to_dict()) + "\n")
    manifest = {"format": FORMAT, "version": FORMAT_VERSION, "split": split, "n_frames": len(scenes),
                "seed": seed, "record_bytes": record_bytes, "layout": "N,chirps,channels,iq",
                "dtype": "float64-le"}
    manifest.update(config_to_manifest(config))
    write_manifest(d / "manifest.txt", manifest)


def generate_dataset(root, config: RadarConfig, sizes: tuple[int, int, int] | None = None,
                     seed: int = 0, max_targets: int = 3) -> dict[str, int]:
    """Simulate every split under ``root``; returns frame counts per split."""
    sizes = sizes or SPLIT_SIZES.get(config.name, SPLIT_SIZES["desk"])
    root = Path(root)
    counts = {}
    for split, n in zip(SPLITS, sizes):
        rng = np.random.default_rng([seed, SPLITS.index(split)])
        scenes = [random_scene(config, rng, max_targets=max_targets, frame_id=i) for i in range(n)]
        write_split(root / split, config, scenes, seed, split)
        counts[split] = n
        log.info("wrote %d %s frames", n, split)
    return counts


def load_split(root, split: str, limit: int | None = None) -> Split:
    d = Path(root) / split
    if not (d / "manifest.txt").exists():
        raise FileNotFoundError(f"no dataset split at {d} (missing manifest.txt)")
    manifest = read_manifest(d / "manifest.txt")
    if manifest.get("format") != FORMAT or int(manifest.get("version", -1)) != FORMAT_VERSION:
        raise ContractError(f"{d}: unsupported dataset format")
    config = config_from_manifest(manifest)
    n = int(manifest["n_frames"])
    if limit is not None:
        n = min(n, limit)
    shape = config.frame_shape
    count = n * int(np.prod(shape)) * 2
    raw = np.fromfile(d / "frames.bin", dtype="<f8", count=count)
    if raw.size != count:
        raise ContractError(f"{d / 'frames.bin'} is truncated")
    raw = raw.reshape((n,) + shape + (2,))
    frames = raw[..., 0] + 1j * raw[..., 1]
    with open(d / "scenes.jsonl") as fh:
        scenes = [Scene.from_dict(json.loads(line)) for _, line in zip(range(n), fh)]
    return Split(frames, scenes, config, manifest)


def write_inputs(directory, tensor: np.ndarray, meta: dict) -> None:
    d = Path(directory)
    np.ascontiguousarray(tensor, dtype="<f8").tofile(d / "inputs.bin")
    entries = {"n_frames": tensor.shape[0], "shape": ",".join(str(s) for s in tensor.shape[1:]),
               "dtype": "float64-le"}
    entries.update(meta)
    write_manifest(d / "inputs.txt", entries)


def load_inputs(directory) -> tuple[np.ndarray, dict]:
    d = Path(directory)
    meta = read_manifest(d / "inputs.txt")
    shape = (int(meta["n_frames"]),) + tuple(int(s) for s in meta["shape"].split(","))
    return np.fromfile(d / "inputs.bin", dtype="<f8").reshape(shape), meta
