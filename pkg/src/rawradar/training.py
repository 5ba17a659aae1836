"""Run configuration, the training loop, evaluation and checkpoint I/O."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import dsp
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ContractError, NumericError
from .heads import decode_detections
from .losses import LossWeights, total_loss
from .metrics import EvalReport, evaluate
from .model import ModelConfig, RadarNet, model_config
from .numerics import Adam, Tape, clip_global_norm, grad, step_decay_lr
from .sim import RadarConfig, Scene, ground_truth_grids, preset

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    """Everything needed to reproduce a run.

    ``batch_size = 0`` picks the default for the preset and input mode
    (4 for HD and for RAD cubes, 16 otherwise).
    """

    preset: str = "desk"
    input_mode: str = "ADC"
    window: bool = True
    shift: bool = True
    nonlinearity: bool = False
    epochs: int = 150
    batch_size: int = 0
    lr: float = 1e-4
    lr_decay: float = 0.9
    decay_every: int = 10
    clip_norm: float = 10.0
    seed: int = 0
    alpha: float = 2.0
    beta: float = 1e2
    gamma: float = 1e5
    lam: float = 1e2
    threshold: float = 0.3
    nms_range: float = 2.0
    nms_angle: float = 5.0
    match_range: float = 2.0
    match_angle: float = 5.0
    embed_dim: int = 0
    depths: str = ""
    heads: str = ""
    window_size: int = 0
    decoder_width: int = 0
    head_hidden: int = 0
    max_train_frames: int = 0
    max_eval_frames: int = 0
    data_dir: str = ""
    out_dir: str = ""

    def __post_init__(self):
        if self.input_mode not in ("ADC", "RD", "RAD"):
            raise ContractError(f"input_mode must be ADC, RD or RAD, got {self.input_mode!r}")
        if self.batch_size < 0:
            raise ContractError("batch_size must be >= 1 (0 selects the default)")
        if not 0 < self.lr_decay <= 1:
            raise ContractError("lr_decay must lie in (0, 1]")
        if self.epochs < 0 or self.decay_every < 1:
            raise ContractError("epochs must be >= 0 and decay_every >= 1")

    @property
    def effective_batch(self) -> int:
        if self.batch_size:
            return self.batch_size
        if self.preset == "HD" or self.input_mode == "RAD":
            return 4
        return 16

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.beta, self.gamma, self.lam)

    def radar(self) -> RadarConfig:
        return preset(self.preset)

    def model_config(self) -> ModelConfig:
        over: dict = {"nonlinearity": "leaky_modrelu" if self.nonlinearity else "none"}
        swin = {}
        if self.embed_dim:
            swin["embed_dim"] = self.embed_dim
        if self.depths:
            swin["depths"] = tuple(int(v) for v in self.depths.split(","))
        if self.heads:
            swin["heads"] = tuple(int(v) for v in self.heads.split(","))
        if self.window_size:
            swin["window_size"] = self.window_size
        if swin:
            over["swin"] = swin
        if self.decoder_width:
            over["decoder_width"] = self.decoder_width
        if self.head_hidden:
            over["head_hidden"] = self.head_hidden
        return model_config(self.preset, **over)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    # flat key=value text format
    def to_text(self) -> str:
        return "".join(f"{f.name}={_fmt(getattr(self, f.name))}\n" for f in dataclasses.fields(self))

    @classmethod
    def from_text(cls, text: str, base: "RunConfig | None" = None) -> "RunConfig":
        return (base or cls()).replace(**parse_config_text(text))


def desk_recipe(**changes) -> RunConfig:
    """Settings for CPU training on the desk preset within minutes.

    Compared with the defaults: small batches for more updates per epoch, a
    larger learning rate, and loss weights rebalanced so detection rather
    than offset regression or classification drives the shared layers.
    """
    base = RunConfig(preset="desk", epochs=8, batch_size=4, lr=1e-3, beta=2.0, gamma=1.0)
    return base.replace(**changes)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_config_text(text: str) -> dict:
    """Parse ``key=value`` lines into typed RunConfig overrides.

    Blank lines and ``#`` comments are ignored; unknown keys are errors.
    """
    types = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractError(f"config line {n}: expected key=value, got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        if k not in types:
            raise ContractError(f"config line {n}: unknown key {k!r}")
        out[k] = _coerce(v, types[k], k)
    return out


def _coerce(v: str, kind: str, key: str):
    try:
        if kind == "bool":
            if v.lower() in ("1", "true", "yes", "on"):
                return True
            if v.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(v)
        if kind == "int":
            return int(v)
        if kind == "float":
            return float(v)
    except ValueError:
        raise ContractError(f"config key {key!r}: cannot parse {v!r} as {kind}") from None
    return v


def load_config_file(path, base: RunConfig | None = None) -> RunConfig:
    with open(path) as fh:
        return RunConfig.from_text(fh.read(), base)


# ---------------------------------------------------------------- inputs and targets

@dataclass
class InputPipeline:
    """Maps raw ADC frames to network inputs, with statistics frozen from training data."""

    mode: str
    window: bool = True
    shift: bool = True
    azimuth_bins: int = 32
    transformer: object = None

    def fit(self, frames: np.ndarray) -> "InputPipeline":
        if self.mode == "RD":
            self.transformer = dsp.RDTransformer(self.window, self.shift).fit(frames)
        elif self.mode == "RAD":
            self.transformer = dsp.RADTransformer(self.azimuth_bins, self.window).fit(frames)
        return self

    def transform(self, frames: np.ndarray) -> np.ndarray:
        if self.mode == "ADC":
            return np.asarray(frames)
        out = [self.transformer.transform(frames[i:i + 64]) for i in range(0, len(frames), 64)]
        return np.concatenate(out)

    def state(self) -> dict[str, np.ndarray]:
        if self.transformer is None:
            return {}
        return {"stats.mean": np.atleast_1d(self.transformer.mean_),
                "stats.std": np.atleast_1d(self.transformer.std_)}

    def load_state(self, tensors: dict[str, np.ndarray]) -> None:
        if self.mode == "ADC":
            return
        if self.mode == "RD":
            t = dsp.RDTransformer(self.window, self.shift)
            t.mean_, t.std_ = tensors["stats.mean"], tensors["stats.std"]
            t.n_channels_ = len(t.mean_)
        else:
            t = dsp.RADTransformer(self.azimuth_bins, self.window)
            t.mean_, t.std_ = float(tensors["stats.mean"][0]), float(tensors["stats.std"][0])
        self.transformer = t


def build_targets(scenes: Sequence[Scene], radar: RadarConfig) -> dict[str, np.ndarray]:
    grids = [ground_truth_grids(s, radar) for s in scenes]
    return {
        "binary": np.stack([g.binary for g in grids]),
        "regression": np.stack([g.regression for g in grids]),
        "classes": np.stack([g.classes for g in grids]),
        "freespace": np.stack([g.freespace for g in grids]),
    }


def _batch_targets(targets: dict, idx) -> dict:
    return {k: v[idx] for k, v in targets.items()}


# ---------------------------------------------------------------- inference and evaluation

def predict_grids(model: RadarNet, inputs: np.ndarray, batch_size: int = 16) -> dict[str, np.ndarray]:
    was_training = model.training
    model.eval()
    chunks: dict[str, list] = {}
    try:
        for i in range(0, len(inputs), batch_size):
            out = model(inputs[i:i + batch_size]).numpy()
            for k, v in out.items():
                if v is not None:
                    chunks.setdefault(k, []).append(v)
    finally:
        model.train(was_training)
    return {k: np.concatenate(v) for k, v in chunks.items()}


def detections_from_grids(grids: dict, radar: RadarConfig, cfg: RunConfig) -> list:
    n = len(grids["binary"])
    frames = []
    for b in range(n):
        frame = {k: v[b] for k, v in grids.items()}
        frames.append(decode_detections(frame, radar, cfg.threshold, (cfg.nms_range, cfg.nms_angle)))
    return frames


def evaluate_model(model: RadarNet, inputs: np.ndarray, scenes: Sequence[Scene], cfg: RunConfig,
                   targets: dict | None = None) -> tuple[EvalReport, list]:
    radar = model.radar
    grids = predict_grids(model, inputs, cfg.effective_batch)
    dets = detections_from_grids(grids, radar, cfg)
    fs = None
    if "freespace" in grids:
        truth = targets["freespace"] if targets is not None else build_targets(scenes, radar)["freespace"]
        fs = (list(grids["freespace"]), list(truth))
    report = evaluate({s.frame_id: d for s, d in zip(scenes, dets)}, {s.frame_id: s.targets for s in scenes},
                      cfg.match_range, cfg.match_angle,
                      n_classes=radar.n_classes if radar.n_classes > 1 else 0, freespace=fs)
    return report, dets


# ---------------------------------------------------------------- state

def model_state(model: RadarNet) -> dict[str, np.ndarray]:
    out = {f"param.{k}": p.data.copy() for k, p in model.named_parameters()}
    out.update({f"buffer.{k}": np.array(v) for k, v in model.buffers().items()})
    return out


def load_model_state(model: RadarNet, tensors: dict[str, np.ndarray]) -> None:
    params = dict(model.named_parameters())
    missing = [k for k in params if f"param.{k}" not in tensors]
    if missing:
        raise ContractError(f"checkpoint lacks parameters {missing[:5]}")
    for k, p in params.items():
        src = tensors[f"param.{k}"]
        if src.shape != p.shape:
            raise ContractError(f"parameter {k}: checkpoint shape {src.shape} vs model {p.shape}")
        p.data = np.array(src, dtype=p.data.dtype)
    model.load_buffers({k[7:]: v for k, v in tensors.items() if k.startswith("buffer.")})


@dataclass
class TrainState:
    model: RadarNet
    pipeline: InputPipeline
    config: RunConfig
    optimizer: Adam | None = None
    epoch: int = 0
    best: dict = field(default_factory=lambda: {"epoch": -1, "score": -1.0})
    history: list = field(default_factory=list)
    rng_state: dict | None = None


def save_run(path, state: TrainState) -> None:
    tensors = model_state(state.model)
    tensors.update(state.pipeline.state())
    opt_meta = None
    if state.optimizer is not None:
        opt = state.optimizer
        for i, (m, v) in enumerate(zip(opt.m, opt.v)):
            tensors[f"adam.m.{i}"] = m
            tensors[f"adam.v.{i}"] = v
        opt_meta = {"step": opt.step_count, "lr": opt.lr}
    meta = {
        "run_config": dataclasses.asdict(state.config),
        "model_config": state.model.config.to_dict(),
        "radar": state.model.radar.name,
        "epoch": state.epoch,
        "best": state.best,
        "optimizer": opt_meta,
        "rng_state": state.rng_state,
    }
    save_checkpoint(path, tensors, meta)


def load_run(path) -> TrainState:
    tensors, meta = load_checkpoint(path)
    cfg = RunConfig(**meta["run_config"])
    mcfg = ModelConfig.from_dict(meta["model_config"])
    model = RadarNet(preset(meta["radar"]), cfg.input_mode, mcfg, seed=cfg.seed)
    load_model_state(model, tensors)
    model.eval()
    pipe = InputPipeline(cfg.input_mode, cfg.window, cfg.shift, model.radar.azimuth_bins)
    pipe.load_state(tensors)
    opt = None
    if meta.get("optimizer"):
        opt = Adam(model.parameters(), lr=meta["optimizer"]["lr"])
        n = len(opt.m)
        opt.load_state({"step": meta["optimizer"]["step"], "lr": meta["optimizer"]["lr"],
                        "m": [tensors[f"adam.m.{i}"] for i in range(n)],
                        "v": [tensors[f"adam.v.{i}"] for i in range(n)]})
    return TrainState(model, pipe, cfg, opt, meta["epoch"], meta["best"], [], meta.get("rng_state"))


# ---------------------------------------------------------------- training

def train_step(model: RadarNet, optimizer: Adam, xb: np.ndarray, tb: dict, cfg: RunConfig) -> tuple[float, dict]:
    params = model.parameters()
    with Tape():
        grid = model(xb)
        loss, parts = total_loss(grid, tb, cfg.loss_weights())
        value = float(loss.data)
        if not math.isfinite(value):
            raise NumericError(f"non-finite loss {value} (parts {parts})")
        grads = grad(loss, params)
    grads, _ = clip_global_norm(grads, cfg.clip_norm)
    optimizer.step(grads)
    return value, parts


def train(cfg: RunConfig, train_frames: np.ndarray, train_scenes: Sequence[Scene],
          val_frames: np.ndarray | None = None, val_scenes: Sequence[Scene] | None = None,
          run_dir=None, log_fn: Callable[[str], None] | None = None) -> TrainState:
    """Train a fresh model; the returned state holds the best-scoring weights.

    Validation runs after each epoch; the best selection score (F1, or the
    mean of F1 and mAP with classes) decides which weights are kept.  With
    ``run_dir`` set, the config, a metric log and ``best.ckpt`` /
    ``last.ckpt`` are written there.
    """
    radar = cfg.radar()
    model = RadarNet(radar, cfg.input_mode, cfg.model_config(), seed=cfg.seed)
    pipeline = InputPipeline(cfg.input_mode, cfg.window, cfg.shift, radar.azimuth_bins).fit(train_frames)
    x_train = pipeline.transform(train_frames)
    t_train = build_targets(train_scenes, radar)
    has_val = val_frames is not None and val_scenes is not None and len(val_scenes) > 0
    if has_val:
        x_val = pipeline.transform(val_frames)
        t_val = build_targets(val_scenes, radar)
    opt = Adam(model.parameters(), lr=cfg.lr)
    state = TrainState(model, pipeline, cfg, opt)
    run_dir = Path(run_dir) if run_dir else None
    metric_log = None
    if run_dir:
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.txt").write_text(cfg.to_text())
        metric_log = open(run_dir / "metrics.log", "w")

    def emit(line: str, seconds: float) -> None:
        # wall time stays out of the metric log so fixed-seed logs compare equal
        if metric_log:
            metric_log.write(line + "\n")
            metric_log.flush()
        if log_fn:
            log_fn(f"{line} time {seconds:.1f}s")

    best_params = model_state(model)
    bs = cfg.effective_batch
    n = len(x_train)
    try:
        for epoch in range(cfg.epochs):
            state.epoch = epoch
            opt.lr = step_decay_lr(cfg.lr, epoch, cfg.lr_decay, cfg.decay_every)
            order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
            model.train()
            losses = []
            part_sums: dict[str, float] = {}
            t0 = time.perf_counter()
            for start in range(0, n, bs):
                idx = np.sort(order[start:start + bs])
                try:
                    value, parts = train_step(model, opt, x_train[idx], _batch_targets(t_train, idx), cfg)
                except NumericError as err:
                    load_model_state(model, best_params)
                    if run_dir:
                        save_run(run_dir / "last_good.ckpt", state)
                    raise NumericError(f"epoch {epoch}, batch at {start}: {err}; "
                                       "restored the last good weights") from err
                losses.append(value)
                for k, v in parts.items():
                    part_sums[k] = part_sums.get(k, 0.0) + v
            if model.front is not None:
                for layer in (model.front.range_layer, model.front.doppler_layer):
                    if not np.all(np.isfinite(layer.weight.data)):
                        raise NumericError(f"non-finite transform weights after epoch {epoch}")
            line = f"epoch {epoch} lr {opt.lr:.6g} loss {np.mean(losses):.6f}"
            line += "".join(f" loss_{k} {v / len(losses):.6f}" for k, v in part_sums.items())
            if has_val:
                rep, _ = evaluate_model(model, x_val, val_scenes, cfg, t_val)
                score = rep.selection_score()
                line += f" val_AP {rep.AP:.4f} val_AR {rep.AR:.4f} val_F1 {rep.F1:.4f}"
                if rep.mAP is not None:
                    line += f" val_mAP {rep.mAP:.4f}"
                if rep.mIoU is not None:
                    line += f" val_mIoU {rep.mIoU:.4f}"
            else:
                score = -float(np.mean(losses))
            state.history.append({"epoch": epoch, "loss": float(np.mean(losses)), "score": score})
            if score > state.best["score"]:
                state.best = {"epoch": epoch, "score": score}
                best_params = model_state(model)
                if run_dir:
                    save_run(run_dir / "best.ckpt", state)
            emit(line + f" score {score:.4f}", time.perf_counter() - t0)
        if run_dir:
            save_run(run_dir / "last.ckpt", state)
    finally:
        if metric_log:
            metric_log.close()
    load_model_state(model, best_params)
    model.eval()
    return state


def overfit_probe(cfg: RunConfig, frames: np.ndarray, scenes: Sequence[Scene], steps: int = 200,
                  lr: float = 1e-3) -> list[float]:
    """Train on a handful of frames as one batch; returns the loss per step."""
    radar = cfg.radar()
    model = RadarNet(radar, cfg.input_mode, cfg.model_config(), seed=cfg.seed)
    pipe = InputPipeline(cfg.input_mode, cfg.window, cfg.shift, radar.azimuth_bins).fit(frames)
    x = pipe.transform(frames)
    t = build_targets(scenes, radar)
    opt = Adam(model.parameters(), lr=lr)
    return [train_step(model, opt, x, t, cfg)[0] for _ in range(steps)]


def dump_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True))
