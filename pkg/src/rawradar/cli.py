"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure (numerics, missing data), 2 usage or
configuration error.  Output goes under ``--out``, which defaults to
``$RAWRADAR_OUT`` or ``./rawradar-out``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import dsp
from .data import SPLITS, generate_dataset, load_split, write_inputs
from .errors import ContractError, NumericError, SceneError
from .flops import CONVENTIONS, count_flops, count_records, rd_pipeline_records
from .heads import write_detections
from .model import INPUT_MODES, RadarNet
from .sim import PRESETS, preset, random_scene, synthesize_adc
from .training import RunConfig, evaluate_model, load_config_file, load_run, parse_config_text, train

log = logging.getLogger("rawradar")

OUT_ENV = "RAWRADAR_OUT"
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
EVAL_KEYS = {"threshold", "nms_range", "nms_angle", "match_range", "match_angle", "max_eval_frames",
             "data_dir", "batch_size"}


class UsageError(Exception):
    pass


def default_out() -> Path:
    return Path(os.environ.get(OUT_ENV, "rawradar-out"))


def run_config(args, **overrides) -> RunConfig:
    cfg = load_config_file(args.config) if args.config else RunConfig()
    if args.seed is not None:
        overrides["seed"] = args.seed
    return cfg.replace(**{k: v for k, v in overrides.items() if v is not None})


def data_dir(args, cfg: RunConfig) -> Path:
    d = args.data or cfg.data_dir or (args.out / "data")
    return Path(d)


# ---------------------------------------------------------------- subcommands

def cmd_gen_data(args) -> int:
    cfg = run_config(args, preset=args.preset)
    radar = preset(cfg.preset)
    sizes = tuple(int(s) for s in args.sizes.split(",")) if args.sizes else None
    if sizes is not None and len(sizes) != 3:
        raise UsageError("--sizes takes three counts: train,val,test")
    root = data_dir(args, cfg)
    counts = generate_dataset(root, radar, sizes, seed=cfg.seed, max_targets=args.max_targets)
    print(f"wrote {root}: " + ", ".join(f"{k}={v}" for k, v in counts.items()))
    return EXIT_OK


def cmd_preprocess(args) -> int:
    cfg = run_config(args, window=args.window, shift=args.shift)
    root = data_dir(args, cfg)
    train_split = load_split(root, "train")
    radar = train_split.config
    if args.rad:
        tr = dsp.RADTransformer(radar.azimuth_bins, cfg.window, cfg.shift)
    else:
        tr = dsp.RDTransformer(cfg.window, cfg.shift)
    tr.fit(train_split.frames)
    kind = "RAD" if args.rad else "RD"
    dest = args.out / f"inputs-{kind}-w{int(cfg.window)}-s{int(cfg.shift)}"
    for split in SPLITS:
        try:
            s = train_split if split == "train" else load_split(root, split)
        except FileNotFoundError:
            continue
        (dest / split).mkdir(parents=True, exist_ok=True)
        x = np.concatenate([tr.transform(s.frames[i:i + 64]) for i in range(0, len(s), 64)])
        meta = {"kind": kind, "window": cfg.window, "shift": cfg.shift,
                "stats_mean": ",".join(repr(float(v)) for v in np.atleast_1d(tr.mean_)),
                "stats_std": ",".join(repr(float(v)) for v in np.atleast_1d(tr.std_))}
        write_inputs(dest / split, x, meta)
        print(f"{split}: {x.shape[0]} x {x.shape[1:]} -> {dest / split}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = run_config(args, input_mode=args.mode, epochs=args.epochs, preset=args.preset, lr=args.lr)
    root = data_dir(args, cfg)
    tr = load_split(root, "train", cfg.max_train_frames or None)
    if tr.config.name != cfg.preset:
        raise UsageError(f"dataset preset {tr.config.name!r} differs from run preset {cfg.preset!r}")
    va = load_split(root, "val", cfg.max_eval_frames or None)
    run_dir = Path(cfg.out_dir) if cfg.out_dir else args.out / (args.name or f"{cfg.preset}-{cfg.input_mode}")
    state = train(cfg, tr.frames, tr.scenes, va.frames, va.scenes, run_dir=run_dir, log_fn=print)
    print(f"best epoch {state.best['epoch']} score {state.best['score']:.4f}; checkpoints in {run_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    state = load_run(args.checkpoint)
    cfg = state.config
    if args.config:
        # evaluation settings may change; the architecture is fixed by the checkpoint
        over = parse_config_text(Path(args.config).read_text())
        cfg = cfg.replace(**{k: v for k, v in over.items() if k in EVAL_KEYS})
    root = Path(args.data or cfg.data_dir or args.out / "data")
    split = load_split(root, args.split, cfg.max_eval_frames or None)
    x = state.pipeline.transform(split.frames)
    report, dets = evaluate_model(state.model, x, split.scenes, cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    stem = args.out / f"eval-{Path(args.checkpoint).parent.name}-{args.split}"
    Path(f"{stem}.metrics.txt").write_text(report.to_text())
    with open(f"{stem}.detections.txt", "w") as fh:
        write_detections(fh, [(s.frame_id, d) for s, d in zip(split.scenes, dets)])
    sys.stdout.write(report.to_text())
    print(f"wrote {stem}.metrics.txt and {stem}.detections.txt")
    return EXIT_OK


def cmd_dump_transform(args) -> int:
    from .plots import emit_plots

    state = load_run(args.checkpoint)
    if state.model.front is None:
        raise UsageError("dump-transform needs a checkpoint of an ADC-input model")
    if args.data:
        frame = load_split(args.data, args.split, args.frame + 1).frames[args.frame]
    else:
        radar = state.model.radar
        rng = np.random.default_rng(args.seed or 0)
        frame = synthesize_adc(random_scene(radar, rng), radar, seed=args.seed or 0).samples
    dest = args.out / "transform"
    for name, layer in (("range", state.model.front.range_layer), ("doppler", state.model.front.doppler_layer)):
        dest.mkdir(parents=True, exist_ok=True)
        w = layer.weight.data
        np.savetxt(dest / f"{name}_weight_real.csv", w.real, delimiter=",", fmt="%.9e")
        np.savetxt(dest / f"{name}_weight_imag.csv", w.imag, delimiter=",", fmt="%.9e")
    emit_plots(state.model, frame, dest)
    for k, v in state.model.front.divergence().items():
        print(f"{k}_relative_frobenius {v:.6e}")
    print(f"wrote {dest}")
    return EXIT_OK


def cmd_flops(args) -> int:
    from .fourier import FourierNet

    cfg = run_config(args, preset=args.preset)
    radar = preset(cfg.preset)
    N, M, V = radar.frame_shape
    print(f"# preset {radar.name}: frame {N}x{M}x{V}")
    fn = count_flops(FourierNet(N, M, V), (1, N, M, V))
    print(fn.to_text("fourier_net"), end="")
    for w in (True, False):
        rep = count_records(rd_pipeline_records(radar, window=w))
        print(rep.to_text(f"rd_fft_{'windowed' if w else 'plain'}"), end="")
    modes = [args.mode] if args.mode else list(INPUT_MODES)
    for mode in modes:
        net = RadarNet(radar, mode, cfg.replace(input_mode=mode).model_config(), seed=cfg.seed)
        rep = count_flops(net, (1,) + net.input_shape)
        print(rep.to_text(f"model_{mode}"), end="")
        bb = count_flops(net.backbone, (1,) + net.extent + (net.c_in,))
        print(f"model_{mode}_backbone_flops {bb.flops}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _common_flags(default) -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=default, help="flat key=value run configuration file")
    common.add_argument("--seed", type=int, default=default, help="override the configured seed")
    common.add_argument("--out", type=Path, default=default,
                        help=f"output root (default ${OUT_ENV} or ./rawradar-out)")
    common.add_argument("-v", "--verbose", action="store_true", default=default or False)
    return common


def build_parser() -> argparse.ArgumentParser:
    # flags are accepted before or after the subcommand; the subcommand copy
    # suppresses its defaults so it never clobbers an earlier value
    top = _common_flags(None)
    common = _common_flags(argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="rawradar", description=__doc__.splitlines()[0], parents=[top])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="simulate a dataset")
    g.add_argument("--preset", choices=sorted(PRESETS))
    g.add_argument("--sizes", help="train,val,test frame counts")
    g.add_argument("--max-targets", type=int, default=3)
    g.add_argument("--data", help="dataset root (default <out>/data)")
    g.set_defaults(func=cmd_gen_data)

    pp = sub.add_parser("preprocess", parents=[common], help="write FFT-pipeline inputs")
    pp.add_argument("--data")
    pp.add_argument("--window", action=argparse.BooleanOptionalAction, default=None)
    pp.add_argument("--shift", action=argparse.BooleanOptionalAction, default=None)
    pp.add_argument("--rad", action="store_true", help="range-azimuth-Doppler cubes instead of RD maps")
    pp.set_defaults(func=cmd_preprocess)

    t = sub.add_parser("train", parents=[common], help="train a detector")
    t.add_argument("--data")
    t.add_argument("--mode", choices=INPUT_MODES)
    t.add_argument("--preset", choices=sorted(PRESETS))
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--name", help="run directory name under --out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data")
    e.add_argument("--split", choices=SPLITS, default="test")
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("dump-transform", parents=[common], help="export learned transform weights and plots")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--data")
    d.add_argument("--split", choices=SPLITS, default="test")
    d.add_argument("--frame", type=int, default=0)
    d.set_defaults(func=cmd_dump_transform)

    f = sub.add_parser("flops", parents=[common], help="static operation counts")
    f.add_argument("--preset", choices=sorted(PRESETS))
    f.add_argument("--mode", choices=INPUT_MODES)
    f.set_defaults(func=cmd_flops)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.out = args.out or default_out()
    try:
        return args.func(args)
    except (UsageError, ContractError, SceneError) as err:
        print(f"rawradar: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, FileNotFoundError, OSError) as err:
        print(f"rawradar: failed: {err}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
