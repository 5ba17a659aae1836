"""Side-by-side views of the DSP transform and the learned one.

``emit_plots`` writes PNG figures (matplotlib, Agg backend) and the CSV
arrays behind them, so the comparison can be checked without an image viewer.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from . import dsp
from .errors import ContractError
from .model import RadarNet
from .numerics import Tensor

log = logging.getLogger(__name__)


def _heatmap(path, data: np.ndarray, title: str, xlabel: str, ylabel: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(data, aspect="auto", origin="lower", cmap="viridis")
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def _db(x: np.ndarray) -> np.ndarray:
    return 20 * np.log10(np.maximum(np.abs(x), 1e-12))


def transform_maps(model: RadarNet, frame: np.ndarray) -> dict[str, np.ndarray]:
    """Magnitude maps (dB, summed over channels) for one raw frame.

    Keys: ``dsp_rd`` (unwindowed, Doppler-shifted FFT pipeline),
    ``learned_rd`` (the model's transform layers), and ``|W|`` plus
    ``|W - W_dft|`` for each transform layer.
    """
    if model.front is None:
        raise ContractError("only ADC-input models carry a learned transform")
    frame = np.asarray(frame)
    if frame.ndim != 3:
        raise ContractError(f"expected one (N, chirps, channels) frame, got shape {frame.shape}")
    ref = dsp.rd_spectrum(frame[None], window=False, shift=True)[0]
    learned = model.front.transform(Tensor(frame[None])).data[0]
    out = {
        "dsp_rd": _db(np.sqrt((np.abs(ref) ** 2).sum(axis=-1))),
        "learned_rd": _db(np.sqrt((np.abs(learned) ** 2).sum(axis=-1))),
    }
    for name, layer in (("range", model.front.range_layer), ("doppler", model.front.doppler_layer)):
        w = layer.weight.data
        out[f"{name}_weight_abs"] = np.abs(w)
        out[f"{name}_weight_change"] = np.abs(w - layer.initial_weight())
    return out


def emit_plots(model: RadarNet, frame: np.ndarray, out_dir) -> list[Path]:
    """Write the comparison figures and CSVs into ``out_dir``; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    maps = transform_maps(model, frame)
    labels = {
        "dsp_rd": ("FFT range-Doppler (dB)", "Doppler bin", "range bin"),
        "learned_rd": ("learned transform output (dB)", "Doppler bin", "range bin"),
        "range_weight_abs": ("|W| range layer", "input sample", "output bin"),
        "range_weight_change": ("|W - W_dft| range layer", "input sample", "output bin"),
        "doppler_weight_abs": ("|W| Doppler layer", "input chirp", "output bin"),
        "doppler_weight_change": ("|W - W_dft| Doppler layer", "input chirp", "output bin"),
    }
    written = []
    for key, data in maps.items():
        png, csv = out_dir / f"{key}.png", out_dir / f"{key}.csv"
        _heatmap(png, data, *labels[key])
        np.savetxt(csv, data, delimiter=",", fmt="%.6e")
        written += [png, csv]
    div = model.front.divergence()
    with open(out_dir / "divergence.txt", "w") as fh:
        for k, v in div.items():
            fh.write(f"{k}_relative_frobenius {v:.6e}\n")
    written.append(out_dir / "divergence.txt")
    log.info("wrote %d plot files to %s", len(written), out_dir)
    return written
