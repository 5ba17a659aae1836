"""Static operation counting.

Conventions: FLOPs = 2 * MACs for dense, convolution and attention products;
a complex MAC counts as 4 real MACs; an FFT of length N costs 5 N log2 N real
FLOPs; a real window multiplying complex data costs 2 FLOPs per sample.
Elementwise work (norms, activations, softmax) is tallied separately and not
included in the total.
"""

from __future__ import annotations

import math
import warnings
from collections import defaultdict
from dataclasses import dataclass, field

from .sim import RadarConfig

CONVENTIONS = ("FLOPs = 2*MACs (dense, conv, attention); complex MAC = 4 real MACs; "
               "FFT = 5*N*log2(N); window = 2 FLOPs per complex sample; elementwise excluded")

MAC_KINDS = {"dense": 2, "conv": 2, "attention": 2, "complex_dense": 8}
FLOP_KINDS = {"fft": 1, "window": 1}
TALLY_ONLY = {"elementwise"}


@dataclass
class FlopReport:
    flops: int
    params: int | None
    by_kind: dict[str, int] = field(default_factory=dict)
    elementwise: int = 0
    uncounted: list[str] = field(default_factory=list)

    def to_text(self, label: str = "model") -> str:
        lines = [f"# {CONVENTIONS}", f"{label}_flops {self.flops}", f"{label}_gflops {self.flops / 1e9:.4f}"]
        if self.params is not None:
            lines.append(f"{label}_params {self.params}")
        for k in sorted(self.by_kind):
            lines.append(f"{label}_{k}_flops {self.by_kind[k]}")
        lines.append(f"{label}_elementwise_flops_excluded {self.elementwise}")
        for u in self.uncounted:
            lines.append(f"{label}_uncounted {u}")
        return "\n".join(lines) + "\n"


def count_records(records, params: int | None = None) -> FlopReport:
    by_kind: dict[str, int] = defaultdict(int)
    elementwise = 0
    uncounted = []
    for kind, amount in records:
        if kind in MAC_KINDS:
            by_kind[kind] += MAC_KINDS[kind] * int(amount)
        elif kind in FLOP_KINDS:
            by_kind[kind] += FLOP_KINDS[kind] * int(amount)
        elif kind in TALLY_ONLY:
            elementwise += int(amount)
        else:
            uncounted.append(kind)
    if uncounted:
        warnings.warn(f"uncounted operation kinds: {sorted(set(uncounted))}")
    return FlopReport(sum(by_kind.values()), params, dict(by_kind), elementwise, sorted(set(uncounted)))


def count_flops(module, in_shape: tuple) -> FlopReport:
    """FLOPs of one inference of ``module`` on an input of ``in_shape`` (batch included)."""
    _, records = module.flop_records(tuple(in_shape))
    params = sum(p.size for p in module.parameters())  # a complex weight counts once
    return count_records(records, params)


def fft_flops(n: int) -> int:
    return int(round(5 * n * math.log2(n)))


def rd_pipeline_records(config: RadarConfig, window: bool = True) -> list[tuple[str, int]]:
    """Range and Doppler FFTs (plus windows) over every channel of one frame."""
    N, M, V = config.frame_shape
    recs = [("fft", M * V * fft_flops(N)), ("fft", N * V * fft_flops(M))]
    if window:
        recs.append(("window", 2 * 2 * N * M * V))
    return recs
