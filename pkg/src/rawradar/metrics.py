"""Detection and segmentation metrics.

AP here is the precision at the operating threshold (TP / (TP + FP)), not an
area under a precision-recall curve.  Detections are matched to truths
greedily by normalized physical distance inside (range, angle) gates.
Range and angle errors are mean absolute errors over true positives.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ContractError
from .heads import Detection
from .sim import Target

log = logging.getLogger(__name__)


def _rate(num: int, den: int, empty: float) -> float:
    return num / den if den else empty


def f1_score(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p > 0 and r > 0 else 0.0


def match_frame(dets: Sequence[Detection], truths: Sequence[Target], match_range: float,
                match_angle: float) -> list[tuple[int, int]]:
    """Greedy one-to-one matching; returns ``(detection index, truth index)`` pairs.

    Candidate pairs inside both gates are visited in order of increasing
    ``hypot(dr / match_range, dtheta / match_angle)``, ties broken by higher score.
    """
    pairs = []
    for i, d in enumerate(dets):
        for j, t in enumerate(truths):
            dr, da = abs(d.range - t.range), abs(d.azimuth - t.azimuth)
            if dr <= match_range and da <= match_angle:
                pairs.append((math.hypot(dr / match_range, da / match_angle), -d.score, i, j))
    pairs.sort()
    used_d, used_t, out = set(), set(), []
    for _, _, i, j in pairs:
        if i in used_d or j in used_t:
            continue
        used_d.add(i)
        used_t.add(j)
        out.append((i, j))
    return out


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        # no detections: perfect if nothing was missed either
        return _rate(self.tp, self.tp + self.fp, 1.0 if self.fn == 0 else 0.0)

    @property
    def recall(self) -> float:
        return _rate(self.tp, self.tp + self.fn, 1.0)


@dataclass
class EvalReport:
    AP: float
    AR: float
    F1: float
    range_error: float
    angle_error: float
    TP: int
    FP: int
    FN: int
    n_frames: int
    per_class_AP: dict[int, float] = field(default_factory=dict)
    per_class_AR: dict[int, float] = field(default_factory=dict)
    mAP: float | None = None
    mIoU: float | None = None

    def selection_score(self) -> float:
        """F1, or the mean of F1 and mAP when classes are evaluated."""
        return self.F1 if self.mAP is None else 0.5 * (self.F1 + self.mAP)

    def to_text(self) -> str:
        lines = [
            "# AP is precision at the operating threshold; errors are mean absolute over true positives",
            f"n_frames {self.n_frames}",
            f"AP {self.AP:.6f}", f"AR {self.AR:.6f}", f"F1 {self.F1:.6f}",
            f"range_error_m {self.range_error:.6f}", f"angle_error_deg {self.angle_error:.6f}",
            f"TP {self.TP}", f"FP {self.FP}", f"FN {self.FN}",
        ]
        for c in sorted(self.per_class_AP):
            lines.append(f"AP_class_{c} {self.per_class_AP[c]:.6f}")
            lines.append(f"AR_class_{c} {self.per_class_AR[c]:.6f}")
        if self.mAP is not None:
            lines.append(f"mAP {self.mAP:.6f}")
        if self.mIoU is not None:
            lines.append(f"mIoU {self.mIoU:.6f}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EvalReport":
        vals: dict[str, str] = {}
        for line in text.splitlines():
            if line and not line.startswith("#"):
                k, v = line.split()
                vals[k] = v
        per_ap = {int(k[9:]): float(v) for k, v in vals.items() if k.startswith("AP_class_")}
        per_ar = {int(k[9:]): float(v) for k, v in vals.items() if k.startswith("AR_class_")}
        return cls(
            AP=float(vals["AP"]), AR=float(vals["AR"]), F1=float(vals["F1"]),
            range_error=float(vals["range_error_m"]), angle_error=float(vals["angle_error_deg"]),
            TP=int(vals["TP"]), FP=int(vals["FP"]), FN=int(vals["FN"]), n_frames=int(vals["n_frames"]),
            per_class_AP=per_ap, per_class_AR=per_ar,
            mAP=float(vals["mAP"]) if "mAP" in vals else None,
            mIoU=float(vals["mIoU"]) if "mIoU" in vals else None,
        )


def mean_iou(pred_masks: Sequence[np.ndarray], true_masks: Sequence[np.ndarray], threshold: float = 0.5) -> float:
    """Per-frame IoU of thresholded masks, averaged; an empty union counts as 1."""
    ious = []
    for p, t in zip(pred_masks, true_masks):
        pb, tb = np.asarray(p) >= threshold, np.asarray(t) >= 0.5
        union = np.logical_or(pb, tb).sum()
        ious.append(1.0 if union == 0 else np.logical_and(pb, tb).sum() / union)
    return float(np.mean(ious)) if ious else float("nan")


def evaluate(detections: Mapping[int, Sequence[Detection]], truths: Mapping[int, Sequence[Target]],
             match_range: float = 2.0, match_angle: float = 5.0, n_classes: int = 0,
             freespace: tuple[Sequence, Sequence] | None = None) -> EvalReport:
    """Aggregate metrics over frames.

    ``detections`` and ``truths`` are keyed by frame id; a frame missing from
    ``detections`` has none.  Per-class metrics use class-restricted
    matching; mAP averages AP over classes with at least one truth or
    detection.
    """
    extra = set(detections) - set(truths)
    if extra:
        raise ContractError(f"detections for unknown frames {sorted(extra)[:5]}")
    total = Counts()
    r_err: list[float] = []
    a_err: list[float] = []
    per_class = {c: Counts() for c in range(n_classes)} if n_classes > 1 else {}
    for fid, tgts in truths.items():
        dets = list(detections.get(fid, ()))
        tgts = list(tgts)
        matches = match_frame(dets, tgts, match_range, match_angle)
        total.tp += len(matches)
        total.fp += len(dets) - len(matches)
        total.fn += len(tgts) - len(matches)
        for i, j in matches:
            r_err.append(abs(dets[i].range - tgts[j].range))
            a_err.append(abs(dets[i].azimuth - tgts[j].azimuth))
        for c, cnt in per_class.items():
            dc = [d for d in dets if d.class_id == c]
            tc = [t for t in tgts if t.class_id == c]
            m = match_frame(dc, tc, match_range, match_angle)
            cnt.tp += len(m)
            cnt.fp += len(dc) - len(m)
            cnt.fn += len(tc) - len(m)
    if total.tp + total.fp + total.fn == 0:
        log.info("no detections and no truths: AP and AR defined as 1.0")
    ap, ar = total.precision, total.recall
    report = EvalReport(
        AP=ap, AR=ar, F1=f1_score(ap, ar),
        range_error=float(np.mean(r_err)) if r_err else float("nan"),
        angle_error=float(np.mean(a_err)) if a_err else float("nan"),
        TP=total.tp, FP=total.fp, FN=total.fn, n_frames=len(truths),
    )
    if per_class:
        report.per_class_AP = {c: cnt.precision for c, cnt in per_class.items()}
        report.per_class_AR = {c: cnt.recall for c, cnt in per_class.items()}
        active = [c for c, cnt in per_class.items() if cnt.tp + cnt.fp + cnt.fn > 0]
        report.mAP = float(np.mean([report.per_class_AP[c] for c in active])) if active else 1.0
    if freespace is not None:
        report.mIoU = mean_iou(*freespace)
    return report
