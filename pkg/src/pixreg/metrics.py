"""Pixel-level segmentation metrics: Sn/Sp/Acc, ROC curve and AUC."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray

    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


@dataclass(frozen=True)
class MetricsReport:
    sn: float
    sp: float
    acc: float
    auc: float
    roc: RocCurve
    threshold: float

    def row(self, name: str) -> str:
        return f"{name},{self.sn:.6f},{self.sp:.6f},{self.acc:.6f},{self.auc:.6f}"


def _scores_truth(scores, truth) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    t = np.asarray(truth).ravel()
    if s.shape != t.shape:
        raise ValueError(f"{s.size} scores but {t.size} labels")
    if not np.all((t == 0) | (t == 1)):
        raise ValueError("truth must be binary")
    return s, t.astype(bool)


def _require_both_classes(t: np.ndarray):
    if t.all() or not t.any():
        raise ValueError("ROC/AUC need at least one positive and one negative")


def confusion_at_threshold(scores, truth, threshold: float = 0.5) -> ConfusionCounts:
    """Counts with ``score >= threshold`` predicted positive."""
    s, t = _scores_truth(scores, truth)
    pred = s >= threshold
    tp = int(np.sum(pred & t))
    fp = int(np.sum(pred & ~t))
    fn = int(np.sum(~pred & t))
    return ConfusionCounts(tp, fp, len(s) - tp - fp - fn, fn)


def sn_sp_acc(c: ConfusionCounts) -> tuple[float, float, float]:
    """Sensitivity, specificity, accuracy.

    A rate whose denominator is zero (no positives, or no negatives) is
    reported as 1.
    """
    if c.total <= 0:
        raise ValueError("no pixels to score")
    sn = c.tp / (c.tp + c.fn) if c.tp + c.fn else 1.0
    sp = c.tn / (c.tn + c.fp) if c.tn + c.fp else 1.0
    return sn, sp, (c.tp + c.tn) / c.total


def roc_curve(scores, truth) -> RocCurve:
    """ROC points at every distinct score, highest first; ties form one step."""
    s, t = _scores_truth(scores, truth)
    _require_both_classes(t)
    order = np.argsort(-s, kind="stable")
    s, t = s[order], t[order]
    tps = np.cumsum(t)
    fps = np.cumsum(~t)
    # last index of each tie group
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tpr = np.r_[0.0, tps[ends] / tps[-1]]
    fpr = np.r_[0.0, fps[ends] / fps[-1]]
    # the final group always reaches (1, 1); set it exactly
    tpr[-1] = fpr[-1] = 1.0
    return RocCurve(fpr, tpr)


def auc(curve: RocCurve) -> float:
    """Trapezoidal area under the curve."""
    return float(np.trapezoid(curve.tpr, curve.fpr))


def auc_pairwise_oracle(scores, truth) -> float:
    """P(positive outscores negative) + P(tie)/2 by enumerating every pair."""
    s, t = _scores_truth(scores, truth)
    _require_both_classes(t)
    if len(s) > 10_000:
        raise ValueError("pairwise oracle limited to 10^4 samples")
    pos, neg = s[t], s[~t]
    wins = 0.0
    for p in pos:
        wins += np.sum(p > neg) + 0.5 * np.sum(p == neg)
    return float(wins / (len(pos) * len(neg)))


def metrics_report(scores, truth, threshold: float = 0.5) -> MetricsReport:
    sn, sp, acc = sn_sp_acc(confusion_at_threshold(scores, truth, threshold))
    curve = roc_curve(scores, truth)
    return MetricsReport(sn, sp, acc, auc(curve), curve, threshold)


def write_roc_csv(curve: RocCurve, path):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["fpr", "tpr"])
        for f, t in curve.points():
            writer.writerow([f"{f:.9g}", f"{t:.9g}"])


def read_roc_csv(path) -> RocCurve:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return RocCurve(
        np.array([float(r["fpr"]) for r in rows]), np.array([float(r["tpr"]) for r in rows])
    )
