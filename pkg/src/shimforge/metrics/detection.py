from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from shimforge.errors import CalibrationError, ShapeError

MIN_NULL = 500


def bit_accuracy(recovered, key) -> float:
    r = np.asarray(recovered).ravel()
    k = np.asarray(key).ravel()
    if r.shape != k.shape:
        raise ShapeError(f"bit length mismatch: {r.size} vs {k.size}")
    return float(np.mean(r == k))


def acc_rule(ba: float, n_bits: int = 32) -> bool:
    """Success iff strictly more than two thirds of the bits match."""
    matched = round(ba * n_bits)
    return 3 * matched > 2 * n_bits


def calibrate_threshold(null_scores, fpr: float = 0.01, min_null: int = MIN_NULL) -> float:
    """Smallest threshold whose empirical false-positive rate (``score >= thr``) is <= ``fpr``.

    Candidates are the null scores themselves; if every null score would
    exceed the budget (ties at the top), the threshold is the next float
    above the largest null score.
    """
    null = np.sort(np.asarray(null_scores, dtype=np.float64))
    n = null.size
    if n < min_null:
        raise CalibrationError(f"null set has {n} scores, need >= {min_null}")
    allowed = int(np.floor(fpr * n + 1e-12))
    values = np.unique(null)
    at_or_above = n - np.searchsorted(null, values, side="left")
    ok = values[at_or_above <= allowed]
    if ok.size:
        return float(ok[0])
    return float(np.nextafter(null[-1], np.inf))


@dataclass
class ROCCurve:
    null: np.ndarray
    positive: np.ndarray
    fpr: float
    threshold: float

    @property
    def tpr(self) -> float:
        return float(np.mean(self.positive >= self.threshold)) if self.positive.size else float("nan")

    @property
    def empirical_fpr(self) -> float:
        return float(np.mean(self.null >= self.threshold))

    def curve(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(thresholds, fpr, tpr)`` swept over every observed score."""
        thr = np.unique(np.concatenate([self.null, self.positive]))[::-1]
        fp = np.array([np.mean(self.null >= t) for t in thr])
        tp = np.array([np.mean(self.positive >= t) for t in thr]) if self.positive.size else np.zeros_like(fp)
        return thr, fp, tp

    def write_csv(self, path) -> None:
        thr, fp, tp = self.curve()
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("threshold", "fpr", "tpr"))
            for row in zip(thr, fp, tp):
                w.writerow([repr(float(v)) for v in row])


def roc_curve(null_scores, positive_scores, fpr: float = 0.01, min_null: int = MIN_NULL) -> ROCCurve:
    null = np.sort(np.asarray(null_scores, dtype=np.float64))
    pos = np.sort(np.asarray(positive_scores, dtype=np.float64))
    return ROCCurve(null, pos, fpr, calibrate_threshold(null, fpr, min_null))


def tpr_at_fpr(null_scores, positive_scores, fpr: float = 0.01, min_null: int = MIN_NULL) -> tuple[float, float]:
    roc = roc_curve(null_scores, positive_scores, fpr, min_null)
    return roc.threshold, roc.tpr
