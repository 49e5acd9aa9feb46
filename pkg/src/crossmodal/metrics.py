"""Detection scoring: EER, AUC, accuracy, ROC/DET curves, report emission.

Score polarity is fixed package-wide: higher score means more likely
manipulated (label 1). Thresholds fire as `score >= t`, so ties land on
the "fires" side and every metric is deterministic under ties.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MetricError, ParameterError


@dataclass
class ScoreSet:
    """(score, label) pairs; label 0 = authentic, 1 = manipulated."""

    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.scores.ndim != 1 or self.scores.shape != self.labels.shape:
            raise ParameterError(
                f"scores and labels must be equal-length vectors, got "
                f"{self.scores.shape} and {self.labels.shape}"
            )
        if self.scores.size == 0:
            raise ParameterError("score set must be nonempty")
        if not np.all(np.isfinite(self.scores)):
            raise ParameterError("scores must be finite")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise ParameterError("labels must be 0 or 1")

    def n_real(self) -> int:
        return int((self.labels == 0).sum())

    def n_fake(self) -> int:
        return int((self.labels == 1).sum())

    def require_both_classes(self) -> None:
        if self.n_real() == 0 or self.n_fake() == 0:
            raise MetricError(
                f"metric needs both classes, got {self.n_real()} authentic / {self.n_fake()} manipulated"
            )


def _sweep(scores: ScoreSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(thresholds ascending + sentinel, FPR, FNR) at each threshold.

    FPR(t) = authentic scored >= t / #authentic (nonincreasing in t);
    FNR(t) = manipulated scored < t / #manipulated (nondecreasing).
    The +inf sentinel gives the (FPR 0, FNR 1) endpoint.
    """
    auth = np.sort(scores.scores[scores.labels == 0])
    manip = np.sort(scores.scores[scores.labels == 1])
    thresholds = np.concatenate([np.unique(scores.scores), [np.inf]])
    fpr = (len(auth) - np.searchsorted(auth, thresholds, side="left")) / len(auth)
    fnr = np.searchsorted(manip, thresholds, side="left") / len(manip)
    return thresholds, fpr, fnr


def eer(scores: ScoreSet) -> float:
    """Equal error rate: the FPR = FNR crossing of the threshold sweep,
    linearly interpolated between adjacent thresholds when no exact
    crossing exists."""
    scores.require_both_classes()
    _, fpr, fnr = _sweep(scores)
    for k in range(len(fpr)):
        if fnr[k] >= fpr[k]:
            if fnr[k] == fpr[k]:
                return float(fnr[k])
            # between k-1 (fnr < fpr) and k the two piecewise-linear
            # curves cross; solve for the crossing point
            alpha = (fpr[k - 1] - fnr[k - 1]) / (
                (fnr[k] - fnr[k - 1]) + (fpr[k - 1] - fpr[k])
            )
            return float(fnr[k - 1] + alpha * (fnr[k] - fnr[k - 1]))
    raise MetricError("threshold sweep produced no FPR/FNR crossing")  # pragma: no cover


def auc(scores: ScoreSet) -> float:
    """Probability a random manipulated sample outscores a random authentic
    one, ties counting one half (Mann-Whitney)."""
    scores.require_both_classes()
    auth = np.sort(scores.scores[scores.labels == 0])
    manip = scores.scores[scores.labels == 1]
    below = np.searchsorted(auth, manip, side="left")
    below_or_equal = np.searchsorted(auth, manip, side="right")
    wins = below.sum() + 0.5 * (below_or_equal - below).sum()
    return float(wins / (len(auth) * len(manip)))


def accuracy(scores: ScoreSet, threshold: float = 0.5) -> float:
    """Fraction of samples where (score >= threshold) matches the label."""
    predicted = scores.scores >= threshold
    return float((predicted == (scores.labels == 1)).mean())


def roc_points(scores: ScoreSet) -> list[tuple[float, float]]:
    """(FPR, TPR) per distinct threshold plus the (0,0) endpoint, sorted by
    FPR then TPR. The final sweep point is (1,1)."""
    scores.require_both_classes()
    _, fpr, fnr = _sweep(scores)
    # descending thresholds: walk the sweep arrays backwards
    points = [(0.0, 0.0)]
    for k in range(len(fpr) - 1, -1, -1):
        pt = (float(fpr[k]), float(1.0 - fnr[k]))
        if pt != points[-1]:
            points.append(pt)
    return points


def det_points(scores: ScoreSet) -> list[tuple[float, float]]:
    """(FPR, FNR) per distinct threshold plus endpoints, sorted by FPR."""
    return [(x, 1.0 - y) for x, y in roc_points(scores)]


def trapezoid_auc(points: list[tuple[float, float]]) -> float:
    """Area under a piecewise-linear (x, y) curve."""
    area = 0.0
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


def metrics_report(scores: ScoreSet, config_hash: str, acc_threshold: float = 0.5) -> dict:
    return {
        "eer": eer(scores),
        "auc": auc(scores),
        "acc": accuracy(scores, acc_threshold),
        "n_real": scores.n_real(),
        "n_fake": scores.n_fake(),
        "config_hash": config_hash,
    }


def write_report(report: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")


def write_curve_csv(points: list[tuple[float, float]], header: tuple[str, str], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(points)
