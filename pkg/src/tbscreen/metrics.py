"""Confusion matrices, sensitivity/specificity/accuracy, ROC curves and AUC.

Conventions used throughout:
  * the positive class is TB, encoded as label 1 (healthy = 0)
  * a score >= threshold predicts TB
  * ROC x-axis is the false positive rate (1 - specificity), y-axis the
    true positive rate (sensitivity)
  * tied scores receive half credit in the pairwise AUC, which makes the
    trapezoidal area over the ROC curve and the pairwise statistic agree
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

LABEL_NAMES = ("healthy", "tb")


def label_to_int(label: str | int) -> int:
    """Map 'healthy'/'tb' (or 0/1) to the internal 0/1 encoding."""
    if isinstance(label, str):
        try:
            return LABEL_NAMES.index(label)
        except ValueError:
            raise ValueError(f"unknown label {label!r}, expected one of {LABEL_NAMES}") from None
    if label in (0, 1):
        return int(label)
    raise ValueError(f"unknown label {label!r}, expected 0/1 or {LABEL_NAMES}")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        for name in ("tp", "tn", "fp", "fn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @property
    def positives(self) -> int:
        return self.tp + self.fn

    @property
    def negatives(self) -> int:
        return self.tn + self.fp

    @property
    def total(self) -> int:
        return self.positives + self.negatives

    def as_dict(self) -> dict:
        return {"tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn}


@dataclass(frozen=True)
class MetricsReport:
    """Sensitivity/specificity/accuracy; a metric is None when its
    denominator is zero (undefined, never reported as 0)."""

    sensitivity: float | None
    specificity: float | None
    accuracy: float | None
    threshold: float

    def as_dict(self) -> dict:
        return {
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "accuracy": self.accuracy,
            "threshold": self.threshold,
        }


@dataclass(frozen=True)
class RocCurve:
    """Ordered (fpr, tpr) points from a threshold sweep, (0,0) through (1,1)."""

    points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        fprs = [p[0] for p in self.points]
        tprs = [p[1] for p in self.points]
        if any(not (0.0 <= v <= 1.0) for v in fprs + tprs):
            raise ValueError("ROC coordinates must lie in [0, 1]")
        if any(b < a for a, b in zip(fprs, fprs[1:])) or any(
            b < a for a, b in zip(tprs, tprs[1:])
        ):
            raise ValueError("ROC coordinates must be nondecreasing")

    @property
    def fpr(self) -> np.ndarray:
        return np.array([p[0] for p in self.points], dtype=np.float64)

    @property
    def tpr(self) -> np.ndarray:
        return np.array([p[1] for p in self.points], dtype=np.float64)


def _as_arrays(scores: Sequence[float], labels: Sequence[int | str]) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray([label_to_int(v) for v in labels], dtype=np.int64)
    if s.ndim != 1 or y.shape != s.shape:
        raise ValueError("scores and labels must be 1-d sequences of equal length")
    return s, y


def confusion_matrix(
    scores: Sequence[float], labels: Sequence[int | str], threshold: float = 0.5
) -> ConfusionMatrix:
    """Count TP/TN/FP/FN at a threshold; score >= threshold predicts TB."""
    s, y = _as_arrays(scores, labels)
    if s.size == 0:
        raise ValueError("confusion_matrix requires at least one item")
    pred = s >= threshold
    pos = y == 1
    return ConfusionMatrix(
        tp=int(np.sum(pred & pos)),
        tn=int(np.sum(~pred & ~pos)),
        fp=int(np.sum(pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


def metrics(cm: ConfusionMatrix, threshold: float = 0.5) -> MetricsReport:
    """Sensitivity = TP/(TP+FN), specificity = TN/(TN+FP),
    accuracy = (TP+TN)/total. Zero denominators yield None."""
    sens = cm.tp / cm.positives if cm.positives > 0 else None
    spec = cm.tn / cm.negatives if cm.negatives > 0 else None
    acc = (cm.tp + cm.tn) / cm.total if cm.total > 0 else None
    return MetricsReport(sensitivity=sens, specificity=spec, accuracy=acc, threshold=threshold)


def _require_both_classes(y: np.ndarray) -> None:
    if not np.any(y == 1):
        raise ValueError("no tb-labeled items: ROC/AUC needs both classes")
    if not np.any(y == 0):
        raise ValueError("no healthy-labeled items: ROC/AUC needs both classes")


def roc_curve(scores: Sequence[float], labels: Sequence[int | str]) -> RocCurve:
    """Sweep thresholds over the distinct score values (plus sentinels).

    The sweep starts above the maximum score (nothing predicted TB, the
    (0,0) point) and lowers the threshold through each distinct value, so
    every achievable operating point appears exactly once, ending at (1,1).
    """
    s, y = _as_arrays(scores, labels)
    if s.size == 0:
        raise ValueError("roc_curve requires at least one item")
    _require_both_classes(y)

    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]

    points = [(0.0, 0.0)]
    tp = fp = 0
    i = 0
    n = s.size
    while i < n:
        j = i
        while j < n and s_sorted[j] == s_sorted[i]:
            tp += int(y_sorted[j] == 1)
            fp += int(y_sorted[j] == 0)
            j += 1
        points.append((fp / n_neg, tp / n_pos))
        i = j
    return RocCurve(points=tuple(points))


def auc_trapezoid(curve: RocCurve) -> float:
    """Trapezoidal integral of TPR over FPR."""
    return float(np.trapezoid(curve.tpr, curve.fpr))


def auc_pairwise_oracle(scores: Sequence[float], labels: Sequence[int | str]) -> float:
    """Mann-Whitney form of the AUC: over all (positive, negative) pairs,
    credit 1 when the positive outscores the negative, 0.5 on a tie."""
    s, y = _as_arrays(scores, labels)
    _require_both_classes(y)
    pos = s[y == 1][:, None]
    neg = s[y == 0][None, :]
    credit = (pos > neg).astype(np.float64) + 0.5 * (pos == neg)
    return float(credit.mean())


# ---------------------------------------------------------------------------
# file formats: scores CSV, report JSON, ROC CSV


def write_scores_csv(path: str | Path, ids: Sequence[str], labels: Sequence[int | str], scores: Sequence[float]) -> None:
    if not (len(ids) == len(labels) == len(scores)):
        raise ValueError("ids, labels and scores must have equal length")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "label", "tb_score"])
        for i, lab, sc in zip(ids, labels, scores):
            w.writerow([i, LABEL_NAMES[label_to_int(lab)], repr(float(sc))])


def read_scores_csv(path: str | Path) -> tuple[list[str], list[int], list[float]]:
    ids: list[str] = []
    labels: list[int] = []
    scores: list[float] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"id", "label", "tb_score"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(f"scores CSV must have columns {sorted(required)}")
        for row in reader:
            ids.append(row["id"])
            labels.append(label_to_int(row["label"]))
            scores.append(float(row["tb_score"]))
    return ids, labels, scores


def write_roc_csv(path: str | Path, curve: RocCurve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fpr", "tpr"])
        for fpr, tpr in curve.points:
            w.writerow([repr(fpr), repr(tpr)])


def evaluation_report(
    scores: Sequence[float],
    labels: Sequence[int | str],
    threshold: float = 0.5,
    approach: str = "end_to_end",
    extra: dict | None = None,
) -> dict:
    """Bundle confusion counts, the three metrics, the ROC and both AUC
    routes into one JSON-ready report."""
    cm = confusion_matrix(scores, labels, threshold)
    rep = metrics(cm, threshold)
    curve = roc_curve(scores, labels)
    report = {
        "approach": approach,
        "threshold": threshold,
        "confusion": cm.as_dict(),
        "metrics": rep.as_dict(),
        "auc": auc_trapezoid(curve),
        "auc_pairwise": auc_pairwise_oracle(scores, labels),
        "roc_points": [list(p) for p in curve.points],
        "n_items": len(labels),
    }
    if extra:
        report.update(extra)
    return report


def write_report_json(path: str | Path, report: dict) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
