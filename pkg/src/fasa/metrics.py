"""Binary classification evaluation with attack (label 1) as the positive class."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise MetricsError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


def _binary(name: str, values) -> np.ndarray:
    arr = np.asarray(values).ravel()
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise MetricsError(f"{name} must be binary 0/1")
    return arr.astype(np.int64)


def confusion(predictions, labels) -> ConfusionMatrix:
    pred = _binary("predictions", predictions)
    true = _binary("labels", labels)
    if pred.shape != true.shape:
        raise MetricsError(f"length mismatch: {pred.size} predictions vs {true.size} labels")
    return ConfusionMatrix(
        tp=int(np.sum((pred == 1) & (true == 1))),
        fp=int(np.sum((pred == 1) & (true == 0))),
        tn=int(np.sum((pred == 0) & (true == 0))),
        fn=int(np.sum((pred == 0) & (true == 1))),
    )


def _ratio(num: int, den: int) -> Optional[float]:
    # None marks a zero denominator
    return None if den == 0 else num / den


@dataclass(frozen=True)
class EvalReport:
    """Scores derived from a confusion matrix. ``None`` means undefined (0/0)."""

    accuracy: float
    precision: Optional[float]
    recall: Optional[float]
    fpr: Optional[float]
    f1: Optional[float]
    cm: ConfusionMatrix
    auc: Optional[float] = None
    threshold: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "fpr": self.fpr,
            "f1": self.f1,
            "auc": self.auc,
            "threshold": self.threshold,
            **self.cm.to_dict(),
        }


def scores(cm: ConfusionMatrix, *, auc: Optional[float] = None, threshold: Optional[float] = None) -> EvalReport:
    if cm.total == 0:
        raise MetricsError("empty confusion matrix")
    precision = _ratio(cm.tp, cm.tp + cm.fp)
    recall = _ratio(cm.tp, cm.tp + cm.fn)
    if precision is None or recall is None or precision + recall == 0:
        f1 = None
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return EvalReport(
        accuracy=(cm.tp + cm.tn) / cm.total,
        precision=precision,
        recall=recall,
        fpr=_ratio(cm.fp, cm.fp + cm.tn),
        f1=f1,
        cm=cm,
        auc=auc,
        threshold=threshold,
    )


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float


def roc_auc(probabilities, labels) -> RocCurve:
    """ROC points from a sweep over the unique scores (descending) and trapezoidal AUC.

    Curve starts at (0, 0) with threshold +inf; tied scores move the point
    diagonally, which is what gives tied pairs half credit.
    """
    score = np.asarray(probabilities, dtype=float).ravel()
    true = _binary("labels", labels)
    if score.shape != true.shape:
        raise MetricsError("length mismatch between scores and labels")
    n_pos = int(true.sum())
    n_neg = true.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricsError("ROC needs both classes present")

    order = np.argsort(-score, kind="mergesort")
    s, t = score[order], true[order]
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tps = np.cumsum(t)[ends]
    fps = (ends + 1) - tps
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    thresholds = np.r_[np.inf, s[ends]]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, thresholds, auc)


def evaluate(predictions, labels, probabilities=None, threshold: Optional[float] = None) -> EvalReport:
    cm = confusion(predictions, labels)
    auc = None
    if probabilities is not None and 0 < cm.tp + cm.fn < cm.total:
        auc = roc_auc(probabilities, labels).auc
    return scores(cm, auc=auc, threshold=threshold)


def write_report(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_roc_csv(curve: RocCurve, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "fpr", "tpr"])
        for th, f, t in zip(curve.thresholds, curve.fpr, curve.tpr):
            writer.writerow([repr(float(th)), repr(float(f)), repr(float(t))])
