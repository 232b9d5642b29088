"""Binary classification metrics: confusion counts, ROC/PR curves, AUC."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, UndefinedMetricError


def sigmoid(logits):
    logits = np.asarray(logits, dtype=np.float64)
    return np.where(logits >= 0, 1 / (1 + np.exp(-np.abs(logits))), np.exp(-np.abs(logits)) / (1 + np.exp(-np.abs(logits))))


def classify(probabilities, threshold: float = 0.5) -> np.ndarray:
    """1 where probability >= threshold (boundary counts as positive)."""
    return (np.asarray(probabilities) >= threshold).astype(np.int64)


def confusion(predictions, labels) -> tuple[int, int, int, int]:
    predictions = np.asarray(predictions).astype(bool)
    labels = np.asarray(labels).astype(bool)
    if predictions.shape != labels.shape:
        raise InputError(f"length mismatch: {predictions.shape} vs {labels.shape}")
    tp = int(np.sum(predictions & labels))
    fp = int(np.sum(predictions & ~labels))
    tn = int(np.sum(~predictions & ~labels))
    fn = int(np.sum(~predictions & labels))
    return tp, fp, tn, fn


def precision(tp: int, fp: int) -> float:
    # No predicted positives -> 0 by convention.
    return tp / (tp + fp) if tp + fp else 0.0


def recall(tp: int, fn: int) -> float:
    return tp / (tp + fn) if tp + fn else 0.0


def accuracy(tp: int, fp: int, tn: int, fn: int) -> float:
    total = tp + fp + tn + fn
    return (tp + tn) / total if total else 0.0


def _threshold_counts(scores, labels):
    """Cumulative (tp, fp) when predicting positive for score >= each distinct threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape:
        raise InputError(f"length mismatch: {scores.shape} vs {labels.shape}")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    last_of_group = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.cumsum(y)[last_of_group]
    fp = np.cumsum(~y)[last_of_group]
    return s[last_of_group], tp, fp, int(labels.sum()), int((~labels).sum())


@dataclass(frozen=True)
class Curve:
    x: np.ndarray
    y: np.ndarray
    thresholds: np.ndarray

    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.x.tolist(), self.y.tolist()))


def roc_curve(scores, labels) -> Curve:
    """(FPR, TPR) at every distinct threshold, with (0,0) and (1,1) sentinels."""
    thr, tp, fp, n_pos, n_neg = _threshold_counts(scores, labels)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC needs both classes present")
    fpr = np.r_[0.0, fp / n_neg]
    tpr = np.r_[0.0, tp / n_pos]
    thr = np.r_[np.inf, thr]
    if fpr[-1] != 1.0 or tpr[-1] != 1.0:
        fpr, tpr, thr = np.r_[fpr, 1.0], np.r_[tpr, 1.0], np.r_[thr, -np.inf]
    return Curve(fpr, tpr, thr)


def auc(curve: Curve) -> float:
    """Trapezoidal area; tied scores form diagonal segments, i.e. count half."""
    return float(np.sum(np.diff(curve.x) * (curve.y[1:] + curve.y[:-1]) / 2))


def pr_curve(scores, labels) -> Curve:
    """(recall, precision) at every distinct threshold, in increasing recall."""
    thr, tp, fp, n_pos, _ = _threshold_counts(scores, labels)
    if n_pos == 0:
        raise UndefinedMetricError("PR curve needs at least one positive")
    return Curve(tp / n_pos, tp / (tp + fp), thr)


@dataclass
class MetricsReport:
    model_id: str
    label_fraction: float
    precision: float
    recall: float
    accuracy: float
    auc: float
    tp: int
    fp: int
    tn: int
    fn: int
    roc: Curve
    pr: Curve
    test_id: str = ""
    extra: dict = field(default_factory=dict)
    threshold: float = 0.5

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def summary_row(self) -> dict:
        return {
            "model": self.model_id,
            "label_fraction": self.label_fraction,
            "precision": self.precision,
            "recall": self.recall,
            "accuracy": self.accuracy,
            "auc": self.auc,
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
        }

    def write_csv(self, path) -> None:
        """Summary row first, then one row per ROC and per PR threshold."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["kind", "model", "label_fraction", "threshold", "x", "y", "precision", "recall", "accuracy", "auc", "tp", "fp", "tn", "fn"])
            w.writerow(["summary", self.model_id, _f(self.label_fraction), _f(self.threshold), "", "", _f(self.precision), _f(self.recall),
                        _f(self.accuracy), _f(self.auc), self.tp, self.fp, self.tn, self.fn])
            for kind, curve in (("roc", self.roc), ("pr", self.pr)):
                for t, x, y in zip(curve.thresholds, curve.x, curve.y):
                    w.writerow([kind, self.model_id, _f(self.label_fraction), _f(t), _f(x), _f(y), "", "", "", "", "", "", "", ""])


def _f(value) -> str:
    return repr(float(value))


def read_report_csv(path) -> dict:
    """Summary fields and curves from a file written by MetricsReport.write_csv."""
    out = {"roc": [], "pr": []}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["kind"] == "summary":
                out["summary"] = {k: row[k] for k in ("model", "label_fraction", "precision", "recall", "accuracy", "auc", "tp", "fp", "tn", "fn")}
            else:
                out[row["kind"]].append((float(row["x"]), float(row["y"])))
    return out


def evaluate_scores(scores, labels, model_id: str = "", label_fraction: float = 1.0, threshold: float = 0.5, test_id: str = "") -> MetricsReport:
    """All metrics from one vector of positive-class probabilities."""
    labels = np.asarray(labels)
    tp, fp, tn, fn = confusion(classify(scores, threshold), labels)
    roc = roc_curve(scores, labels)
    return MetricsReport(
        model_id, label_fraction, precision(tp, fp), recall(tp, fn), accuracy(tp, fp, tn, fn), auc(roc),
        tp, fp, tn, fn, roc, pr_curve(scores, labels), test_id, threshold=threshold,
    )


def relative_accuracy(report: MetricsReport, baseline: MetricsReport) -> float:
    """Accuracy difference (fraction of the test set; x100 for percentage points)."""
    if report.test_id != baseline.test_id or report.total != baseline.total:
        raise InputError("reports were computed on different test sets")
    return report.accuracy - baseline.accuracy
