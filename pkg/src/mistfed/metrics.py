"""Detection metrics, ROC/PR curves, model drift and runtime statistics."""

from __future__ import annotations

import csv
import math
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, UsageError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray

    @property
    def total(self) -> int:
        return int(self.tp[0] + self.fp[0] + self.fn[0] + self.tn[0])


@dataclass(frozen=True)
class ClassificationMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    degenerate: bool = False


@dataclass(frozen=True)
class CurvePoint:
    threshold: float
    x: float
    y: float


@dataclass(frozen=True)
class Curve:
    points: list[CurvePoint]
    auc: float


@dataclass(frozen=True)
class DriftStats:
    per_client_drift: list[float]
    mean: float
    median: float


def confusion_counts(predictions, labels, num_classes: int) -> ConfusionCounts:
    pred = np.asarray(predictions, dtype=np.int64)
    true = np.asarray(labels, dtype=np.int64)
    classes = np.arange(num_classes)[:, None]
    p_hit = pred[None, :] == classes
    t_hit = true[None, :] == classes
    tp = (p_hit & t_hit).sum(axis=1)
    fp = (p_hit & ~t_hit).sum(axis=1)
    fn = (~p_hit & t_hit).sum(axis=1)
    tn = pred.size - tp - fp - fn
    return ConfusionCounts(tp, fp, fn, tn)


def _ratio(num: float, den: float) -> tuple[float, bool]:
    return (num / den, False) if den > 0 else (0.0, True)


def classification_metrics(predictions, labels, positive_class: int = 1, num_classes: int | None = None) -> ClassificationMetrics:
    """Accuracy/precision/recall/F1.

    Binary problems (``num_classes <= 2``) score ``positive_class``; with
    more classes precision, recall and F1 are macro averages.  Any 0/0 is
    reported as 0 and sets ``degenerate``.
    """
    pred = np.asarray(predictions, dtype=np.int64).reshape(-1)
    true = np.asarray(labels, dtype=np.int64).reshape(-1)
    if pred.size == 0:
        raise UsageError("no predictions to score")
    if pred.size != true.size:
        raise UsageError(f"{pred.size} predictions vs {true.size} labels")
    if num_classes is None:
        num_classes = int(max(pred.max(), true.max(), positive_class)) + 1
        num_classes = max(num_classes, 2)
    counts = confusion_counts(pred, true, num_classes)
    accuracy = float(np.count_nonzero(pred == true)) / pred.size
    classes = [positive_class] if num_classes <= 2 else list(range(num_classes))
    degenerate = False
    ps, rs, fs = [], [], []
    for c in classes:
        p, d1 = _ratio(counts.tp[c], counts.tp[c] + counts.fp[c])
        r, d2 = _ratio(counts.tp[c], counts.tp[c] + counts.fn[c])
        f, d3 = _ratio(2 * p * r, p + r)
        degenerate |= d1 or d2 or d3
        ps.append(p)
        rs.append(r)
        fs.append(f)
    return ClassificationMetrics(accuracy, float(np.mean(ps)), float(np.mean(rs)), float(np.mean(fs)), degenerate)


def _threshold_counts(scores, labels):
    """Cumulative TP/FP when predicting positive for ``score >= t``, t descending over unique scores."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1).astype(bool)
    if s.size != y.size:
        raise UsageError(f"{s.size} scores vs {y.size} labels")
    if s.size == 0:
        raise UsageError("no scores")
    if not np.all(np.isfinite(s)):
        raise UsageError("scores must be finite")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last_of_run = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(y)[last_of_run]
    fp = np.cumsum(~y)[last_of_run]
    return s[last_of_run], tp, fp, int(y.sum()), int((~y).sum())


def roc_auc(scores, labels) -> Curve:
    """ROC curve over unique thresholds plus +inf, AUC by the trapezoid rule."""
    thr, tp, fp, n_pos, n_neg = _threshold_counts(scores, labels)
    if n_pos == 0 or n_neg == 0:
        raise UsageError("AUC undefined: labels contain a single class")
    tpr = np.r_[0, tp] / n_pos
    fpr = np.r_[0, fp] / n_neg
    thresholds = np.r_[math.inf, thr]
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    points = [CurvePoint(float(t), float(x), float(y)) for t, x, y in zip(thresholds, fpr, tpr)]
    return Curve(points, auc)


def pr_auc(scores, labels) -> Curve:
    """PR curve and average precision ``sum (R_t - R_{t-1}) P_t``.

    The curve starts at the conventional ``(recall 0, precision 1)`` point
    for threshold +inf; that point carries no area.
    """
    thr, tp, fp, n_pos, _ = _threshold_counts(scores, labels)
    if n_pos == 0:
        raise UsageError("PR-AUC undefined: no positive samples")
    recall = tp / n_pos
    precision = tp / (tp + fp)
    prev = np.r_[0.0, recall[:-1]]
    ap = float(np.sum((recall - prev) * precision))
    points = [CurvePoint(math.inf, 0.0, 1.0)]
    points += [CurvePoint(float(t), float(r), float(p)) for t, r, p in zip(thr, recall, precision)]
    return Curve(points, ap)


def pairwise_auc(scores, labels) -> float:
    """Exhaustive rank statistic: P(score_pos > score_neg) + 0.5 P(tie)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    pos, neg = s[y], s[~y]
    if pos.size == 0 or neg.size == 0:
        raise UsageError("AUC undefined: labels contain a single class")
    wins = 0.0
    for a in pos:
        for b in neg:
            wins += 1.0 if a > b else 0.5 if a == b else 0.0
    return wins / (pos.size * neg.size)


def macro_ovr_auc(probs: np.ndarray, labels, kind: str = "roc") -> float:
    """One-vs-rest macro average over classes present in ``labels``."""
    fn = roc_auc if kind == "roc" else pr_auc
    labels = np.asarray(labels)
    aucs = []
    for c in range(probs.shape[1]):
        hit = labels == c
        if hit.all() or not hit.any():
            continue
        aucs.append(fn(probs[:, c], hit).auc)
    if not aucs:
        raise UsageError("AUC undefined: labels contain a single class")
    return float(np.mean(aucs))


def model_drift(client_models: Sequence[np.ndarray], reference: np.ndarray, eps: float = 1e-12) -> DriftStats:
    """Relative L2 distance of every client model from ``reference``."""
    if len(client_models) == 0:
        raise UsageError("model_drift needs at least one client model")
    ref_norm = max(float(np.linalg.norm(reference)), eps)
    drifts = []
    for m in client_models:
        if m.shape != reference.shape:
            raise ConfigurationError(f"model length {m.shape[0]} != reference {reference.shape[0]}")
        drifts.append(float(np.linalg.norm(m - reference)) / ref_norm)
    return DriftStats(drifts, statistics.fmean(drifts), statistics.median(drifts))


@dataclass(frozen=True)
class RuntimeStats:
    mean: float
    median: float
    min: float
    max: float


def runtime_stats(durations: Sequence[float]) -> RuntimeStats:
    if len(durations) == 0:
        raise UsageError("no durations")
    d = [float(v) for v in durations]
    return RuntimeStats(statistics.fmean(d), statistics.median(d), min(d), max(d))


def write_curve_csv(curve: Curve, path) -> None:
    """``threshold,x,y`` rows; the +inf threshold is written as ``inf``."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "x", "y"])
        for p in curve.points:
            w.writerow([repr(p.threshold), repr(p.x), repr(p.y)])
