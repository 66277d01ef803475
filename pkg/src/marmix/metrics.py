"""Discrimination and calibration metrics for binary probabilistic scores.

``truth`` is always a 0/1 vector with 1 marking the positive class, and
``scores`` are predicted probabilities of the positive class. A row is
predicted positive when ``score >= threshold``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import DataError

PROB_CLAMP = 1e-12
SWEEP_GRID = np.round(np.arange(0.30, 0.70 + 1e-9, 0.05), 10)


def _check(scores, truth):
    scores = np.asarray(scores, dtype=float).reshape(-1)
    truth = np.asarray(truth).reshape(-1)
    if scores.shape != truth.shape:
        raise DataError(f"scores {scores.shape} and truth {truth.shape} differ in length")
    if not np.all((truth == 0) | (truth == 1)):
        raise DataError("truth must be binary 0/1")
    return scores, truth.astype(int)


def roc_curve(scores, truth):
    """ROC points swept over distinct score values, highest first.

    Returns ``(fpr, tpr, thresholds)``; the first point is (0, 0) with an
    infinite threshold, and tied scores move the curve in a single step.
    """
    scores, truth = _check(scores, truth)
    n_pos = truth.sum()
    n_neg = truth.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("ROC needs both classes in truth")
    order = np.argsort(-scores, kind="mergesort")
    s, t = scores[order], truth[order]
    last_of_group = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tps = np.cumsum(t)[last_of_group]
    fps = (last_of_group + 1) - tps
    fpr = np.r_[0.0, fps / n_neg]
    tpr = np.r_[0.0, tps / n_pos]
    thresholds = np.r_[np.inf, s[last_of_group]]
    return fpr, tpr, thresholds


def roc_and_auc(scores, truth):
    """ROC points as an (m, 2) array of (fpr, tpr) and the trapezoidal AUC."""
    fpr, tpr, _ = roc_curve(scores, truth)
    return np.column_stack([fpr, tpr]), float(np.trapezoid(tpr, fpr))


def auc(scores, truth):
    return roc_and_auc(scores, truth)[1]


def log_loss(scores, truth):
    scores, truth = _check(scores, truth)
    p = np.clip(scores, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-np.mean(truth * np.log(p) + (1 - truth) * np.log1p(-p)))


def brier(scores, truth):
    scores, truth = _check(scores, truth)
    return float(np.mean((scores - truth) ** 2))


def youden_threshold(roc_points, thresholds):
    """Threshold maximizing TPR - FPR; ties go to the smallest threshold.

    The infinite threshold of the (0, 0) point is never returned.
    """
    pts = np.asarray(roc_points, dtype=float)
    thr = np.asarray(thresholds, dtype=float)
    finite = np.isfinite(thr)
    j = pts[finite, 1] - pts[finite, 0]
    cand = thr[finite]
    # tied J values can differ in the last bits
    best = np.flatnonzero(j >= j.max() - 1e-12)
    return float(cand[best].min())


def confusion_counts(scores, truth, threshold):
    scores, truth = _check(scores, truth)
    pred = scores >= threshold
    tp = int(np.sum(pred & (truth == 1)))
    fp = int(np.sum(pred & (truth == 0)))
    fn = int(np.sum(~pred & (truth == 1)))
    tn = int(np.sum(~pred & (truth == 0)))
    return tp, fp, fn, tn


def prf_at_threshold(scores, truth, threshold):
    """Precision, recall and F1 when predicting positive for ``score >= threshold``."""
    tp, fp, fn, _ = confusion_counts(scores, truth, threshold)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def threshold_sweep(scores, truth, grid=SWEEP_GRID):
    """Rows of ``(threshold, precision, recall, accuracy)`` for each grid value."""
    rows = []
    for thr in np.asarray(grid, dtype=float):
        tp, fp, fn, tn = confusion_counts(scores, truth, thr)
        precision, recall, _ = prf_at_threshold(scores, truth, thr)
        rows.append((float(thr), precision, recall, (tp + tn) / (tp + fp + fn + tn)))
    return rows


@dataclass
class MetricsReport:
    auc: float
    logloss: float
    brier: float
    threshold_opt: float
    precision_opt: float
    recall_opt: float
    f1_opt: float
    roc_points: np.ndarray

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("roc_points")
        return d


def evaluate(scores, truth) -> MetricsReport:
    fpr, tpr, thr = roc_curve(scores, truth)
    pts = np.column_stack([fpr, tpr])
    t_opt = youden_threshold(pts, thr)
    p, r, f1 = prf_at_threshold(scores, truth, t_opt)
    return MetricsReport(
        auc=float(np.trapezoid(tpr, fpr)),
        logloss=log_loss(scores, truth),
        brier=brier(scores, truth),
        threshold_opt=t_opt,
        precision_opt=p,
        recall_opt=r,
        f1_opt=f1,
        roc_points=pts,
    )
