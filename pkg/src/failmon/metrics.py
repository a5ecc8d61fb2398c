"""Frame-level evaluation metrics: AUROC, F1 at the optimal threshold,
confusion-rate summaries, and anomaly-to-failure relabeling.

Labels are binary per frame (0 = nominal, 1 = positive); what counts as
positive depends on the stage — raw anomalies for detector evaluation,
failure-related anomalies for end-to-end evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UndefinedMetric, ValidationError


def _check_pair(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValidationError(f"scores/labels length mismatch: {scores.size} vs {labels.size}")
    if not np.isin(labels, (0, 1)).all():
        raise ValidationError("labels must be binary (0/1)")
    return scores, labels.astype(np.int64)


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with ties averaged (exact half-integers)."""
    _, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    upper = np.cumsum(counts)
    mean_rank = upper - (counts - 1) / 2.0
    return mean_rank[inverse]


def auroc(scores, labels) -> float:
    """Rank-based AUROC (Mann-Whitney), ties get half credit."""
    scores, labels = _check_pair(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("AUROC needs both classes present")
    rank_sum = _average_ranks(scores)[labels == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def f1_at_optimal(scores, labels) -> tuple[float, float]:
    """Best F1 over all distinct-score thresholds, plus the threshold.

    Convention: predicted positive iff score >= threshold.  Ties on F1
    resolve to the lowest threshold.
    """
    scores, labels = _check_pair(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise UndefinedMetric("F1 needs at least one positive label")
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    # suffix sums: positives and totals at or above each candidate cut
    pos_suffix = np.cumsum(labels[order][::-1])[::-1]
    thresholds, starts = np.unique(sorted_scores, return_index=True)
    best_f1, best_thr = -1.0, float(thresholds[0])
    for thr, start in zip(thresholds, starts):
        tp = int(pos_suffix[start])
        predicted = scores.size - start
        f1 = 2.0 * tp / (predicted + n_pos)
        if f1 > best_f1:
            best_f1, best_thr = f1, float(thr)
    return best_f1, best_thr


@dataclass(frozen=True)
class ConfusionSummary:
    """Counts plus derived rates; a rate is None when its denominator is 0."""

    tp: int
    fp: int
    tn: int
    fn: int
    tpr: float | None
    tnr: float | None
    balanced_acc: float | None
    weighted_acc: float | None


def confusion(predictions, labels) -> ConfusionSummary:
    """TPR/TNR/balanced/weighted accuracy from binary predictions.

    Weighted accuracy is beta*TNR + (1-beta)*TPR with beta the nominal
    share of the labels, so a missing rate only matters when its class
    weight is nonzero.
    """
    predictions, labels = _check_pair(predictions, labels)
    if not np.isin(predictions, (0, 1)).all():
        raise ValidationError("predictions must be binary (0/1)")
    predictions = predictions.astype(np.int64)
    tp = int(((predictions == 1) & (labels == 1)).sum())
    fp = int(((predictions == 1) & (labels == 0)).sum())
    tn = int(((predictions == 0) & (labels == 0)).sum())
    fn = int(((predictions == 0) & (labels == 1)).sum())
    total = tp + fp + tn + fn
    tpr = tp / (tp + fn) if tp + fn else None
    tnr = tn / (tn + fp) if tn + fp else None
    balanced = (tpr + tnr) / 2.0 if tpr is not None and tnr is not None else None
    weighted = None
    if total:
        beta = (tn + fp) / total
        weighted = beta * (tnr or 0.0) + (1.0 - beta) * (tpr or 0.0)
    return ConfusionSummary(tp=tp, fp=fp, tn=tn, fn=fn, tpr=tpr, tnr=tnr, balanced_acc=balanced, weighted_acc=weighted)


def relabel_failures(anomaly_labels, failure_flags) -> np.ndarray:
    """Failure-stage labels: 1 iff a frame is both anomalous and failure-related.

    A failure flag on a non-anomalous frame is a labeling bug and is
    rejected rather than silently promoted.
    """
    anomaly = np.asarray(anomaly_labels).ravel()
    failure = np.asarray(failure_flags).ravel()
    if anomaly.shape != failure.shape:
        raise ValidationError(f"label length mismatch: {anomaly.size} vs {failure.size}")
    if not np.isin(anomaly, (0, 1)).all() or not np.isin(failure, (0, 1)).all():
        raise ValidationError("labels must be binary (0/1)")
    stray = (failure == 1) & (anomaly == 0)
    if stray.any():
        raise ValidationError(f"failure flagged on non-anomalous frame(s) at {np.flatnonzero(stray).tolist()}")
    return (anomaly.astype(np.int64) & failure.astype(np.int64)).astype(np.int64)
