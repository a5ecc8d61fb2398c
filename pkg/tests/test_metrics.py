from fractions import Fraction

import numpy as np
import pytest

from failmon import (
    UndefinedMetric,
    ValidationError,
    auroc,
    confusion,
    f1_at_optimal,
    relabel_failures,
)


def pairwise_auroc(scores, labels) -> float:
    """O(n^2) pair-counting oracle with half credit for ties."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else (0.5 if p == n else 0.0)
    return total / (len(pos) * len(neg))


def scan_f1(scores, labels):
    """Exhaustive threshold scan in exact rational arithmetic."""
    n_pos = sum(labels)
    best = (Fraction(-1), None)
    for thr in sorted(set(scores)):
        tp = sum(1 for s, y in zip(scores, labels) if s >= thr and y == 1)
        predicted = sum(1 for s in scores if s >= thr)
        f1 = Fraction(2 * tp, predicted + n_pos)
        if f1 > best[0]:
            best = (f1, thr)
    return float(best[0]), best[1]


def test_perfect_separation():
    assert auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    f1, thr = f1_at_optimal([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])
    assert f1 == 1.0 and thr == 0.8


def test_random_scores_near_half(rng):
    scores = rng.normal(0, 1, 4000)
    labels = rng.integers(0, 2, 4000)
    assert auroc(scores, labels) == pytest.approx(0.5, abs=0.05)


def test_auroc_matches_pairwise_oracle_exactly(rng):
    for _ in range(100):
        n = int(rng.integers(4, 40))
        # quantized scores force ties through the half-credit path
        scores = np.round(rng.normal(0, 1, n), 1)
        labels = rng.integers(0, 2, n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        assert auroc(scores, labels) == pairwise_auroc(scores.tolist(), labels.tolist())


def test_auroc_single_class_undefined():
    with pytest.raises(UndefinedMetric):
        auroc([1.0, 2.0], [1, 1])


def test_auroc_symmetry_without_ties(rng):
    scores = rng.permutation(np.arange(30, dtype=float))
    labels = rng.integers(0, 2, 30)
    labels[0], labels[1] = 0, 1
    assert auroc(scores, labels) + auroc(-scores, labels) == pytest.approx(1.0)


def test_auroc_invariant_under_monotone_transform(rng):
    scores = rng.normal(0, 1, 50)
    labels = rng.integers(0, 2, 50)
    labels[0], labels[1] = 0, 1
    base = auroc(scores, labels)
    assert auroc(np.exp(scores), labels) == base
    assert auroc(3.0 * scores + 7.0, labels) == base


def test_f1_all_equal_scores_predicts_everything():
    scores = [0.5, 0.5, 0.5, 0.5]
    labels = [1, 0, 1, 0]
    f1, thr = f1_at_optimal(scores, labels)
    assert thr == 0.5
    assert f1 == pytest.approx(2 * 2 / (4 + 2))


def test_f1_matches_exhaustive_oracle(rng):
    for _ in range(100):
        n = int(rng.integers(3, 30))
        scores = np.round(rng.normal(0, 1, n), 1)
        labels = rng.integers(0, 2, n)
        if labels.sum() == 0:
            labels[0] = 1
        f1, thr = f1_at_optimal(scores, labels)
        oracle_f1, oracle_thr = scan_f1(scores.tolist(), labels.tolist())
        assert f1 == oracle_f1
        assert thr == oracle_thr


def test_f1_requires_positives():
    with pytest.raises(UndefinedMetric):
        f1_at_optimal([1.0, 2.0], [0, 0])


def test_confusion_perfect_and_inverted():
    labels = [0, 1, 0, 1, 1]
    perfect = confusion(labels, labels)
    assert (perfect.tpr, perfect.tnr, perfect.balanced_acc, perfect.weighted_acc) == (1.0, 1.0, 1.0, 1.0)
    inverted = confusion([1 - y for y in labels], labels)
    assert (inverted.tpr, inverted.tnr, inverted.balanced_acc, inverted.weighted_acc) == (0.0, 0.0, 0.0, 0.0)


def test_confusion_weighted_by_class_prior():
    labels = [0] * 9 + [1]
    predictions = [0] * 10  # tnr=1, tpr=0, beta=0.9
    summary = confusion(predictions, labels)
    assert summary.weighted_acc == pytest.approx(0.9)
    assert summary.balanced_acc == pytest.approx(0.5)


def test_confusion_undefined_rates_are_none():
    summary = confusion([0, 1], [0, 0])
    assert summary.tpr is None and summary.balanced_acc is None
    assert summary.weighted_acc == summary.tnr  # beta == 1


def test_confusion_validation():
    with pytest.raises(ValidationError):
        confusion([0, 1], [0, 1, 1])
    with pytest.raises(ValidationError):
        confusion([0, 2], [0, 1])


def test_weighted_between_the_rates(rng):
    for _ in range(50):
        n = int(rng.integers(4, 50))
        labels = rng.integers(0, 2, n)
        predictions = rng.integers(0, 2, n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        s = confusion(predictions, labels)
        assert min(s.tpr, s.tnr) - 1e-12 <= s.weighted_acc <= max(s.tpr, s.tnr) + 1e-12


def test_relabel_failures_fixture():
    anomaly = np.array([0, 1, 1, 0, 1, 1])
    failure = np.array([0, 1, 0, 0, 0, 1])
    assert relabel_failures(anomaly, failure).tolist() == [0, 1, 0, 0, 0, 1]
    assert relabel_failures(anomaly, np.zeros(6, int)).tolist() == [0] * 6
    assert relabel_failures(anomaly, anomaly).tolist() == anomaly.tolist()


def test_relabel_rejects_stray_failure():
    with pytest.raises(ValidationError, match=r"\[0\]"):
        relabel_failures([0, 1], [1, 0])
