"""Evaluation metrics vs an independent recount oracle."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from krast.errors import InputError
from krast.metrics import evaluate


def recount_oracle(preds, labels, n_classes):
    """Plain dict-counting re-implementation used as the reference."""
    confusion = [[0] * n_classes for _ in range(n_classes)]
    for p, l in zip(preds, labels):
        confusion[l][p] += 1
    top1 = sum(1 for p, l in zip(preds, labels) if p == l) / len(labels)
    f1s, supports = [], []
    for c in range(n_classes):
        tp = confusion[c][c]
        fp = sum(confusion[r][c] for r in range(n_classes)) - tp
        fn = sum(confusion[c]) - tp
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
        supports.append(sum(confusion[c]))
    macro = sum(f1s) / n_classes
    total = sum(supports)
    weighted = sum(f * s for f, s in zip(f1s, supports)) / total if total else 0.0
    return top1, macro, weighted, confusion


def test_perfect_predictions():
    rep = evaluate([0, 1, 2, 1], [0, 1, 2, 1], 3)
    assert rep.top1 == 1.0 and rep.macro_f1 == 1.0 and rep.weighted_f1 == 1.0
    assert np.array_equal(rep.confusion, np.diag([1, 2, 1]))


def test_worked_case_supports_3_1_macro_half_weighted_three_quarters():
    # Two populated classes with supports {3, 1} and per-class F1 {1.0, 0.0}:
    # the class-1 sample is misrouted to a third class, so class 0 keeps an
    # exact F1 of 1.0. Macro over those two classes = 0.5, support-weighted
    # (3*1 + 1*0)/4 = 0.75.
    preds = [0, 0, 0, 2]
    labels = [0, 0, 0, 1]
    rep = evaluate(preds, labels, 3)
    assert rep.per_class_f1[0] == 1.0 and rep.per_class_f1[1] == 0.0
    assert rep.support[0] == 3 and rep.support[1] == 1
    macro_populated = (rep.per_class_f1[0] + rep.per_class_f1[1]) / 2
    weighted = (3 * rep.per_class_f1[0] + 1 * rep.per_class_f1[1]) / 4
    assert abs(macro_populated - 0.5) < 1e-12
    assert abs(weighted - 0.75) < 1e-12
    assert abs(rep.weighted_f1 - 0.75) < 1e-12  # empty class has zero weight


def test_zero_over_zero_f1_is_zero():
    # class 2 never appears in labels or predictions
    rep = evaluate([0, 1], [0, 1], 3)
    assert rep.per_class_f1[2] == 0.0
    assert rep.support[2] == 0


def test_confusion_rows_are_ground_truth():
    rep = evaluate([1, 1, 0], [0, 1, 2], 3)
    assert rep.confusion[0, 1] == 1  # true 0 predicted 1
    assert rep.confusion[2, 0] == 1
    assert rep.confusion.sum() == 3


def test_input_validation():
    with pytest.raises(InputError):
        evaluate([], [], 2)
    with pytest.raises(InputError):
        evaluate([0, 1], [0], 2)
    with pytest.raises(InputError):
        evaluate([0, 2], [0, 1], 2)   # prediction out of range
    with pytest.raises(InputError):
        evaluate([0, 1], [0, -1], 2)


@pytest.mark.parametrize("seed", range(50))
def test_matches_recount_oracle(seed):
    rng = np.random.default_rng(seed)
    n = 200
    n_classes = 7
    preds = rng.integers(0, n_classes, size=n).tolist()
    labels = rng.integers(0, n_classes, size=n).tolist()
    rep = evaluate(preds, labels, n_classes)
    top1, macro, weighted, confusion = recount_oracle(preds, labels, n_classes)
    assert rep.top1 == top1
    assert abs(rep.macro_f1 - macro) < 1e-12
    assert abs(rep.weighted_f1 - weighted) < 1e-12
    assert rep.confusion.tolist() == confusion


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 6), st.integers(1, 60), st.integers(0, 10 ** 6))
def test_metric_bounds_and_conservation(n_classes, n, seed):
    rng = np.random.default_rng(seed)
    preds = rng.integers(0, n_classes, size=n).tolist()
    labels = rng.integers(0, n_classes, size=n).tolist()
    rep = evaluate(preds, labels, n_classes)
    assert 0.0 <= rep.top1 <= 1.0
    assert 0.0 <= rep.macro_f1 <= 1.0
    assert 0.0 <= rep.weighted_f1 <= 1.0
    # row sums equal per-class ground-truth counts
    for c in range(n_classes):
        assert rep.confusion[c].sum() == labels.count(c)
    assert rep.confusion.sum() == n
