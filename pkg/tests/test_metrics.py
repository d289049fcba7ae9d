"""Metric definitions against hand computations and a scalar-loop oracle."""

import numpy as np
import pytest

from hbaf.metrics import confusion_matrix, evaluate_predictions

from oracles import naive_weighted_f1


def test_perfect_predictions():
    y = np.array([0, 1, 2, 1, 0])
    rep = evaluate_predictions(y, y.copy(), ("a", "b", "c"))
    assert rep.weighted_f1 == 1.0
    assert rep.accuracy == 1.0
    np.testing.assert_array_equal(np.diag(rep.confusion), [2, 2, 1])


def test_hand_computed_imbalanced_case():
    # supports (9, 1), predict everything class 0:
    # F1_0 = 18/19, F1_1 = 0, weighted = 0.9 * 18/19
    y_true = np.array([0] * 9 + [1])
    y_pred = np.zeros(10, dtype=int)
    rep = evaluate_predictions(y_true, y_pred, ("neg", "pos"))
    assert rep.weighted_f1 == pytest.approx(0.9 * 18 / 19, abs=1e-12)
    assert rep.weighted_f1 == pytest.approx(0.85263, abs=5e-6)
    assert rep.f1[1] == 0.0


def test_confusion_rows_are_supports():
    rng = np.random.default_rng(0)
    y_true = rng.integers(0, 4, size=200)
    y_pred = rng.integers(0, 4, size=200)
    rep = evaluate_predictions(y_true, y_pred, ("a", "b", "c", "d"))
    for c in range(4):
        assert rep.confusion[c].sum() == (y_true == c).sum() == rep.support[c]


def test_absent_class_scores_zero_with_zero_weight():
    y_true = np.array([0, 0, 1, 1])
    y_pred = np.array([0, 1, 1, 0])
    rep = evaluate_predictions(y_true, y_pred, ("a", "b", "ghost"))
    assert rep.support[2] == 0
    assert rep.f1[2] == 0.0
    assert rep.weighted_f1 == pytest.approx(naive_weighted_f1(y_true, y_pred, 3), abs=1e-12)


def test_thousand_random_cases_match_scalar_oracle():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        c = int(rng.integers(2, 8))
        n = int(rng.integers(1, 40))
        y_true = rng.integers(0, c, size=n)
        y_pred = rng.integers(0, c, size=n)
        rep = evaluate_predictions(y_true, y_pred, tuple(f"c{i}" for i in range(c)))
        assert rep.weighted_f1 == pytest.approx(naive_weighted_f1(y_true, y_pred, c), abs=1e-12)


def test_confusion_matrix_counts():
    cm = confusion_matrix([0, 1, 1, 2], [0, 1, 2, 2], 3)
    np.testing.assert_array_equal(cm, [[1, 0, 0], [0, 1, 1], [0, 0, 1]])


def test_render_contains_table():
    rep = evaluate_predictions([0, 1], [0, 1], ("x", "y"))
    text = rep.render()
    assert "weighted_f1" in text and "confusion" in text
    assert rep.to_dict()["per_class"]["x"]["f1"] == 1.0
