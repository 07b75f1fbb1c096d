import numpy as np
import pytest

from radarpos.metrics import (classification_report, confusion_matrix,
                              report_from_confusion)


def test_perfect_predictions():
    y = np.arange(7).repeat(3)
    report = classification_report(y, y, 7)
    assert report.accuracy == 1.0
    assert report.macro_f1 == 1.0
    assert report.absent_classes == []


def test_all_predict_class_zero_balanced_truth():
    y_true = np.arange(7).repeat(4)
    y_pred = np.zeros_like(y_true)
    report = classification_report(y_true, y_pred, 7)
    assert report.accuracy == pytest.approx(1 / 7)
    assert report.macro_f1 == pytest.approx(1 / 28)


def test_hand_computed_two_class_confusion():
    cm = np.array([[1, 1], [0, 2]])
    report = report_from_confusion(cm)
    assert report.accuracy == pytest.approx(0.75)
    assert report.per_class[0]["f1"] == pytest.approx(2 / 3)
    assert report.per_class[1]["f1"] == pytest.approx(4 / 5)
    assert report.macro_f1 == pytest.approx(11 / 15)


def test_confusion_row_sums_are_supports():
    rng = np.random.default_rng(0)
    y_true = rng.integers(0, 5, 100)
    y_pred = rng.integers(0, 5, 100)
    cm = confusion_matrix(y_true, y_pred, 5)
    assert np.array_equal(cm.sum(axis=1), np.bincount(y_true, minlength=5))
    assert cm.sum() == 100
    report = report_from_confusion(cm)
    assert report.accuracy == pytest.approx(np.trace(cm) / cm.sum())


def test_absent_class_flagged_with_zero_f1():
    y_true = np.array([0, 0, 1, 1])
    y_pred = np.array([0, 1, 1, 0])
    report = classification_report(y_true, y_pred, 3)
    assert report.absent_classes == [2]
    assert report.per_class[2]["f1"] == 0.0
    assert 0.0 <= report.macro_f1 <= 1.0


def test_zero_over_zero_f1_convention():
    # class 1 never predicted and never true positive: precision=recall=0
    cm = np.array([[3, 0], [2, 0]])
    report = report_from_confusion(cm)
    assert report.per_class[1]["f1"] == 0.0


def test_report_serializes():
    report = classification_report([0, 1], [0, 1], 2, scenario=("m0", "m1"))
    d = report.to_dict()
    assert d["scenario"] == ["m0", "m1"]
    assert isinstance(d["confusion"], list)
