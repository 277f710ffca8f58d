import numpy as np
import pytest

from hypelab.errors import InputError
from hypelab.metrics import majority_baseline, metric


@pytest.mark.parametrize("kind", ["accuracy", "f1", "matthews"])
def test_perfect_classification(kind):
    assert metric(kind, [0, 1, 1, 0, 1], [0, 1, 1, 0, 1]).value == 1.0


def test_matthews_zero_case():
    assert abs(metric("matthews", [1, 1, 0, 0], [1, 0, 1, 0]).value) < 1e-12


def test_matthews_matches_formula():
    preds = np.array([1, 1, 0, 1, 0, 0, 1, 0, 1, 1])
    gold = np.array([1, 0, 0, 1, 0, 1, 1, 0, 0, 1])
    tp = np.sum((preds == 1) & (gold == 1))
    tn = np.sum((preds == 0) & (gold == 0))
    fp = np.sum((preds == 1) & (gold == 0))
    fn = np.sum((preds == 0) & (gold == 1))
    mcc = (tp * tn - fp * fn) / np.sqrt(float((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)))
    assert abs(metric("matthews", preds, gold).value - mcc) < 1e-12


def test_f1_matches_formula():
    preds = [1, 0, 1, 1, 0, 1]
    gold = [1, 1, 0, 1, 0, 1]
    precision, recall = 3 / 4, 3 / 4
    assert abs(metric("f1", preds, gold).value - 2 * precision * recall / (precision + recall)) < 1e-12


def test_spearman_examples():
    assert abs(metric("spearman", [1, 2, 3], [3, 1, 2]).value + 0.5) < 1e-12
    assert abs(metric("spearman", [1, 2, 3], [3, 2, 1]).value + 1.0) < 1e-12


def test_pearson_matches_formula():
    x = np.array([0.5, 1.5, 2.0, 4.0, 3.5])
    y = np.array([1.0, 1.0, 2.5, 3.0, 4.5])
    xc, yc = x - x.mean(), y - y.mean()
    r = (xc @ yc) / np.sqrt((xc @ xc) * (yc @ yc))
    assert abs(metric("pearson", x, y).value - r) < 1e-12


def test_pearson_spearman_reports_parts():
    x, y = [0.1, 0.4, 0.2, 0.9], [0.0, 0.5, 0.3, 1.0]
    result = metric("pearson_spearman", x, y)
    assert set(result.parts) == {"pearson", "spearman"}
    assert result.value == pytest.approx((result.parts["pearson"] + result.parts["spearman"]) / 2)


def test_degenerate_inputs_flagged():
    mcc = metric("matthews", [1, 1, 1, 1], [1, 0, 1, 0])
    assert mcc.value == 0.0 and mcc.degenerate
    corr = metric("pearson", [2.0, 2.0, 2.0], [1.0, 2.0, 3.0])
    assert corr.value == 0.0 and corr.degenerate
    f1 = metric("f1", [0, 0, 0], [1, 0, 1])
    assert f1.value == 0.0 and f1.degenerate


def test_metric_errors():
    with pytest.raises(InputError, match="equal lengths"):
        metric("accuracy", [1, 0], [1])
    with pytest.raises(InputError, match="unknown metric"):
        metric("bleu", [1], [1])
    with pytest.raises(InputError):
        metric("accuracy", [], [])


def test_majority_baseline():
    assert majority_baseline("accuracy", [1, 1, 0], [1, 0, 0, 0]).value == 0.25
    mcc = majority_baseline("matthews", [0, 0, 1], [0, 1])
    assert mcc.value == 0.0 and mcc.degenerate
