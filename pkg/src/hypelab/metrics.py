"""
Evaluation metrics for classification and regression tasks.

Degenerate inputs (single-class predictions for Matthews, constant series
for correlations, no positive predictions for F1) give 0 with the
`degenerate` flag set instead of raising.
"""

import warnings
from typing import Literal, Sequence

import numpy as np
from scipy.stats import pearsonr, spearmanr
from sklearn.metrics import accuracy_score, f1_score, matthews_corrcoef

from .classes import MetricResult
from .errors import InputError

MetricKind = Literal["accuracy", "f1", "matthews", "pearson", "spearman", "pearson_spearman"]

CLASSIFICATION = ("accuracy", "f1", "matthews")
REGRESSION = ("pearson", "spearman", "pearson_spearman")
KINDS = CLASSIFICATION + REGRESSION


def _labels(x: Sequence) -> np.ndarray:
    arr = np.asarray(x)
    if arr.dtype.kind == "f":
        if not np.all(arr == np.round(arr)):
            raise InputError("classification metrics need integer labels")
        arr = arr.astype(np.int64)
    return arr


def _correlation(fn, predictions: np.ndarray, targets: np.ndarray) -> tuple[float, bool]:
    if predictions.size < 2 or np.ptp(predictions) == 0 or np.ptp(targets) == 0:
        return 0.0, True
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        value = float(fn(predictions, targets)[0])
    if not np.isfinite(value):
        return 0.0, True
    return float(np.clip(value, -1.0, 1.0)), False


def metric(kind: MetricKind, predictions: Sequence, targets: Sequence) -> MetricResult:
    """
    Score `predictions` against `targets`.

    `pearson_spearman` reports both correlations in `parts` and their mean as
    the value.
    """
    if kind not in KINDS:
        raise InputError(f"unknown metric '{kind}', expected one of {', '.join(KINDS)}")
    if len(predictions) != len(targets):
        raise InputError(f"metric needs equal lengths, got {len(predictions)} and {len(targets)}")
    if len(targets) == 0:
        raise InputError("metric needs at least one prediction")

    if kind in CLASSIFICATION:
        preds, gold = _labels(predictions), _labels(targets)
        if kind == "accuracy":
            return MetricResult(kind, float(accuracy_score(gold, preds)))
        if kind == "f1":
            binary = set(np.unique(np.concatenate([preds, gold])).tolist()) <= {0, 1}
            value = f1_score(gold, preds, average="binary" if binary else "macro", zero_division=0.0)
            degenerate = binary and not (np.any(preds == 1) and np.any(gold == 1))
            return MetricResult(kind, float(value), degenerate=bool(degenerate))
        degenerate = len(np.unique(preds)) < 2 or len(np.unique(gold)) < 2
        if degenerate:
            return MetricResult(kind, 0.0, degenerate=True)
        value = float(np.clip(matthews_corrcoef(gold, preds), -1.0, 1.0))
        return MetricResult(kind, value)

    preds = np.asarray(predictions, dtype=np.float64)
    gold = np.asarray(targets, dtype=np.float64)
    pearson, p_deg = _correlation(pearsonr, preds, gold)
    spearman, s_deg = _correlation(spearmanr, preds, gold)
    if kind == "pearson":
        return MetricResult(kind, pearson, degenerate=p_deg)
    if kind == "spearman":
        return MetricResult(kind, spearman, degenerate=s_deg)
    return MetricResult(
        kind,
        (pearson + spearman) / 2.0,
        parts={"pearson": pearson, "spearman": spearman},
        degenerate=p_deg or s_deg,
    )


def majority_baseline(kind: MetricKind, train_targets: Sequence, dev_targets: Sequence) -> MetricResult:
    """
    Score of a constant predictor: the majority training class, or the
    training mean for regression tasks.
    """
    if kind in CLASSIFICATION:
        values, counts = np.unique(_labels(train_targets), return_counts=True)
        guess = values[np.argmax(counts)]
        return metric(kind, np.full(len(dev_targets), guess), dev_targets)
    guess = float(np.mean(np.asarray(train_targets, dtype=np.float64)))
    return metric(kind, np.full(len(dev_targets), guess), dev_targets)
