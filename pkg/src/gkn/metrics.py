"""Classification metrics: accuracy, macro F1, and midrank AUROC."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from .errors import DataError


def accuracy(labels, predictions) -> float:
    y = np.asarray(labels).reshape(-1)
    p = np.asarray(predictions).reshape(-1)
    if y.size == 0 or y.shape != p.shape:
        raise DataError("accuracy: empty input or shape mismatch")
    return float(np.mean(y == p))


def _f1(labels, predictions, positive) -> float:
    y = np.asarray(labels).reshape(-1)
    p = np.asarray(predictions).reshape(-1)
    tp = np.sum((p == positive) & (y == positive))
    fp = np.sum((p == positive) & (y != positive))
    fn = np.sum((p != positive) & (y == positive))
    denom = 2 * tp + fp + fn
    return float(2 * tp / denom) if denom else 0.0  # absent class scores 0


def macro_f1(labels, predictions) -> float:
    return 0.5 * (_f1(labels, predictions, 1) + _f1(labels, predictions, 0))


def auroc(labels, scores) -> float:
    """Probability a random positive outranks a random negative; ties midranked."""
    y = np.asarray(labels).reshape(-1)
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    if y.shape != s.shape or y.size == 0:
        raise DataError("auroc: empty input or shape mismatch")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise DataError("auroc: needs both classes present")
    ranks = rankdata(s, method="average")
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def classification_report(labels, predictions, scores) -> dict:
    return {
        "accuracy": accuracy(labels, predictions),
        "macro_f1": macro_f1(labels, predictions),
        "auroc": auroc(labels, scores),
        "n": int(np.asarray(labels).size),
    }
