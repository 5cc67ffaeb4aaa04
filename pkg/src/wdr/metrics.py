"""Evaluation metrics: Brier score, cause-specific concordance, accuracy and
rank AUC.

Brier score and C-index use only rows with an observed time and a known
event type; censored test rows carry no indicator without a censoring
adjustment, which is not defined here.
"""
from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from .data import Dataset, TimeKind
from .errors import ParameterError, WDRError


class UndefinedMetricError(WDRError, ValueError):
    pass


def _times_events(test_data):
    if isinstance(test_data, Dataset):
        keep = (test_data.time_kind == TimeKind.OBSERVED) & (test_data.event > 0)
        return np.asarray(test_data.time, float), np.asarray(test_data.event), keep
    time, event = test_data
    time = np.asarray(time, float)
    event = np.asarray(event)
    return time, event, np.isfinite(time) & (event > 0)


def brier_score(cif_predictions, test_data, j: int, t: float) -> float:
    """(1/n) sum_i [1(t_i <= t, y_i = j) - CIF_j(i, t)]^2 over uncensored rows.

    ``test_data`` is a Dataset or a ``(times, events)`` pair.
    """
    pred = np.asarray(cif_predictions, float)
    time, event, keep = _times_events(test_data)
    if pred.shape != time.shape:
        raise ParameterError("predictions must align with test rows")
    if not keep.any():
        raise UndefinedMetricError("no uncensored test rows")
    hit = (time <= t) & (event == j)
    return float(np.mean((hit[keep] - pred[keep]) ** 2))


def comparable_pairs(time, event, j: int, t: float) -> np.ndarray:
    """Boolean (n, n) matrix: row i is a type-j case by t and i' either
    outlives it or has another event type."""
    case = (event == j) & (time <= t)
    later = time[:, None] < time[None, :]
    other = event[None, :] != j
    pairs = case[:, None] & (later | other)
    np.fill_diagonal(pairs, False)
    return pairs


def c_index(scores, test_data, j: int, t: float) -> float:
    """P(score_i > score_i' | comparable pair), tied scores count 1/2."""
    s = np.asarray(scores, float)
    time, event, keep = _times_events(test_data)
    if s.shape != time.shape:
        raise ParameterError("scores must align with test rows")
    s, time, event = s[keep], time[keep], event[keep]
    pairs = comparable_pairs(time, event, j, t)
    n_pairs = pairs.sum()
    if n_pairs == 0:
        raise UndefinedMetricError(f"no comparable pairs for event {j} at t={t}")
    diff = s[:, None] - s[None, :]
    won = ((diff > 0) + 0.5 * (diff == 0))[pairs].sum()
    return float(won / n_pairs)


def auc(probabilities, labels) -> float:
    """Mann-Whitney estimate of P(p_pos > p_neg) with ties counting 1/2."""
    p = np.asarray(probabilities, float)
    y = np.asarray(labels)
    if not np.isin(y, (0, 1)).all():
        raise ParameterError("labels must be binary 0/1")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes")
    ranks = rankdata(p)  # average ranks handle ties
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def accuracy(probabilities, labels, threshold: float = 0.5) -> float:
    p = np.asarray(probabilities, float)
    y = np.asarray(labels)
    return float(np.mean((p > threshold).astype(int) == y))


def classification_metrics(probabilities, labels, threshold: float = 0.5):
    """(accuracy, auc) for binary labels."""
    return accuracy(probabilities, labels, threshold), auc(probabilities, labels)
