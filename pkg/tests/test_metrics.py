import numpy as np
import pytest

from wdr.data import Dataset, TimeKind
from wdr.errors import ParameterError
from wdr.metrics import (
    UndefinedMetricError,
    accuracy,
    auc,
    brier_score,
    c_index,
    classification_metrics,
    comparable_pairs,
)

from oracles import auc_loop, brier_loop, c_index_loop


def instance(n, seed, J=2):
    g = np.random.default_rng(seed)
    # coarse times so that ties occur
    return np.round(g.exponential(size=n), 1) + 0.1, g.integers(1, J + 1, n)


def test_brier_perfect_predictions():
    time, event = instance(40, 0)
    hit = ((time <= 1.0) & (event == 1)).astype(float)
    assert brier_score(hit, (time, event), 1, 1.0) == 0.0


def test_brier_constant_half():
    time = np.array([0.5, 0.5, 2.0, 2.0])
    event = np.array([1, 1, 1, 2])
    assert brier_score(np.full(4, 0.5), (time, event), 1, 1.0) == 0.25


@pytest.mark.parametrize("seed", range(5))
def test_brier_matches_loop(seed):
    time, event = instance(50, seed)
    pred = np.random.default_rng(seed + 100).random(50)
    for t in (0.3, 1.0, 2.5):
        for j in (1, 2):
            # equal up to summation order
            assert brier_score(pred, (time, event), j, t) == pytest.approx(
                brier_loop(pred, time, event, j, t), rel=1e-14)


def test_brier_uses_uncensored_rows_only():
    d = Dataset.from_covariates(np.zeros((3, 0)), [0.5, 0.7, 2.0],
                                [TimeKind.OBSERVED, TimeKind.CENSORED, TimeKind.OBSERVED], [1, 0, 2], 2)
    assert brier_score(np.array([1.0, 0.3, 0.0]), d, 1, 1.0) == 0.0
    with pytest.raises(ParameterError):
        brier_score(np.zeros(2), d, 1, 1.0)


def test_c_index_perfect_ordering():
    time = np.array([0.5, 1.0, 1.5, 2.0, 3.0])
    event = np.ones(5, dtype=int)
    assert c_index(-time, (time, event), 1, 10.0) == 1.0


@pytest.mark.parametrize("n,seed", [(30, 1), (50, 2), (50, 3), (50, 4)])
def test_c_index_matches_loop(n, seed):
    time, event = instance(n, seed)
    scores = np.round(np.random.default_rng(seed + 50).random(n), 1)  # ties
    for t in (0.5, 1.2, 5.0):
        for j in (1, 2):
            assert c_index(scores, (time, event), j, t) == c_index_loop(scores, time, event, j, t)


def test_c_index_excludes_tied_cases():
    time = np.array([1.0, 1.0])
    event = np.array([1, 1])
    assert not comparable_pairs(time, event, 1, 2.0).any()
    with pytest.raises(UndefinedMetricError):
        c_index(np.array([0.2, 0.4]), (time, event), 1, 2.0)


def test_c_index_counts_competing_events_as_comparable():
    time = np.array([2.0, 1.0])
    event = np.array([1, 2])
    pairs = comparable_pairs(time, event, 1, 3.0)
    assert pairs[0, 1] and not pairs[1, 0]


@pytest.mark.parametrize("seed", range(5))
def test_auc_matches_loop(seed):
    g = np.random.default_rng(seed)
    n = 20 if seed == 0 else 50
    p = np.round(g.random(n), 1)
    y = g.integers(0, 2, n)
    assert auc(p, y) == pytest.approx(auc_loop(p, y), abs=1e-15)


def test_auc_perfect_separation():
    p = np.array([0.9, 0.8, 0.7, 0.2, 0.1])
    y = np.array([1, 1, 1, 0, 0])
    assert classification_metrics(p, y) == (1.0, 1.0)


def test_auc_single_class():
    with pytest.raises(UndefinedMetricError):
        auc([0.1, 0.2], [1, 1])


def test_accuracy_threshold():
    assert accuracy([0.6, 0.5, 0.4], [1, 0, 0]) == 1.0


def test_permutation_null():
    g = np.random.default_rng(5)
    trials = 10_000
    c, a = np.empty(trials), np.empty(trials)
    for k in range(trials):
        time, event = g.exponential(size=40) + 0.01, g.integers(1, 3, 40)
        c[k] = c_index(g.random(40), (time, event), 1, 1.0)
        a[k] = auc(g.random(40), np.r_[0, 1, g.integers(0, 2, 38)])
    assert 0.45 <= c.mean() <= 0.55
    assert 0.45 <= a.mean() <= 0.55
