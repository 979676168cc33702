import itertools
from math import log

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmimvc.errors import DimensionError
from hmimvc.evaluation import (acc, ari, assignment_cost, cluster_and_score, contingency, hungarian,
                               kmeans, nmi)


def brute_min_cost(cost):
    n = cost.shape[0]
    return min(sum(cost[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))


def brute_acc(true, assigned):
    t = np.unique(true)
    a = np.unique(assigned)
    best = 0
    labels = list(t) + [None] * max(0, len(a) - len(t))
    for perm in itertools.permutations(labels, len(a)):
        mapping = dict(zip(a, perm))
        best = max(best, sum(mapping[x] == y for x, y in zip(assigned, true)))
    return best / len(true)


# -- hungarian -----------------------------------------------------------------

def test_hungarian_two_by_two():
    cost = np.array([[1.0, 2.0], [2.0, 1.0]])
    perm = hungarian(cost)
    assert list(perm) == [0, 1] and assignment_cost(cost, perm) == 2.0


def test_hungarian_zero_diagonal():
    cost = np.ones((5, 5)) - np.eye(5)
    perm = hungarian(cost)
    assert list(perm) == list(range(5)) and assignment_cost(cost, perm) == 0.0


def test_hungarian_matches_brute_force():
    rng = np.random.default_rng(0)
    for trial in range(200):
        n = int(rng.integers(1, 8))
        cost = rng.integers(0, 10, size=(n, n)).astype(float) if trial % 2 else rng.random((n, n))
        perm = hungarian(cost)
        assert sorted(perm) == list(range(n))
        assert assignment_cost(cost, perm) == pytest.approx(brute_min_cost(cost), abs=1e-12)


def test_hungarian_against_scipy():
    scipy_opt = pytest.importorskip("scipy.optimize")
    rng = np.random.default_rng(1)
    for n in (10, 40, 90):
        cost = rng.random((n, n))
        r, c = scipy_opt.linear_sum_assignment(cost)
        assert assignment_cost(cost, hungarian(cost)) == pytest.approx(cost[r, c].sum(), abs=1e-9)


def test_hungarian_rejects_bad_input():
    with pytest.raises(DimensionError):
        hungarian(np.ones((2, 3)))
    with pytest.raises(ValueError):
        hungarian(np.array([[np.inf]]))
    assert hungarian(np.zeros((0, 0))).size == 0


# -- k-means -------------------------------------------------------------------

def test_kmeans_two_pairs():
    x = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]])
    res = kmeans(x, 2, seed=0)
    # brute force over every 2-partition of the four points
    best = np.inf
    for mask in range(1, 8):
        side = np.array([(mask >> i) & 1 for i in range(4)], dtype=bool)
        cost = sum(((x[s] - x[s].mean(0)) ** 2).sum() for s in (side, ~side))
        best = min(best, cost)
    assert res.inertia == pytest.approx(best) == pytest.approx(1.0)
    assert res.assignments[0] == res.assignments[1] != res.assignments[2] == res.assignments[3]


def test_kmeans_k_equals_n():
    x = np.random.default_rng(0).normal(size=(6, 2))
    assert kmeans(x, 6, seed=1).inertia == 0.0


def test_kmeans_replay_and_monotone():
    x = np.random.default_rng(2).normal(size=(200, 3))
    a, b = kmeans(x, 5, seed=7), kmeans(x, 5, seed=7)
    assert np.array_equal(a.assignments, b.assignments)
    assert all(later <= earlier for earlier, later in zip(a.history, a.history[1:]))


def test_kmeans_bad_k():
    with pytest.raises(ValueError):
        kmeans(np.ones((3, 2)), 4)


# -- NMI -----------------------------------------------------------------------

def test_nmi_identical_is_one():
    assert nmi([0, 0, 1, 2], [0, 0, 1, 2]) == 1.0
    assert nmi([0, 0, 1, 2], [5, 5, 3, 9]) == 1.0
    assert nmi([1, 1, 1], [0, 0, 0]) == 1.0


def test_nmi_independent_is_zero():
    a = [0, 0, 1, 1] * 3
    b = [0, 1, 0, 1] * 3
    assert nmi(a, b) == 0.0


def test_nmi_hand_table():
    # table for [0,0,1,1] vs [0,1,1,1]: [[1, 1], [0, 2]] over n = 4
    mi = 0.25 * log(0.25 / (0.5 * 0.25)) + 0.25 * log(0.25 / (0.5 * 0.75)) + 0.5 * log(0.5 / (0.5 * 0.75))
    h_a = log(2.0)
    h_b = -(0.25 * log(0.25) + 0.75 * log(0.75))
    assert nmi([0, 0, 1, 1], [0, 1, 1, 1]) == mi / ((h_a + h_b) / 2)
    assert nmi([0, 0, 1, 1], [0, 1, 1, 1], "geometric") == pytest.approx(mi / np.sqrt(h_a * h_b), abs=1e-15)


def test_nmi_matches_sklearn():
    metrics = pytest.importorskip("sklearn.metrics")
    rng = np.random.default_rng(3)
    for _ in range(30):
        a, b = rng.integers(0, 5, 60), rng.integers(0, 4, 60)
        assert nmi(a, b) == pytest.approx(metrics.normalized_mutual_info_score(a, b), abs=1e-12)


# -- ACC -----------------------------------------------------------------------

def test_acc_cases():
    assert acc([0, 1, 2, 2], [0, 1, 2, 2]) == 1.0
    assert acc([0, 1, 2, 2], [2, 0, 1, 1]) == 1.0
    assert acc([0, 0, 1, 1], [0, 1, 0, 0]) == 0.75


def test_acc_brute_force():
    rng = np.random.default_rng(4)
    for _ in range(100):
        k = int(rng.integers(1, 7))
        true = rng.integers(0, k, 20)
        assigned = rng.integers(0, int(rng.integers(1, 7)), 20)
        assert acc(true, assigned) == brute_acc(true, assigned)


# -- ARI -----------------------------------------------------------------------

def test_ari_cases():
    assert ari([0, 0, 1, 1], [1, 1, 0, 0]) == 1.0
    assert ari([0, 0, 0, 0], [0, 0, 1, 1]) == 0.0
    # pairs: 6 total, 0 co-clustered in both, 2 in each marginal; (0 - 4/6) / (2 - 4/6)
    assert ari([0, 0, 1, 1], [0, 1, 0, 1]) == -0.5


def test_ari_matches_sklearn():
    metrics = pytest.importorskip("sklearn.metrics")
    rng = np.random.default_rng(5)
    for _ in range(30):
        a, b = rng.integers(0, 5, 50), rng.integers(0, 3, 50)
        assert ari(a, b) == pytest.approx(metrics.adjusted_rand_score(a, b), abs=1e-12)


# -- shared properties ------------------------------------------------------------

labels = st.lists(st.integers(0, 4), min_size=2, max_size=40)


@settings(max_examples=200, deadline=None)
@given(labels, st.randoms(use_true_random=False))
def test_metric_properties(a, rnd):
    a = np.array(a)
    b = np.array([rnd.randrange(4) for _ in a])
    relabel = np.array(rnd.sample(range(10), 10))
    assert 0.0 <= nmi(a, b) <= 1.0 and 0.0 <= acc(a, b) <= 1.0 and -1.0 <= ari(a, b) <= 1.0
    assert nmi(a, b) == pytest.approx(nmi(b, a), abs=1e-14)
    assert ari(a, b) == ari(b, a)
    assert nmi(relabel[a], b) == pytest.approx(nmi(a, b), abs=1e-14)
    assert acc(a, relabel[b]) == acc(a, b)
    assert ari(relabel[a], relabel[b]) == ari(a, b)


def test_contingency_counts():
    t = contingency([0, 0, 1], [2, 3, 3])
    assert t.tolist() == [[1, 1], [0, 1]]


def test_cluster_and_score_report():
    rng = np.random.default_rng(6)
    centers = np.array([[0, 0], [20, 0], [0, 20]])
    y = np.repeat(np.arange(3), 30)
    x = centers[y] + rng.normal(size=(90, 2))
    rep = cluster_and_score(x, y, 3, seed=0)
    assert rep.metrics() == {"nmi": 1.0, "acc": 1.0, "ari": 1.0}
    assert rep.assignments.min() >= 0 and rep.assignments.max() < 3
