import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tca.core import SpanningTree
from tca.metrics import (METRIC_COLUMNS, amari_distance, e_w, leaf_normalize, metric_report,
                         tree_error, tree_error_bruteforce, write_metric_table)
from tca.synth import random_spanning_tree
from tca.trees import all_spanning_trees, path_tree, star_tree


def _decorrelated(rng, m):
    """W with W Sigma W^T = I for a random SPD Sigma."""
    a = rng.standard_normal((m, m))
    sigma = a @ a.T + np.eye(m)
    evals, evecs = np.linalg.eigh(sigma)
    q, _ = np.linalg.qr(rng.standard_normal((m, m)))
    return q @ evecs @ np.diag(evals ** -0.5) @ evecs.T, sigma


def test_amari_identity_and_hand_value(rng):
    w = rng.standard_normal((4, 4))
    assert amari_distance(w, w) == pytest.approx(0.0, abs=1e-12)
    a = np.array([[1.0, 1.0], [0.0, 1.0]])
    assert amari_distance(a, np.eye(2)) == pytest.approx(50.0)


def test_amari_permutation_scaling_invariance(rng):
    for m in (2, 4, 7):
        w = rng.standard_normal((m, m))
        p = np.eye(m)[rng.permutation(m)]
        d = np.diag(rng.choice([-1, 1], m) * rng.uniform(0.1, 10, m))
        assert amari_distance(p @ d @ w, w) == pytest.approx(0.0, abs=1e-10)


def test_leaf_normalize_fixed_point(rng):
    w, sigma = _decorrelated(rng, 4)
    assert np.allclose(leaf_normalize(w, star_tree(4), sigma), w, atol=1e-12)


def test_leaf_normalize_undoes_leaf_mixing(rng):
    w, sigma = _decorrelated(rng, 3)
    mixed = w.copy()
    mixed[2] = mixed[2] + 0.5 * mixed[1]
    out = leaf_normalize(mixed, path_tree(3), sigma)
    assert amari_distance(out, w) < 1e-8
    assert np.allclose(out[2], w[2], atol=1e-10)
    var = np.einsum("ij,jk,ik->i", out, sigma, out)
    assert np.allclose(var[[0, 2]], 1.0, atol=1e-10)


def test_e_w_quotients_leaf_mixing(rng):
    w, sigma = _decorrelated(rng, 4)
    tree = SpanningTree(4, [(0, 1), (1, 2), (1, 3)])
    assert e_w(w, tree, w, tree, sigma) == pytest.approx(0.0, abs=1e-12)
    mixed = w.copy()
    mixed[0] += 0.7 * mixed[1]
    mixed[3] -= 1.3 * mixed[1]
    assert e_w(mixed, tree, w, tree, sigma) == pytest.approx(0.0, abs=1e-8)


def test_e_w_random_baseline(rng):
    w, sigma = _decorrelated(rng, 4)
    tree = path_tree(4)
    vals = [e_w(rng.standard_normal((4, 4)), tree, w, tree, sigma) for _ in range(20)]
    assert np.mean(vals) > 20


def test_tree_error_examples():
    assert tree_error(path_tree(5), path_tree(5)) == (5, 0.0)
    s_t, e_t = tree_error(star_tree(4), path_tree(4))
    assert s_t == 3 and e_t == pytest.approx(1 / 3)
    relabeled = path_tree(4).relabel([2, 0, 3, 1])
    assert tree_error(relabeled, path_tree(4)) == (4, 0.0)
    assert tree_error(relabeled, path_tree(4), respect_labels=True)[0] < 4


def test_tree_error_matches_bruteforce_exhaustive_m4():
    trees = list(all_spanning_trees(4))
    for a in trees:
        for b in trees:
            assert tree_error(a, b) == tree_error_bruteforce(a, b)


def test_tree_error_matches_bruteforce_random(rng):
    for _ in range(60):
        m = int(rng.integers(2, 7))
        a, b = random_spanning_tree(m, rng), random_spanning_tree(m, rng)
        assert tree_error(a, b) == tree_error_bruteforce(a, b)


def test_metric_report_and_table(tmp_path, rng):
    w, sigma = _decorrelated(rng, 3)
    rep = metric_report(w, path_tree(3), w, path_tree(3), sigma)
    assert rep.e_w == pytest.approx(0, abs=1e-12) and rep.e_t == 0 and rep.s_t == 3
    path = tmp_path / "t.csv"
    write_metric_table(path, [{"m": 3, "contrast": "kgv", "replicate": 0, "e_w": 1.0,
                               "e_t": 0.0, "seconds": 0.5, "extra": 1}])
    rows = list(csv.DictReader(open(path)))
    assert tuple(rows[0]) == METRIC_COLUMNS


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 8), st.integers(0, 10**6))
def test_tree_error_bounds_and_symmetry(m, seed):
    r = np.random.default_rng(seed)
    a, b = random_spanning_tree(m, r), random_spanning_tree(m, r)
    s_ab, e_ab = tree_error(a, b)
    assert s_ab >= 2 and e_ab <= (m - 2) / (m - 1) + 1e-12
    assert tree_error(b, a) == (s_ab, e_ab)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(0, 10**6))
def test_amari_nonnegative_bounded(m, seed):
    r = np.random.default_rng(seed)
    d = amari_distance(r.standard_normal((m, m)), r.standard_normal((m, m)))
    assert 0 <= d <= 100 + 1e-9
