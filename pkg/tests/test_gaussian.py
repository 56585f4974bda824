import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tca.core import SpanningTree
from tca.gaussian import (NotOrthogonal, NotSPD, gaussian_mi_matrix, gaussian_pairwise_mi,
                          gaussian_project, gaussian_t_mi, gaussian_total_mi, random_rotation,
                          sample_tree_covariance, theorem3_demixing, tree_covariance)
from tca.trees import all_spanning_trees, path_tree, star_tree

RHO06 = -0.5 * np.log(1 - 0.36)


def test_total_mi_values(rng):
    assert gaussian_total_mi(np.eye(3)) == 0.0
    s = np.array([[1, 0.6], [0.6, 1]])
    assert gaussian_total_mi(s) == pytest.approx(0.22314, abs=1e-5)
    d = np.diag([2.0, 0.3])
    assert gaussian_total_mi(d @ s @ d) == pytest.approx(gaussian_total_mi(s), abs=1e-10)


def test_pairwise_mi():
    s = np.array([[1, 0.6, 0], [0.6, 1, 0], [0, 0, 1]])
    assert gaussian_pairwise_mi(s, 0, 2) == 0.0
    assert gaussian_pairwise_mi(s, 0, 1) == pytest.approx(RHO06, abs=1e-12)
    s2 = s[:2, :2]
    assert gaussian_total_mi(s2) == pytest.approx(gaussian_pairwise_mi(s2, 0, 1), abs=1e-12)
    m = gaussian_mi_matrix(s)
    assert m[0, 1] == m[1, 0] and m[0, 0] == 0


def test_not_spd():
    with pytest.raises(NotSPD):
        gaussian_total_mi(np.array([[1, 2], [2, 1.0]]))


def test_t_mi_diagonal_and_tree_members(rng):
    assert gaussian_t_mi(np.diag([1.0, 2.0, 3.0]), path_tree(3)) == pytest.approx(0, abs=1e-14)
    trees = list(all_spanning_trees(4))
    for t in trees[:8]:
        c = sample_tree_covariance(t, rng).c
        assert abs(gaussian_t_mi(c, t)) < 1e-8
        assert all(gaussian_t_mi(c, o) > 0 for o in trees if o != t)


def test_ar1_chain():
    m, rho = 5, 0.7
    idx = np.arange(m)
    s = rho ** np.abs(idx[:, None] - idx[None, :])
    assert abs(gaussian_t_mi(s, path_tree(m))) < 1e-8
    assert gaussian_t_mi(s, star_tree(m)) > 0


def test_path_product_rule():
    c = tree_covariance(path_tree(3), {(0, 1): 0.5, (1, 2): 0.5}).c
    assert c[0, 2] == pytest.approx(0.25)
    prec = np.linalg.inv(c)
    assert abs(prec[0, 2]) < 1e-12


def test_off_tree_precision_zero(rng):
    t = SpanningTree(5, [(0, 1), (1, 2), (1, 3), (3, 4)])
    seen = []
    for _ in range(10):
        c = sample_tree_covariance(t, rng).c
        prec = np.linalg.inv(c)
        for u in range(5):
            for v in range(u + 1, 5):
                if not t.has_edge(u, v):
                    assert abs(prec[u, v]) < 1e-9
        seen.append(c)
    assert not np.allclose(seen[0], seen[1])


def test_theorem3_identity_is_whitening(rng):
    a = rng.standard_normal((3, 3))
    sigma = a @ a.T + np.eye(3)
    w = theorem3_demixing(sigma, np.eye(3), np.eye(3))
    evals, evecs = np.linalg.eigh(sigma)
    white = evecs @ np.diag(evals ** -0.5) @ evecs.T
    assert np.allclose(w, white, atol=1e-10)


def test_theorem3_rotations_share_covariance(rng):
    a = rng.standard_normal((4, 4))
    sigma = a @ a.T + np.eye(4)
    tree = star_tree(4)
    c = sample_tree_covariance(tree, rng)
    w1 = theorem3_demixing(sigma, c, random_rotation(4, rng))
    w2 = theorem3_demixing(sigma, c, random_rotation(4, rng))
    assert not np.allclose(w1, w2)
    for w in (w1, w2):
        assert np.allclose(w @ sigma @ w.T, c.c, atol=1e-10)
        assert abs(gaussian_t_mi(w @ sigma @ w.T, tree)) < 1e-8


def test_theorem3_rejects_non_orthogonal():
    with pytest.raises(NotOrthogonal):
        theorem3_demixing(np.eye(2), np.eye(2), np.array([[1.0, 1.0], [0.0, 1.0]]))


def test_gaussian_project_lands_in_tree_set(rng):
    a = rng.standard_normal((4, 4))
    sigma = a @ a.T + np.eye(4)
    tree = path_tree(4)
    w = gaussian_project(rng.standard_normal((4, 4)), sigma, tree)
    assert abs(gaussian_t_mi(w @ sigma @ w.T, tree)) < 1e-8


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(0, 10_000))
def test_t_mi_nonnegative(m, seed):
    r = np.random.default_rng(seed)
    a = r.standard_normal((m, m))
    s = a @ a.T + 0.1 * np.eye(m)
    t = next(iter(all_spanning_trees(m))) if m <= 4 else path_tree(m)
    assert gaussian_t_mi(s, t) >= -1e-10
