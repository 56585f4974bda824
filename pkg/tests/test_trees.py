import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tca.core import SpanningTree
from tca.trees import (all_spanning_trees, complement_components, connected_subtrees,
                       max_weight_spanning_tree, path_tree, prufer_decode, star_tree,
                       t_mutual_information_decomposition, tree_weight)


def _sym(r, m):
    a = r.random((m, m))
    a = a + a.T
    np.fill_diagonal(a, 0)
    return a


def test_two_vertices():
    assert max_weight_spanning_tree(np.array([[0, 0.3], [0.3, 0]])).edges == ((0, 1),)


def test_three_vertex_example():
    w = np.zeros((3, 3))
    w[0, 1] = w[1, 0] = 0.5
    w[0, 2] = w[2, 0] = 0.2
    w[1, 2] = w[2, 1] = 0.4
    t = max_weight_spanning_tree(w)
    assert t.edges == ((0, 1), (1, 2))
    assert tree_weight(w, t) == pytest.approx(0.9)
    assert tree_weight(w, t) == max(tree_weight(w, s) for s in all_spanning_trees(3))


def test_cayley_counts():
    for m, count in [(3, 3), (4, 16), (5, 125)]:
        trees = {t.edges for t in all_spanning_trees(m)}
        assert len(trees) == count


def test_five_vertex_exhaustive(rng):
    trees = list(all_spanning_trees(5))
    for _ in range(20):
        w = _sym(rng, 5)
        best = max(tree_weight(w, t) for t in trees)
        assert tree_weight(w, max_weight_spanning_tree(w)) == pytest.approx(best, abs=1e-12)


def test_decomposition_arithmetic():
    assert t_mutual_information_decomposition(0.0, np.zeros((3, 3)), path_tree(3)) == 0.0
    w = np.zeros((3, 3))
    w[0, 1] = w[1, 0] = 0.3
    w[1, 2] = w[2, 1] = 0.4
    assert t_mutual_information_decomposition(1.0, w, path_tree(3)) == pytest.approx(0.3)


def test_chow_liu_minimizes_decomposition(rng):
    w = _sym(rng, 4)
    best = max_weight_spanning_tree(w)
    vals = [t_mutual_information_decomposition(2.0, w, t) for t in all_spanning_trees(4)]
    assert t_mutual_information_decomposition(2.0, w, best) == pytest.approx(min(vals))


def test_rejects_bad_weights():
    with pytest.raises(ValueError):
        max_weight_spanning_tree(np.array([[0, 1], [2, 0]]))
    with pytest.raises(ValueError):
        max_weight_spanning_tree(np.array([[0, np.nan], [np.nan, 0]]))


def test_prufer_and_subtrees():
    assert prufer_decode([3, 3], 4) == star_tree(4, 3)
    subs = connected_subtrees(path_tree(4), 2)
    assert (0, 1) in subs and (0, 2) not in subs
    assert complement_components(star_tree(4), [0]) == [(1,), (2,), (3,)]


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 7), st.integers(0, 10_000))
def test_output_always_spanning_tree(m, seed):
    w = _sym(np.random.default_rng(seed), m)
    t = max_weight_spanning_tree(w)
    assert isinstance(t, SpanningTree) and len(t.edges) == m - 1


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 6), st.integers(0, 10_000))
def test_invariant_under_relabeling(m, seed):
    r = np.random.default_rng(seed)
    w = _sym(r, m)
    perm = r.permutation(m)
    wp = np.empty_like(w)
    wp[np.ix_(perm, perm)] = w
    t = max_weight_spanning_tree(w)
    assert tree_weight(wp, t.relabel(perm)) == pytest.approx(
        tree_weight(wp, max_weight_spanning_tree(wp)), abs=1e-12)
