"""Error measures for recovered demixing matrices and trees."""

import csv
import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import CovarianceMatrix, SingularMatrix, SpanningTree


@dataclass(frozen=True)
class MetricReport:
    e_w: float
    e_t: float
    s_t: int


def amari_distance(w_hat, w_true) -> float:
    """Amari index of A = W_hat W_true^{-1}, scaled to [0, 100].

    Zero exactly when W_hat is a row permutation and rescaling of W_true.
    """
    w_hat = np.asarray(w_hat, dtype=float)
    w_true = np.asarray(w_true, dtype=float)
    m = w_true.shape[0]
    try:
        a = np.abs(w_hat @ np.linalg.inv(w_true))
    except np.linalg.LinAlgError:
        raise SingularMatrix("true demixing matrix is singular") from None
    if abs(np.linalg.det(w_hat)) < 1e-300 or np.any(a.max(axis=1) == 0):
        raise SingularMatrix("estimated demixing matrix is singular")
    rows = (a.sum(axis=1) / a.max(axis=1)).sum()
    cols = (a.sum(axis=0) / a.max(axis=0)).sum()
    return float(100.0 / (2 * m * (m - 1)) * (rows + cols - 2 * m))


def _sigma(sigma):
    if isinstance(sigma, CovarianceMatrix):
        return sigma.sigma
    return np.asarray(sigma, dtype=float)


def leaf_normalize(w, tree: SpanningTree, sigma) -> np.ndarray:
    """Remove the leaf/parent mixing freedom by decorrelating each leaf from its
    neighbour, then rescale the leaf to unit variance.  Leaves are processed
    once, in ascending order; other rows are left as they are.
    """
    w = np.array(w, dtype=float)
    sig = _sigma(sigma)
    if abs(np.linalg.det(w)) < 1e-300:
        raise SingularMatrix("demixing matrix is singular")
    adj = tree.adjacency()
    for c in range(tree.m):
        if len(adj[c]) != 1:
            continue
        p = adj[c][0]
        cov_cp = w[c] @ sig @ w[p]
        var_p = w[p] @ sig @ w[p]
        w[c] = w[c] - (cov_cp / var_p) * w[p]
        var_c = w[c] @ sig @ w[c]
        if not var_c > 0:
            raise SingularMatrix(f"leaf {c} is collinear with its parent")
        w[c] /= np.sqrt(var_c)
    return w


def e_w(w_hat, tree_hat, w_true, tree_true, sigma) -> float:
    """Amari distance after leaf normalisation of both matrices."""
    return amari_distance(leaf_normalize(w_hat, tree_hat, sigma),
                          leaf_normalize(w_true, tree_true, sigma))


def _max_common_subtree(adj1, adj2) -> int:
    """Largest common connected subtree of two trees, structure only.

    best(a, pa, b, pb) is the largest common subtree rooted at a (in tree 1,
    with a's parent pa excluded) and b (likewise in tree 2); children are
    paired by maximum-weight bipartite matching.
    """

    @lru_cache(maxsize=None)
    def best(a, pa, b, pb):
        ca = [c for c in adj1[a] if c != pa]
        cb = [c for c in adj2[b] if c != pb]
        if not ca or not cb:
            return 1
        weights = np.array([[best(x, a, y, b) for y in cb] for x in ca], dtype=float)
        rows, cols = linear_sum_assignment(weights, maximize=True)
        return 1 + int(weights[rows, cols].sum())

    return max(best(a, -1, b, -1) for a in range(len(adj1)) for b in range(len(adj2)))


def tree_error(t1: SpanningTree, t2: SpanningTree, respect_labels=False):
    """Return ``(s_t, e_t)`` for two spanning trees on the same vertex count.

    ``s_t`` is the size of the largest connected subtree of ``t1`` that maps
    onto a connected subtree of ``t2`` (up to relabeling unless
    ``respect_labels``) and ``e_t = 1 - (s_t - 1) / (m - 1)``.
    """
    if t1.m != t2.m:
        raise ValueError("trees must have the same number of vertices")
    m = t1.m
    if m == 1:
        return 1, 0.0
    if respect_labels:
        s_t = _largest_shared_component(t1, t2)
    else:
        s_t = _max_common_subtree(tuple(map(tuple, t1.adjacency())),
                                  tuple(map(tuple, t2.adjacency())))
    return s_t, 1.0 - (s_t - 1) / (m - 1)


def _largest_shared_component(t1, t2):
    common = set(t1.edges) & set(t2.edges)
    adj = [[] for _ in range(t1.m)]
    for u, v in common:
        adj[u].append(v)
        adj[v].append(u)
    seen, best = set(), 1
    for s in range(t1.m):
        if s in seen:
            continue
        stack, size = [s], 0
        seen.add(s)
        while stack:
            u = stack.pop()
            size += 1
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        best = max(best, size)
    return best


def tree_error_bruteforce(t1: SpanningTree, t2: SpanningTree):
    """Exhaustive reference for :func:`tree_error` (small m only)."""
    from .trees import is_connected_subset

    m = t1.m
    e1, e2 = set(t1.edges), set(t2.edges)
    for size in range(m, 0, -1):
        subsets2 = [s for s in itertools.combinations(range(m), size)
                    if is_connected_subset(t2, s)]
        for s1 in itertools.combinations(range(m), size):
            if not is_connected_subset(t1, s1):
                continue
            in1 = {(a, b) for a, b in e1 if a in s1 and b in s1}
            for s2 in subsets2:
                for image in itertools.permutations(s2):
                    mp = dict(zip(s1, image))
                    if all((min(mp[a], mp[b]), max(mp[a], mp[b])) in e2 for a, b in in1):
                        return size, 1.0 - (size - 1) / (m - 1)
    return 1, 1.0


def metric_report(w_hat, tree_hat, w_true, tree_true, sigma) -> MetricReport:
    s_t, e_t = tree_error(tree_hat, tree_true)
    return MetricReport(e_w(w_hat, tree_hat, w_true, tree_true, sigma), e_t, s_t)


METRIC_COLUMNS = ("m", "contrast", "replicate", "e_w", "e_t", "seconds")


def write_metric_table(path, rows):
    """CSV with columns m, contrast, replicate, e_w, e_t, seconds."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
