"""Chow-Liu tree selection and labeled-tree utilities."""

import heapq
import itertools

import numpy as np

from .core import SpanningTree, DimensionMismatch


def _check_weights(weights):
    w = np.asarray(weights, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise DimensionMismatch(f"weight matrix must be square, got {w.shape}")
    if w.shape[0] < 2:
        raise DimensionMismatch("need at least two vertices")
    iu = np.triu_indices(w.shape[0], 1)
    if not np.all(np.isfinite(w[iu])):
        raise ValueError("weights must be finite")
    if not np.allclose(w[iu], w.T[iu], rtol=1e-12, atol=1e-12):
        raise ValueError("weight matrix must be symmetric")
    return w


def max_weight_spanning_tree(weights) -> SpanningTree:
    """Kruskal's algorithm on the complete graph.

    Edges are visited by decreasing weight, ties broken by ascending
    ``(u, v)``, so the result is deterministic.  Negative weights are allowed;
    a spanning tree (never a forest) is always returned.
    """
    w = _check_weights(weights)
    m = w.shape[0]
    candidates = sorted(
        ((-w[u, v], u, v) for u, v in itertools.combinations(range(m), 2)))
    parent = list(range(m))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    edges = []
    for _, u, v in candidates:
        ru, rv = find(u), find(v)
        if ru != rv:
            parent[ru] = rv
            edges.append((u, v))
            if len(edges) == m - 1:
                break
    return SpanningTree(m, edges)


def tree_weight(weights, tree: SpanningTree) -> float:
    w = np.asarray(weights, dtype=float)
    return float(sum(w[u, v] for u, v in tree.edges))


def t_mutual_information_decomposition(total_mi, weights, tree: SpanningTree) -> float:
    """Total mutual information minus the pairwise terms on the tree edges."""
    return float(total_mi) - tree_weight(weights, tree)


def prufer_decode(seq, m) -> SpanningTree:
    """Labeled tree on ``m`` vertices encoded by a Prufer sequence of length m-2."""
    seq = [int(a) for a in seq]
    if m == 1:
        return SpanningTree(1, ())
    if len(seq) != m - 2:
        raise ValueError(f"Prufer sequence for m={m} must have length {m - 2}")
    degree = [1] * m
    for a in seq:
        degree[a] += 1
    leaves = [u for u in range(m) if degree[u] == 1]
    heapq.heapify(leaves)
    edges = []
    for a in seq:
        leaf = heapq.heappop(leaves)
        edges.append((leaf, a))
        degree[a] -= 1
        if degree[a] == 1:
            heapq.heappush(leaves, a)
    u, v = heapq.heappop(leaves), heapq.heappop(leaves)
    edges.append((u, v))
    return SpanningTree(m, edges)


def all_spanning_trees(m):
    """Every labeled tree on m vertices (m**(m-2) of them, Cayley)."""
    if m == 2:
        yield SpanningTree(2, [(0, 1)])
        return
    for seq in itertools.product(range(m), repeat=m - 2):
        yield prufer_decode(seq, m)


def path_tree(m) -> SpanningTree:
    return SpanningTree(m, [(i, i + 1) for i in range(m - 1)])


def star_tree(m, center=0) -> SpanningTree:
    return SpanningTree(m, [(center, v) for v in range(m) if v != center])


def connected_subtrees(tree: SpanningTree, max_size):
    """All vertex sets of size <= max_size inducing a connected subgraph."""
    adj = tree.adjacency()
    found = set()
    frontier = {frozenset([u]) for u in range(tree.m)}
    while frontier:
        found |= frontier
        grown = set()
        for s in frontier:
            if len(s) >= max_size:
                continue
            for u in s:
                for v in adj[u]:
                    if v not in s:
                        grown.add(s | {v})
        frontier = grown - found
    return sorted((tuple(sorted(s)) for s in found), key=lambda s: (len(s), s))


def complement_components(tree: SpanningTree, subset):
    """Connected components of the tree after deleting ``subset``."""
    subset = set(subset)
    adj = tree.adjacency()
    seen = set(subset)
    comps = []
    for start in range(tree.m):
        if start in seen:
            continue
        comp, stack = [], [start]
        seen.add(start)
        while stack:
            u = stack.pop()
            comp.append(u)
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        comps.append(tuple(sorted(comp)))
    return comps


def is_connected_subset(tree: SpanningTree, subset) -> bool:
    subset = set(subset)
    if not subset:
        return False
    adj = tree.adjacency()
    start = next(iter(subset))
    seen, stack = {start}, [start]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v in subset and v not in seen:
                seen.add(v)
                stack.append(v)
    return seen == subset
