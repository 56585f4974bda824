"""Closed-form Gaussian case: Gaussian mutual informations, tree-structured
covariances and the demixing matrices that make Gaussian data tree-factorized.
"""

from dataclasses import dataclass

import numpy as np

from .core import CovarianceMatrix, SpanningTree, TCAError


class NotSPD(TCAError, ValueError):
    pass


class NotOrthogonal(TCAError, ValueError):
    pass


def _check_spd(sigma):
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise NotSPD(f"expected a square matrix, got shape {sigma.shape}")
    if not np.allclose(sigma, sigma.T, rtol=1e-10, atol=1e-12):
        raise NotSPD("matrix is not symmetric")
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise NotSPD("matrix is not positive definite") from None
    return sigma, chol


def gaussian_total_mi(sigma) -> float:
    """-1/2 log(det S / prod S_ii): the m-fold Gaussian mutual information."""
    sigma, chol = _check_spd(sigma)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return float(-0.5 * (logdet - np.sum(np.log(np.diag(sigma)))))


def gaussian_pairwise_mi(sigma, u, v) -> float:
    sigma, _ = _check_spd(sigma)
    suu, svv, suv = sigma[u, u], sigma[v, v], sigma[u, v]
    return float(-0.5 * np.log1p(-suv * suv / (suu * svv)))


def gaussian_mi_matrix(sigma) -> np.ndarray:
    """All pairwise Gaussian mutual informations (zero diagonal)."""
    sigma, _ = _check_spd(sigma)
    d = np.sqrt(np.diag(sigma))
    corr = sigma / np.outer(d, d)
    np.fill_diagonal(corr, 0.0)
    return -0.5 * np.log1p(-corr ** 2)


def gaussian_t_mi(sigma, tree: SpanningTree) -> float:
    """Total Gaussian mutual information minus the tree-edge pairwise terms.

    Zero exactly when the precision matrix vanishes off the tree.
    """
    sigma, _ = _check_spd(sigma)
    total = gaussian_total_mi(sigma)
    return total - sum(gaussian_pairwise_mi(sigma, u, v) for u, v in tree.edges)


@dataclass(frozen=True)
class TreeStructuredCovariance:
    c: np.ndarray
    tree: SpanningTree
    edge_correlations: dict


def _bfs_parents(tree: SpanningTree, root=0):
    adj = tree.adjacency()
    parent = {root: None}
    order = [root]
    for u in order:
        for v in adj[u]:
            if v not in parent:
                parent[v] = u
                order.append(v)
    return order, parent


def tree_covariance(tree: SpanningTree, edge_correlations) -> TreeStructuredCovariance:
    """Unit-diagonal covariance of a linear-Gaussian chain along the tree.

    Each child is ``rho * parent + sqrt(1 - rho**2) * noise``; the correlation
    of two vertices is the product of the edge correlations on their path.
    """
    m = tree.m
    rho = {(min(u, v), max(u, v)): float(r) for (u, v), r in dict(edge_correlations).items()}
    order, parent = _bfs_parents(tree, 0)
    # s = B s + D e  ->  s = (I - B)^{-1} D e
    b = np.zeros((m, m))
    d = np.ones(m)
    for v in order[1:]:
        p = parent[v]
        r = rho[(min(p, v), max(p, v))]
        if not -1.0 < r < 1.0:
            raise ValueError(f"edge correlation {r} outside (-1, 1)")
        b[v, p] = r
        d[v] = np.sqrt(1.0 - r * r)
    a = np.linalg.solve(np.eye(m) - b, np.diag(d))
    c = a @ a.T
    c = 0.5 * (c + c.T)
    np.fill_diagonal(c, 1.0)
    return TreeStructuredCovariance(c, tree, rho)


def sample_tree_covariance(tree: SpanningTree, rng=None, correlation_range=(0.3, 0.9)):
    """Random member of the tree-structured covariance set, unit diagonal.

    Edge correlation magnitudes are uniform on ``correlation_range`` with a
    random sign.
    """
    rng = np.random.default_rng(rng)
    lo, hi = correlation_range
    rho = {}
    for e in tree.edges:
        rho[e] = rng.uniform(lo, hi) * rng.choice([-1.0, 1.0])
    return tree_covariance(tree, rho)


def _sym_sqrt(a):
    evals, evecs = np.linalg.eigh(0.5 * (a + a.T))
    return (evecs * np.sqrt(np.clip(evals, 0.0, None))) @ evecs.T


def theorem3_demixing(sigma, c, rotation) -> np.ndarray:
    """W = C^{1/2} R Sigma^{-1/2}, so that W Sigma W^T = C."""
    if not isinstance(sigma, CovarianceMatrix):
        sigma = CovarianceMatrix.from_sigma(sigma)
    cmat = c.c if isinstance(c, TreeStructuredCovariance) else np.asarray(c, dtype=float)
    r = np.asarray(rotation, dtype=float)
    m = sigma.m
    if r.shape != (m, m) or not np.allclose(r @ r.T, np.eye(m), atol=1e-10, rtol=0):
        raise NotOrthogonal("rotation must be an orthogonal m x m matrix")
    w = _sym_sqrt(cmat) @ r @ sigma.inv_sqrt
    scale = np.sqrt(np.einsum("ij,jk,ik->i", w, sigma.sigma, w))
    return w / scale[:, None]


def random_rotation(m, rng=None) -> np.ndarray:
    rng = np.random.default_rng(rng)
    q, r = np.linalg.qr(rng.standard_normal((m, m)))
    return q * np.sign(np.diag(r))


def gaussian_project(w, sigma, tree: SpanningTree) -> np.ndarray:
    """Closest tree-factorizing Gaussian solution to a given demixing matrix.

    Keeps the edge correlations of W Sigma W^T, completes them to the
    tree-structured covariance C and picks the rotation R (polar factor)
    nearest to C^{-1/2} W Sigma^{1/2}.
    """
    if not isinstance(sigma, CovarianceMatrix):
        sigma = CovarianceMatrix.from_sigma(sigma)
    w = np.asarray(w, dtype=float)
    s = w @ sigma.sigma @ w.T
    d = np.sqrt(np.diag(s))
    w = w / d[:, None]
    corr = s / np.outer(d, d)
    rho = {e: float(np.clip(corr[e], -0.99, 0.99)) for e in tree.edges}
    c = tree_covariance(tree, rho)
    evals, evecs = np.linalg.eigh(c.c)
    c_inv_sqrt = (evecs / np.sqrt(evals)) @ evecs.T
    u, _, vt = np.linalg.svd(c_inv_sqrt @ w @ sigma.sqrt)
    return theorem3_demixing(sigma, c, u @ vt)
