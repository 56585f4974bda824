"""Kernel generalized variance (KGV) mutual information and the KGV tree contrast.

Each component gets a Gaussian-kernel Gram matrix, approximated by a pivoted
incomplete Cholesky factor and centred.  Mutual informations are log
determinants of the block matrix whose diagonal blocks are the identity and
whose off-diagonal blocks are R_i R_j with R_i = K_i (K_i + r I)^{-1}.
By default the ridge is r = N * kappa / 2 so that a fixed kappa means the same
amount of smoothing at every sample size; ``scale_kappa=False`` uses r = kappa.
Everything is computed in the low-rank coordinates of each factor.
"""

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .core import DimensionMismatch, SpanningTree, as_array
from .kde import log_abs_det


@dataclass(frozen=True)
class KgvConfig:
    kernel_width: float = 0.5
    kappa: float = 1e-3
    cholesky_tol: float = 1e-4
    scale_kappa: bool = True

    def __post_init__(self):
        if not (self.kernel_width > 0 and self.kappa > 0 and self.cholesky_tol > 0):
            raise ValueError("kernel_width, kappa and cholesky_tol must be positive")

    def ridge(self, n) -> float:
        return self.kappa * n / 2.0 if self.scale_kappa else self.kappa


@dataclass(frozen=True)
class CholeskyFactor:
    """Centred low-rank factor, ``g @ g.T`` approximates the centred Gram matrix.

    ``basis`` holds orthonormal eigenvectors of ``g @ g.T`` and ``eigvals`` the
    matching eigenvalues, which is all the KGV needs.
    """

    g: np.ndarray
    pivots: np.ndarray
    pivot_values: np.ndarray
    basis: np.ndarray
    eigvals: np.ndarray

    @property
    def n(self) -> int:
        return self.g.shape[0]

    @property
    def rank(self) -> int:
        return self.g.shape[1]

    def scaled_basis(self, ridge) -> np.ndarray:
        """Columns of the basis scaled by lambda / (lambda + ridge)."""
        return self.basis * (self.eigvals / (self.eigvals + ridge))


def gaussian_gram(x, y, width):
    d = np.subtract.outer(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    return np.exp(-0.5 * d * d / (width * width))


def centered_gram(samples, width) -> np.ndarray:
    """Exact centred Gram matrix H K H (dense, for checking only)."""
    x = np.asarray(samples, dtype=float).ravel()
    k = gaussian_gram(x, x, width)
    return k - k.mean(axis=0) - k.mean(axis=1)[:, None] + k.mean()


def incomplete_cholesky(samples, cfg: KgvConfig = KgvConfig(), pivots=None) -> CholeskyFactor:
    """Greedy pivoted incomplete Cholesky of the Gaussian Gram matrix.

    Stops once the residual trace drops to ``cholesky_tol * N``.  The factor is
    then centred; the residual of the centred Gram matrix is bounded by the
    uncentred one because centring is an orthogonal projection.

    Passing ``pivots`` replays a fixed pivot sequence instead of the greedy
    choice, which makes the factor a smooth function of the samples (used for
    finite differences).
    """
    x = np.asarray(samples, dtype=float).ravel()
    n = x.size
    scale = -0.5 / (cfg.kernel_width ** 2)
    diag = np.ones(n)
    forced = None if pivots is None else [int(p) for p in pivots]
    cap = min(n, 64) if forced is None else max(1, len(forced))
    g = np.empty((n, cap))
    pivots, pivot_values = [], []
    budget = cfg.cholesky_tol * n
    r = 0
    while r < n:
        if forced is None:
            if diag.sum() <= budget:
                break
            j = int(np.argmax(diag))
        else:
            if r == len(forced):
                break
            j = forced[r]
        pivot = diag[j]
        if pivot <= 1e-15:
            break
        if r == cap:
            cap = min(n, 2 * cap)
            g = np.concatenate([g, np.empty((n, cap - g.shape[1]))], axis=1)
        col = np.exp(scale * (x - x[j]) ** 2)
        if r:
            col -= g[:, :r] @ g[j, :r]
        col /= np.sqrt(pivot)
        col[j] = np.sqrt(pivot)
        g[:, r] = col
        r += 1
        pivots.append(j)
        pivot_values.append(pivot)
        diag -= col * col
        np.clip(diag, 0.0, None, out=diag)
        diag[pivots] = 0.0
    g = g[:, :r]
    g = g - g.mean(axis=0)
    if g.shape[1]:
        keep = (g * g).sum(axis=0) > 1e-14 * n
        g = g[:, keep]
    if g.shape[1]:
        evals, evecs = np.linalg.eigh(g.T @ g)
        keep = evals > 1e-12 * max(1.0, evals[-1])
        evals, evecs = evals[keep], evecs[:, keep]
        basis = (g @ evecs) / np.sqrt(evals)
    else:
        evals, basis = np.zeros(0), np.zeros((n, 0))
    return CholeskyFactor(g, np.array(pivots, dtype=int), np.array(pivot_values),
                          basis, evals)


def _logdet_psd(c) -> float:
    try:
        chol = np.linalg.cholesky(c)
        return 2.0 * float(np.sum(np.log(np.diag(chol))))
    except np.linalg.LinAlgError:
        evals = np.clip(np.linalg.eigvalsh(c), 1e-12, None)
        return float(np.sum(np.log(evals)))


def _assemble(blocks):
    """Identity diagonal, ``B_i^T B_j`` off-diagonal."""
    sizes = [b.shape[1] for b in blocks]
    total = sum(sizes)
    c = np.eye(total)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    for i in range(len(blocks)):
        for j in range(i + 1, len(blocks)):
            if sizes[i] and sizes[j]:
                cross = blocks[i].T @ blocks[j]
                c[offsets[i]:offsets[i + 1], offsets[j]:offsets[j + 1]] = cross
                c[offsets[j]:offsets[j + 1], offsets[i]:offsets[i + 1]] = cross.T
    return c


def _check_factors(factors):
    ns = {f.n for f in factors}
    if len(ns) > 1:
        raise DimensionMismatch(f"factors disagree on N: {sorted(ns)}")


def kgv_mutual_information(factors, cfg: KgvConfig = KgvConfig()) -> float:
    """-1/2 log of the kernel generalized variance of the given components."""
    factors = list(factors)
    _check_factors(factors)
    if len(factors) < 2:
        return 0.0
    blocks = [f.scaled_basis(cfg.ridge(f.n)) for f in factors]
    return -0.5 * _logdet_psd(_assemble(blocks))


def pairwise_kgv_mi(f_u: CholeskyFactor, f_v: CholeskyFactor, cfg: KgvConfig = KgvConfig()) -> float:
    _check_factors([f_u, f_v])
    bu, bv = f_u.scaled_basis(cfg.ridge(f_u.n)), f_v.scaled_basis(cfg.ridge(f_v.n))
    if not bu.shape[1] or not bv.shape[1]:
        return 0.0
    s = np.linalg.svd(bu.T @ bv, compute_uv=False)
    return float(-0.5 * np.sum(np.log(np.clip(1.0 - s * s, 1e-12, None))))


def group_kgv_mi(factors, groups, cfg: KgvConfig = KgvConfig()) -> float:
    """KGV mutual information between groups of components.

    Each group is a tuple of component indices whose feature blocks are
    concatenated.
    """
    factors = list(factors)
    _check_factors(factors)
    groups = [tuple(g) for g in groups]
    if len(groups) < 2:
        return 0.0
    blocks = [f.scaled_basis(cfg.ridge(f.n)) for f in factors]
    order = [i for g in groups for i in g]
    full = _assemble([blocks[i] for i in order])
    sizes = [blocks[i].shape[1] for i in order]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    logdet = _logdet_psd(full)
    pos = 0
    for g in groups:
        a, b = offsets[pos], offsets[pos + len(g)]
        logdet -= _logdet_psd(full[a:b, a:b])
        pos += len(g)
    return -0.5 * logdet


def kgv_dense_reference(samples, cfg: KgvConfig = KgvConfig()) -> float:
    """Full N x N evaluation of the regularized KGV (small N only)."""
    comps = [np.asarray(s, dtype=float).ravel() for s in samples]
    n = comps[0].size
    rs = []
    for s in comps:
        k = centered_gram(s, cfg.kernel_width)
        rs.append(np.linalg.solve(k + cfg.ridge(n) * np.eye(n), k).T)
    m = len(rs)
    big = np.eye(m * n)
    for i in range(m):
        for j in range(m):
            if i != j:
                big[i * n:(i + 1) * n, j * n:(j + 1) * n] = rs[i] @ rs[j]
    sign, logdet = np.linalg.slogdet(big)
    return float(-0.5 * logdet)


class KgvContrast:
    """KGV tree contrast on a fixed dataset; factors cached by row content."""

    name = "kgv"

    def __init__(self, data, cfg: KgvConfig = KgvConfig(), max_cache=5000):
        self.x = as_array(data)
        self.cfg = cfg
        self.max_cache = max_cache
        self._factors = {}
        self._pairs = {}
        self._frozen = None
        self.evaluations = {"cholesky": 0}

    @contextmanager
    def frozen(self, w):
        """Reuse the pivots chosen at ``w`` for every factor computed inside
        the block, so that small perturbations of W change the contrast
        smoothly."""
        w = np.asarray(w, dtype=float)
        pivots = {i: tuple(self.factor(i, w[i]).pivots) for i in range(w.shape[0])}
        saved = self._frozen
        self._frozen = pivots
        try:
            yield self
        finally:
            self._frozen = saved

    def factor(self, i, row) -> CholeskyFactor:
        row = np.ascontiguousarray(row, dtype=float)
        piv = None if self._frozen is None else self._frozen.get(i)
        key = (i, row.tobytes(), piv)
        f = self._factors.get(key)
        if f is None:
            self.evaluations["cholesky"] += 1
            f = incomplete_cholesky(self.x @ row, self.cfg, piv)
            if len(self._factors) > self.max_cache:
                self._factors.clear()
                self._pairs.clear()
            self._factors[key] = f
        return f

    def factors(self, w):
        w = np.asarray(w, dtype=float)
        return [self.factor(i, w[i]) for i in range(w.shape[0])]

    def pair_mi(self, w, i, j) -> float:
        if i > j:
            i, j = j, i
        fz = self._frozen
        key = (i, w[i].tobytes(), j, w[j].tobytes(),
               None if fz is None else (fz.get(i), fz.get(j)))
        val = self._pairs.get(key)
        if val is None:
            val = pairwise_kgv_mi(self.factor(i, w[i]), self.factor(j, w[j]), self.cfg)
            self._pairs[key] = val
        return val

    def mi_matrix(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        m = w.shape[0]
        out = np.zeros((m, m))
        for i in range(m):
            for j in range(i + 1, m):
                out[i, j] = out[j, i] = self.pair_mi(w, i, j)
        return out

    def total_mi(self, w) -> float:
        return kgv_mutual_information(self.factors(w), self.cfg)

    def value(self, w, tree: SpanningTree) -> float:
        w = np.asarray(w, dtype=float)
        log_abs_det(w)
        return self.total_mi(w) - sum(self.pair_mi(w, u, v) for u, v in tree.edges)


def contrast_JK(w, data, tree: SpanningTree, cfg: KgvConfig = KgvConfig()) -> float:
    """Total KGV mutual information minus pairwise KGV terms on the tree edges."""
    x = as_array(data)
    w = np.asarray(w, dtype=float)
    if w.shape != (x.shape[1], x.shape[1]) or tree.m != w.shape[0]:
        raise DimensionMismatch("W, data and tree disagree on m")
    return KgvContrast(x, cfg).value(w, tree)
