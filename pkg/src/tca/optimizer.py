"""Alternating minimization of the penalized tree contrast over (W, T).

W is optimized on the manifold ``(W Sigma W^T)_ii = 1``.  Internally the
search runs in whitened coordinates, W = V Sigma^{-1/2} with unit-norm rows
of V, which turns the constraint into a product of spheres and makes the
steepest-descent direction independent of the conditioning of Sigma.
"""

import json
import sys
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.decomposition import FastICA
from sklearn.exceptions import ConvergenceWarning

from .core import (CovarianceMatrix, SingularMatrix, SpanningTree, TCAError, as_array,
                   estimate_covariance)
from .gaussian import gaussian_mi_matrix, gaussian_project
from .kde import KdeConfig, KdeContrast
from .kgv import KgvConfig, KgvContrast, group_kgv_mi
from .trees import complement_components, connected_subtrees, is_connected_subset, \
    max_weight_spanning_tree


class DegenerateComponent(TCAError, ValueError):
    pass


class ZeroRow(TCAError, ValueError):
    pass


class InvalidSubtree(TCAError, ValueError):
    pass


class IcaNonConvergence(UserWarning):
    pass


CONTRASTS = ("kde", "kgv")
INITS = ("ica", "gaussian", "whiten")


@dataclass(frozen=True)
class LineSearch:
    initial_step: float = 1.0
    shrink: float = 0.5
    armijo_c: float = 1e-4
    max_halvings: int = 30

    def __post_init__(self):
        if not (self.initial_step > 0 and 0 < self.shrink < 1 and self.armijo_c > 0
                and self.max_halvings > 0):
            raise ValueError("invalid line-search parameters")


@dataclass(frozen=True)
class OptimizerConfig:
    lambda_c: float = 0.05
    contrast: str = "kgv"
    max_outer_iters: int = 200
    grad_eps: float = 1e-4
    line_search: LineSearch = LineSearch()
    convergence_tol: float = 1e-6
    seed: int = 0
    init: str = "ica"
    kde: KdeConfig = KdeConfig()
    kgv: KgvConfig = KgvConfig()
    refine_fraction: float = 0.5
    refine_steps: int = 10

    def __post_init__(self):
        if self.lambda_c < 0:
            raise ValueError("lambda_c must be >= 0")
        if not (self.grad_eps > 0 and self.convergence_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_outer_iters < 0:
            raise ValueError("max_outer_iters must be >= 0")
        if self.contrast not in CONTRASTS:
            raise ValueError(f"contrast must be one of {CONTRASTS}, got {self.contrast!r}")
        if self.init not in INITS:
            raise ValueError(f"init must be one of {INITS}, got {self.init!r}")


@dataclass
class FitResult:
    w: np.ndarray
    tree: SpanningTree
    objective_trace: list
    tree_switch_count: int = 0
    converged: bool = False
    iterations: int = 0
    ica_converged: bool = True
    records: list = field(default_factory=list, repr=False)

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]


def _cov(data, cov):
    if cov is None:
        return estimate_covariance(data)
    if isinstance(cov, CovarianceMatrix):
        return cov
    return CovarianceMatrix.from_sigma(cov)


def _edge_correlations(w, sigma):
    s = w @ sigma @ w.T
    d = np.diag(s)
    if np.any(d < 1e-12):
        raise DegenerateComponent(f"component {int(np.argmin(d))} has (near) zero variance")
    return s / np.sqrt(np.outer(d, d))


def _penalty_terms(corr):
    """Pairwise -1/2 log(1 - corr^2), +inf where |corr| >= 1 - 1e-12."""
    c2 = np.clip(corr * corr, 0.0, 1.0)
    out = np.full(corr.shape, np.inf)
    ok = np.abs(corr) < 1.0 - 1e-12
    out[ok] = -0.5 * np.log1p(-c2[ok])
    np.fill_diagonal(out, 0.0)
    return out


def penalty_JC(w, data, tree: SpanningTree) -> float:
    """-1/2 sum over tree edges of log(1 - corr^2) between source components."""
    x = as_array(data)
    s = (x - x.mean(axis=0)) @ np.asarray(w, dtype=float).T
    terms = _penalty_terms(_edge_correlations(np.eye(s.shape[1]), s.T @ s / s.shape[0]))
    return float(sum(terms[u, v] for u, v in tree.edges))


def make_contrast(data, cfg: OptimizerConfig):
    x = as_array(data)
    if cfg.contrast == "kde":
        return KdeContrast(x, cfg.kde)
    return KgvContrast(x, cfg.kgv)


def objective(w, data, tree: SpanningTree, cfg: OptimizerConfig = OptimizerConfig(),
              contrast=None) -> float:
    """Tree contrast plus ``lambda_c`` times the edge-correlation penalty."""
    x = as_array(data)
    contrast = make_contrast(x, cfg) if contrast is None else contrast
    value = contrast.value(np.asarray(w, dtype=float), tree)
    if cfg.lambda_c:
        value += cfg.lambda_c * penalty_JC(w, x, tree)
    return value


def project_unit_rows(w, cov) -> np.ndarray:
    """Rescale every row so that ``(W Sigma W^T)_ii = 1``."""
    w = np.array(w, dtype=float)
    sigma = cov.sigma if isinstance(cov, CovarianceMatrix) else np.asarray(cov, dtype=float)
    var = np.einsum("ij,jk,ik->i", w, sigma, w)
    if np.any(~(var > 0)):
        raise ZeroRow(f"row {int(np.argmin(var))} has zero variance under the covariance")
    return w / np.sqrt(var)[:, None]


def ica_initialize(data, cov=None, seed=0) -> np.ndarray:
    """Deflation FastICA (tanh nonlinearity) on whitened data, mapped back and
    projected to unit rows.  Warns with :class:`IcaNonConvergence` if the
    fixed-point iteration did not converge; the last iterate is returned.
    """
    x = as_array(data)
    cov = _cov(x, cov)
    m = cov.m
    z = (x - x.mean(axis=0)) @ cov.inv_sqrt
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((m, m)))
    w_init = q * np.sign(np.diag(r))
    ica = FastICA(n_components=m, algorithm="deflation", whiten=False, fun="logcosh",
                  max_iter=200, tol=1e-6, w_init=w_init)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        ica.fit(z)
    if any(issubclass(c.category, ConvergenceWarning) for c in caught):
        warnings.warn("ICA initialization did not converge", IcaNonConvergence, stacklevel=2)
    return project_unit_rows(ica.components_ @ cov.inv_sqrt, cov)


def tangent_project(g, w, cov=None) -> np.ndarray:
    """Remove from each row g_i its component along the constraint normal Sigma w_i."""
    g = np.array(g, dtype=float)
    sigma = np.eye(w.shape[1]) if cov is None else (
        cov.sigma if isinstance(cov, CovarianceMatrix) else np.asarray(cov, dtype=float))
    normals = w @ sigma
    for i in range(g.shape[0]):
        nn = normals[i] @ normals[i]
        if nn > 0:
            g[i] -= (g[i] @ normals[i]) / nn * normals[i]
    return g


def gradient_fd(f, w, eps=1e-4, cov=None, rows=None) -> np.ndarray:
    """Central finite-difference gradient of ``f`` over the entries of ``w``,
    projected onto the tangent space of the unit-row constraint.

    Only one row changes per evaluation, so contrasts that cache per-component
    quantities recompute just that component.  ``rows`` restricts the
    differentiation to a subset of rows (others get zero gradient).
    """
    w = np.asarray(w, dtype=float)
    g = np.zeros_like(w)
    rows = range(w.shape[0]) if rows is None else rows
    for i in rows:
        for j in range(w.shape[1]):
            wp = w.copy()
            wp[i, j] += eps
            wm = w.copy()
            wm[i, j] -= eps
            g[i, j] = (f(wp) - f(wm)) / (2.0 * eps)
    return tangent_project(g, w, cov)


def _unit_rows(v):
    return v / np.linalg.norm(v, axis=1)[:, None]


class _Problem:
    """Objective bookkeeping in whitened coordinates, W = V K with K = Sigma^{-1/2}."""

    def __init__(self, data, cfg: OptimizerConfig, cov=None):
        self.x = as_array(data)
        self.x = self.x - self.x.mean(axis=0)
        self.cov = _cov(self.x, cov)
        self.k = self.cov.inv_sqrt
        self.cfg = cfg
        self.contrast = make_contrast(self.x, cfg)
        self.m = self.cov.m

    def w_of(self, v):
        return v @ self.k

    def v_of(self, w):
        return _unit_rows(np.asarray(w, dtype=float) @ self.cov.sqrt)

    def penalty_matrix(self, v):
        # Source covariance in whitened coordinates is V V^T.
        return _penalty_terms(_edge_correlations(v, np.eye(self.m)))

    def value(self, v, tree):
        try:
            val = self.contrast.value(self.w_of(v), tree)
        except SingularMatrix:
            return np.inf
        if self.cfg.lambda_c:
            pen = self.penalty_matrix(v)
            val += self.cfg.lambda_c * sum(pen[u, t] for u, t in tree.edges)
        return float(val)

    def select_tree(self, v):
        """Tree minimizing the full penalized objective at fixed V."""
        weights = self.contrast.mi_matrix(self.w_of(v))
        if self.cfg.lambda_c:
            pen = self.penalty_matrix(v)
            pen[~np.isfinite(pen)] = 1e12
            weights = weights - self.cfg.lambda_c * pen
        return max_weight_spanning_tree(weights)

    def line_search(self, f, v, g, f0):
        """Backtracking along the normalized steepest-descent direction."""
        ls = self.cfg.line_search
        gnorm = float(np.linalg.norm(g))
        if not gnorm > 0:
            return None, f0, 0.0
        d = g / gnorm
        step = ls.initial_step
        for _ in range(ls.max_halvings + 1):
            cand = _unit_rows(v - step * d)
            fc = f(cand)
            if np.isfinite(fc) and fc <= f0 - ls.armijo_c * step * gnorm:
                return cand, fc, step
            step *= ls.shrink
        return None, f0, 0.0


def _initial_w(prob: _Problem, cfg: OptimizerConfig, w0=None):
    ica_ok = True
    if w0 is not None:
        return project_unit_rows(w0, prob.cov), ica_ok
    if cfg.init == "whiten":
        return prob.k.copy(), ica_ok
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", IcaNonConvergence)
        w = ica_initialize(prob.x, prob.cov, cfg.seed)
    ica_ok = not any(issubclass(c.category, IcaNonConvergence) for c in caught)
    if cfg.init == "gaussian":
        s = w @ prob.cov.sigma @ w.T
        tree = max_weight_spanning_tree(gaussian_mi_matrix(s))
        w = gaussian_project(w, prob.cov, tree)
    return w, ica_ok


def _emit(records, record, stream):
    records.append(record)
    if stream is not None:
        stream.write(json.dumps(record) + "\n")
        stream.flush()


def alternate_minimize(data, cfg: OptimizerConfig = OptimizerConfig(), w0=None,
                       cov=None, verbose=False, stream=None) -> FitResult:
    """Alternate a projected-gradient line-search step on W with re-selection
    of the optimal tree, until the objective decrease falls below
    ``convergence_tol`` or ``max_outer_iters`` steps have been taken.
    """
    prob = _Problem(data, cfg, cov)
    stream = (stream or sys.stderr) if verbose else None
    w, ica_ok = _initial_w(prob, cfg, w0)
    v = prob.v_of(w)
    tree = prob.select_tree(v)
    f = prob.value(v, tree)
    trace, records, switches = [f], [], 0
    _emit(records, {"iteration": 0, "objective": f, "tree": [list(e) for e in tree.edges],
                    "step": 0.0}, stream)
    converged = False
    it = 0
    for it in range(1, cfg.max_outer_iters + 1):
        fun = lambda vv, t=tree: prob.value(vv, t)  # noqa: E731
        with prob.contrast.frozen(prob.w_of(v)):
            g = gradient_fd(fun, v, cfg.grad_eps)
        cand, fc, step = prob.line_search(fun, v, g, f)
        if cand is None:
            converged = True
            it -= 1
            break
        new_tree = prob.select_tree(cand)
        if new_tree != tree:
            fn = prob.value(cand, new_tree)
            if fn <= fc:
                switches += 1
                tree, fc = new_tree, fn
        decrease = f - fc
        v, f = cand, fc
        trace.append(f)
        _emit(records, {"iteration": it, "objective": f,
                        "tree": [list(e) for e in tree.edges], "step": step}, stream)
        if decrease < cfg.convergence_tol:
            converged = True
            break
    return FitResult(prob.w_of(v), tree, trace, switches, converged, it, ica_ok, records)


def projected_gradient_norm(data, fit: FitResult, cfg: OptimizerConfig = OptimizerConfig(),
                            cov=None) -> float:
    """Frobenius norm of the tangent gradient (whitened coordinates) at a fit."""
    prob = _Problem(data, cfg, cov)
    v = prob.v_of(fit.w)
    with prob.contrast.frozen(prob.w_of(v)):
        g = gradient_fd(lambda vv: prob.value(vv, fit.tree), v, cfg.grad_eps)
    return float(np.linalg.norm(g))


def subtree_score(factors, tree: SpanningTree, subset, cfg: KgvConfig = KgvConfig()) -> float:
    """KGV score of how far the parts of the tree cut off by ``subset`` are from
    being conditionally independent given it.

    ``factors`` holds one Cholesky factor per component; groups of components
    enter as concatenated feature blocks.
    """
    subset = tuple(sorted(set(subset)))
    if not subset or not is_connected_subset(tree, subset):
        raise InvalidSubtree(f"{subset} is not a connected subtree")
    parts = complement_components(tree, subset)
    if len(parts) < 2:
        return 0.0
    joint = group_kgv_mi(factors, [subset] + [tuple(p) for p in parts], cfg)
    return float(joint - sum(group_kgv_mi(factors, [subset, tuple(p)], cfg) for p in parts))


def score_subtrees(w, data, tree: SpanningTree, cfg: OptimizerConfig = OptimizerConfig()):
    """``{subtree: score}`` for every connected subtree that splits the rest in two or more."""
    x = as_array(data)
    factors = KgvContrast(x - x.mean(axis=0), cfg.kgv).factors(np.asarray(w, dtype=float))
    max_size = 4 if tree.m <= 12 else 3
    scores = {}
    for sub in connected_subtrees(tree, max_size):
        if len(complement_components(tree, sub)) >= 2:
            scores[tuple(sorted(sub))] = subtree_score(factors, tree, sub, cfg.kgv)
    return scores


def refine_subtrees(data, fit: FitResult, cfg: OptimizerConfig = OptimizerConfig(),
                    cov=None) -> FitResult:
    """Re-optimize the rows of W belonging to the parts cut off by high-scoring
    subtrees.  Each part gets a short block descent on its own rows of the
    full objective (other rows fixed); a change is kept only if the objective
    drops by more than ``convergence_tol``.
    """
    prob = _Problem(data, cfg, cov)
    tree = fit.tree
    v = prob.v_of(fit.w)
    f = prob.value(v, tree)
    trace = list(fit.objective_trace)
    records = list(fit.records)
    switches = fit.tree_switch_count
    scores = score_subtrees(prob.w_of(v), prob.x, tree, cfg)
    if not scores:
        return replace(fit, objective_trace=trace)
    top = max(scores.values())
    flagged = sorted((s for s in scores.items() if s[1] >= cfg.refine_fraction * top),
                     key=lambda kv: (-kv[1], kv[0]))
    groups = []
    for sub, _ in flagged:
        for part in complement_components(tree, sub):
            part = tuple(sorted(part))
            if part not in groups:
                groups.append(part)
    for part in groups:
        fun = lambda vv, t=tree: prob.value(vv, t)  # noqa: E731
        cand, fl = v, f
        for _ in range(cfg.refine_steps):
            with prob.contrast.frozen(prob.w_of(cand)):
                g = gradient_fd(fun, cand, cfg.grad_eps, rows=part)
            nxt, fn, _ = prob.line_search(fun, cand, g, fl)
            if nxt is None or fl - fn < cfg.convergence_tol:
                if nxt is not None:
                    cand, fl = nxt, fn
                break
            cand, fl = nxt, fn
        if cand is v:
            continue
        new_tree = prob.select_tree(cand)
        fc = min(prob.value(cand, tree), prob.value(cand, new_tree))
        if f - fc > cfg.convergence_tol:
            if prob.value(cand, new_tree) <= prob.value(cand, tree) and new_tree != tree:
                switches += 1
                tree = new_tree
            v, f = cand, fc
            trace.append(f)
            records.append({"iteration": len(trace) - 1, "objective": f,
                            "tree": [list(e) for e in tree.edges], "refined": list(part)})
    return FitResult(prob.w_of(v), tree, trace, switches, fit.converged, fit.iterations,
                     fit.ica_converged, records)


def fit_tca(data, cfg: OptimizerConfig = OptimizerConfig(), refine=False, **kwargs) -> FitResult:
    fit = alternate_minimize(data, cfg, **kwargs)
    if refine:
        fit = refine_subtrees(data, fit, cfg, cov=kwargs.get("cov"))
    return fit
