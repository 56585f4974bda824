"""Density estimation on top of a fitted (W, T).

The tree is rooted, the root source gets a univariate Gaussian mixture and
every other source a mixture of experts conditioned on its parent.  Both are
fitted by EM and their sizes chosen by minimum description length.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .core import DimensionMismatch, SpanningTree, TCAError, as_array

MODEL_VERSION = "tca-density-1"
VAR_FLOOR = 1e-8
_LOG2PI = np.log(2.0 * np.pi)


def logsumexp(a, axis=None, keepdims=False):
    """Stable log-sum-exp over finite arrays (lighter than the scipy version)."""
    mx = np.max(a, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(a - mx), axis=axis, keepdims=True)) + mx
    return out if keepdims else np.squeeze(out, axis=axis)


class InvalidVertex(TCAError, ValueError):
    pass


class DegenerateComponent(TCAError, ValueError):
    pass


@dataclass(frozen=True)
class DirectedTree:
    root: int
    parent: tuple  # parent[u], -1 at the root
    order: tuple  # breadth-first order, root first

    @property
    def m(self) -> int:
        return len(self.parent)

    def undirected(self) -> SpanningTree:
        return SpanningTree(self.m, [(u, p) for u, p in enumerate(self.parent) if p >= 0])


def root_tree(tree: SpanningTree, root: int) -> DirectedTree:
    """Orient every edge away from ``root`` by breadth-first search."""
    if not (isinstance(root, (int, np.integer)) and 0 <= root < tree.m):
        raise InvalidVertex(f"root must be a vertex in 0..{tree.m - 1}, got {root!r}")
    root = int(root)
    adj = tree.adjacency()
    parent = [-2] * tree.m
    parent[root] = -1
    order = [root]
    for u in order:
        for v in adj[u]:
            if parent[v] == -2:
                parent[v] = u
                order.append(v)
    return DirectedTree(root, tuple(parent), tuple(order))


def choose_root(tree: SpanningTree, weights) -> int:
    """Vertex with the largest total weight on its incident edges (ties: lowest index)."""
    weights = np.asarray(weights, dtype=float)
    score = np.zeros(tree.m)
    for u, v in tree.edges:
        score[u] += weights[u, v]
        score[v] += weights[u, v]
    return int(np.argmax(score))


# --------------------------------------------------------------------- GMM

@dataclass
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    trace: list = field(default_factory=list, repr=False, compare=False)

    @property
    def k(self) -> int:
        return self.weights.size

    def _log_joint(self, y):
        y = np.asarray(y, dtype=float).ravel()
        return (np.log(self.weights) - 0.5 * (_LOG2PI + np.log(self.variances))
                - 0.5 * (y[:, None] - self.means) ** 2 / self.variances)

    def logpdf(self, y) -> np.ndarray:
        return logsumexp(self._log_joint(y), axis=1)

    def sample(self, n, rng) -> np.ndarray:
        k = rng.choice(self.k, size=n, p=self.weights)
        return self.means[k] + np.sqrt(self.variances[k]) * rng.standard_normal(n)

    def mean(self) -> float:
        return float(self.weights @ self.means)

    def variance(self) -> float:
        mu = self.mean()
        return float(self.weights @ (self.variances + (self.means - mu) ** 2))

    @property
    def n_params(self) -> int:
        return 3 * self.k - 1

    def to_dict(self):
        return {"weights": self.weights.tolist(), "means": self.means.tolist(),
                "variances": self.variances.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(*(np.asarray(d[k], dtype=float) for k in ("weights", "means", "variances")))


def _kmeanspp(points, k, rng):
    """k-means++ seeding followed by a few Lloyd iterations; returns labels."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n = pts.shape[0]
    centers = [pts[rng.integers(n)]]
    d2 = np.sum((pts - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(pts[idx])
        d2 = np.minimum(d2, np.sum((pts - pts[idx]) ** 2, axis=1))
    centers = np.array(centers)
    labels = np.zeros(n, dtype=int)
    for _ in range(10):
        dist = ((pts[:, None, :] - centers[None]) ** 2).sum(axis=2)
        labels = np.argmin(dist, axis=1)
        for j in range(k):
            if np.any(labels == j):
                centers[j] = pts[labels == j].mean(axis=0)
    return labels


def _converged(prev, cur, tol):
    return abs(cur - prev) <= tol * max(1.0, abs(cur))


def _check_size(n, k):
    if k < 1:
        raise ValueError("K must be >= 1")
    if n < 5 * k:
        raise ValueError(f"need N >= 5K samples, got N={n} for K={k}")


def fit_gmm(samples, k, seed=0, tol=1e-7, max_iter=500) -> GaussianMixture:
    """EM for a univariate Gaussian mixture with k-means++ initialization.

    A component whose variance collapses onto the floor with fewer than two
    effective points cannot be fixed by EM; the fit is restarted with one
    component fewer.  ``trace`` holds the log-likelihood after every
    iteration of the run that produced the returned model.
    """
    y = np.asarray(samples, dtype=float).ravel()
    n = y.size
    _check_size(n, k)
    rng = np.random.default_rng(seed)
    labels = _kmeanspp(y, k, rng)
    resp = np.zeros((n, k))
    resp[np.arange(n), labels] = 1.0
    trace = []
    model = None
    for _ in range(max_iter):
        nk = resp.sum(axis=0)
        keep = nk > 1e-10 * n
        resp, nk = resp[:, keep], nk[keep]
        means = resp.T @ y / nk
        var = np.maximum((resp * (y[:, None] - means) ** 2).sum(axis=0) / nk, VAR_FLOOR)
        if k > 1 and np.any((var <= VAR_FLOOR) & (nk < 2.0)):
            return fit_gmm(y, max(1, nk.size - 1), seed, tol, max_iter)
        model = GaussianMixture(nk / n, means, var)
        lj = model._log_joint(y)
        ll_i = logsumexp(lj, axis=1)
        ll = float(ll_i.sum())
        trace.append(ll)
        resp = np.exp(lj - ll_i[:, None])
        if len(trace) > 1 and _converged(trace[-2], ll, tol):
            break
    model.trace = trace
    return model


# --------------------------------------------------------------------- MoE

@dataclass
class MixtureOfExperts:
    """p(y | x) = sum_k softmax(a x + b)_k N(y; slope_k x + intercept_k, var_k).

    Expert 0 is the gate reference (a_0 = b_0 = 0).
    """

    gate_a: np.ndarray
    gate_b: np.ndarray
    slope: np.ndarray
    intercept: np.ndarray
    variances: np.ndarray
    trace: list = field(default_factory=list, repr=False, compare=False)

    @property
    def k(self) -> int:
        return self.slope.size

    def log_gate(self, x) -> np.ndarray:
        scores = np.outer(np.asarray(x, dtype=float).ravel(), self.gate_a) + self.gate_b
        return scores - logsumexp(scores, axis=1, keepdims=True)

    def _log_joint(self, y, x):
        x = np.asarray(x, dtype=float).ravel()
        y = np.asarray(y, dtype=float).ravel()
        mu = np.outer(x, self.slope) + self.intercept
        return (self.log_gate(x) - 0.5 * (_LOG2PI + np.log(self.variances))
                - 0.5 * (y[:, None] - mu) ** 2 / self.variances)

    def logpdf(self, y, x) -> np.ndarray:
        return logsumexp(self._log_joint(y, x), axis=1)

    def sample(self, x, rng) -> np.ndarray:
        x = np.asarray(x, dtype=float).ravel()
        probs = np.exp(self.log_gate(x))
        k = (rng.random(x.size)[:, None] > np.cumsum(probs, axis=1)).sum(axis=1)
        k = np.minimum(k, self.k - 1)
        return (self.slope[k] * x + self.intercept[k]
                + np.sqrt(self.variances[k]) * rng.standard_normal(x.size))

    @property
    def n_params(self) -> int:
        return 5 * self.k - 2

    def to_dict(self):
        return {"gate_a": self.gate_a.tolist(), "gate_b": self.gate_b.tolist(),
                "slope": self.slope.tolist(), "intercept": self.intercept.tolist(),
                "variances": self.variances.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(*(np.asarray(d[k], dtype=float)
                     for k in ("gate_a", "gate_b", "slope", "intercept", "variances")))


def _gate_objective(a, b, x, resp):
    scores = np.outer(x, a) + b
    return float(np.sum(resp * (scores - logsumexp(scores, axis=1, keepdims=True))))


def _gate_update(a, b, x, resp, newton_steps=2):
    """Increase sum_ik r_ik log g_k(x_i) by damped Newton steps on the free
    gate parameters (expert 0 held at zero)."""
    k = a.size
    if k == 1:
        return a, b
    xt = np.column_stack([x, np.ones_like(x)])
    p = 2 * (k - 1)
    cur = _gate_objective(a, b, x, resp)
    for _ in range(newton_steps):
        scores = np.outer(x, a) + b
        g = np.exp(scores - logsumexp(scores, axis=1, keepdims=True))[:, 1:]
        grad = ((resp[:, 1:] - g).T @ xt).ravel()
        outer = (xt[:, :, None] * xt[:, None, :]).reshape(-1, 4)
        diag = (g.T @ outer).reshape(k - 1, 2, 2)
        cross = ((g[:, :, None] * g[:, None, :]).reshape(-1, (k - 1) ** 2).T @ outer)
        hess = -cross.reshape(k - 1, k - 1, 2, 2)
        hess[np.arange(k - 1), np.arange(k - 1)] += diag
        hess = hess.transpose(0, 2, 1, 3).reshape(p, p)
        hess += (1e-8 * np.trace(hess) / p + 1e-10) * np.eye(p)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = grad
        t = 1.0
        for _ in range(30):
            na, nb = a.copy(), b.copy()
            na[1:] += t * step[0::2]
            nb[1:] += t * step[1::2]
            val = _gate_objective(na, nb, x, resp)
            if val >= cur:
                break
            t *= 0.5
        else:
            return a, b
        gain = val - cur
        a, b, cur = na, nb, val
        if gain < 1e-12 * max(1.0, abs(cur)):
            break
    return a, b


def fit_moe(child, parent, k, seed=0, tol=1e-7, max_iter=500) -> MixtureOfExperts:
    """Generalized EM for a mixture of linear-Gaussian experts with softmax gate.

    Experts are refitted exactly by weighted least squares; the gate by
    Newton steps that never decrease its part of the expected log-likelihood,
    so the data log-likelihood is nondecreasing.
    """
    y = np.asarray(child, dtype=float).ravel()
    x = np.asarray(parent, dtype=float).ravel()
    if x.size != y.size:
        raise DimensionMismatch("child and parent must have the same length")
    n = y.size
    _check_size(n, k)
    rng = np.random.default_rng(seed)
    sx = x.std() or 1.0
    sy = y.std() or 1.0
    labels = _kmeanspp(np.column_stack([x / sx, y / sy]), k, rng)
    resp = np.zeros((n, k))
    resp[np.arange(n), labels] = 1.0
    a = np.zeros(k)
    b = np.zeros(k)
    xt = np.column_stack([x, np.ones(n)])
    trace = []
    model = None
    for _ in range(max_iter):
        nk = resp.sum(axis=0)
        keep = nk > 1e-10 * n
        if not keep.all():
            resp, nk, a, b = resp[:, keep], nk[keep], a[keep], b[keep]
            a, b = a - a[0], b - b[0]
        kk = nk.size
        slope, icpt, var = np.zeros(kk), np.zeros(kk), np.zeros(kk)
        for j in range(kk):
            r = resp[:, j]
            lhs = (xt * r[:, None]).T @ xt + 1e-12 * np.eye(2)
            coef = np.linalg.solve(lhs, (xt * r[:, None]).T @ y)
            slope[j], icpt[j] = coef
            var[j] = max(float(r @ (y - xt @ coef) ** 2) / nk[j], VAR_FLOOR)
        if k > 1 and np.any((var <= VAR_FLOOR) & (nk < 3.0)):
            return fit_moe(y, x, max(1, kk - 1), seed, tol, max_iter)
        a, b = _gate_update(a, b, x, resp)
        model = MixtureOfExperts(a.copy(), b.copy(), slope, icpt, var)
        lj = model._log_joint(y, x)
        ll_i = logsumexp(lj, axis=1)
        ll = float(ll_i.sum())
        trace.append(ll)
        resp = np.exp(lj - ll_i[:, None])
        if len(trace) > 1 and _converged(trace[-2], ll, tol):
            break
    model.trace = trace
    return model


# --------------------------------------------------------------------- MDL

def mdl_score(model, loglik_total, n) -> float:
    return -loglik_total + 0.5 * model.n_params * np.log(n)


def mdl_select(samples, parent=None, k_max=8, seed=0, patience=None, return_scores=False):
    """Fit K = 1..k_max (as far as N >= 5K allows) and keep the lowest MDL score.

    Without ``parent`` the models are Gaussian mixtures, with it mixtures of
    experts of ``samples`` given ``parent``.  With ``patience`` set, the sweep
    stops once that many consecutive K fail to improve on the best score.
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    y = np.asarray(samples, dtype=float).ravel()
    n = y.size
    best, best_score, scores, worse = None, np.inf, {}, 0
    for k in range(1, min(k_max, n // 5) + 1):
        if parent is None:
            model = fit_gmm(y, k, seed)
            ll = float(model.logpdf(y).sum())
        else:
            model = fit_moe(y, parent, k, seed)
            ll = float(model.logpdf(y, parent).sum())
        score = mdl_score(model, ll, n)
        scores[k] = score
        if score < best_score:
            best, best_score, worse = model, score, 0
        else:
            worse += 1
            if patience is not None and worse >= patience:
                break
    return (best, scores) if return_scores else best


# ----------------------------------------------------------- tree density

@dataclass
class TreeDensityModel:
    w: np.ndarray
    dtree: DirectedTree
    root_model: GaussianMixture
    edge_models: dict  # vertex -> MixtureOfExperts

    @property
    def m(self) -> int:
        return self.dtree.m

    def source_logpdf(self, s) -> np.ndarray:
        lp = self.root_model.logpdf(s[:, self.dtree.root])
        for u in self.dtree.order[1:]:
            lp = lp + self.edge_models[u].logpdf(s[:, u], s[:, self.dtree.parent[u]])
        return lp

    def logpdf(self, x) -> np.ndarray:
        x = np.atleast_2d(as_array(x))
        if x.shape[1] != self.m:
            raise DimensionMismatch(f"model has m={self.m}, data has {x.shape[1]} columns")
        return self.source_logpdf(x @ self.w.T) + np.linalg.slogdet(self.w)[1]

    def to_dict(self):
        return {"version": MODEL_VERSION, "m": self.m, "w": self.w.tolist(),
                "root": self.dtree.root,
                "tree": [list(e) for e in self.dtree.undirected().edges],
                "root_model": self.root_model.to_dict(),
                "edge_models": {str(u): mdl.to_dict() for u, mdl in sorted(self.edge_models.items())}}

    @classmethod
    def from_dict(cls, d):
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')!r}")
        m = int(d["m"])
        dtree = root_tree(SpanningTree(m, [tuple(e) for e in d["tree"]]), int(d["root"]))
        return cls(np.asarray(d["w"], dtype=float), dtree,
                   GaussianMixture.from_dict(d["root_model"]),
                   {int(u): MixtureOfExperts.from_dict(v) for u, v in d["edge_models"].items()})


def fit_tree_density(data, w, tree: SpanningTree, k_max=8, seed=0, root=None,
                     edge_weights=None, patience=None) -> TreeDensityModel:
    """Fit root mixture and per-edge experts to the sources s = W x.

    The root defaults to :func:`choose_root` on ``edge_weights`` (by default
    the KDE pairwise mutual information of the sources on the tree edges).
    """
    x = as_array(data)
    w = np.asarray(w, dtype=float)
    s = x @ w.T
    if root is None:
        if edge_weights is None:
            from .kde import pairwise_mi_kde

            edge_weights = np.zeros((tree.m, tree.m))
            for u, v in tree.edges:
                edge_weights[u, v] = edge_weights[v, u] = pairwise_mi_kde(s[:, u], s[:, v])
        root = choose_root(tree, edge_weights)
    dtree = root_tree(tree, root)
    root_model = mdl_select(s[:, dtree.root], k_max=k_max, seed=seed, patience=patience)
    edges = {u: mdl_select(s[:, u], s[:, dtree.parent[u]], k_max=k_max, seed=seed,
                           patience=patience)
             for u in dtree.order[1:]}
    return TreeDensityModel(w, dtree, root_model, edges)


def log_likelihood(model: TreeDensityModel, data) -> float:
    """Mean log-density of the rows of ``data`` under the model."""
    return float(np.mean(model.logpdf(data)))


def sample_model(model: TreeDensityModel, n, seed=0) -> np.ndarray:
    """Ancestral sampling of the sources, then x = W^{-1} s."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    s = np.zeros((n, model.m))
    s[:, model.dtree.root] = model.root_model.sample(n, rng)
    for u in model.dtree.order[1:]:
        s[:, u] = model.edge_models[u].sample(s[:, model.dtree.parent[u]], rng)
    return np.linalg.solve(model.w, s.T).T


def save_model(path, model: TreeDensityModel):
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh, indent=1)


def load_model(path) -> TreeDensityModel:
    with open(path) as fh:
        return TreeDensityModel.from_dict(json.load(fh))
