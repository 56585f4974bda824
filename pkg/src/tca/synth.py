"""Synthetic problem generators.

Sources are drawn from a directed graphical model whose conditionals are
softmax-gated linear-Gaussian experts on a projection of the parent values,
then standardized and mixed by a random matrix.  Treewidth 1 gives a tree
(the model class TCA assumes); larger treewidths come from random k-trees.
The generator keeps every constant it used, so its log-density is exact.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .core import SpanningTree, TCAError
from .trees import prufer_decode

CATALOG_VERSION = "tca-catalog-1"
GENERATOR_VERSION = "tca-synth-1"


class InvalidTreewidth(TCAError, ValueError):
    pass


@dataclass(frozen=True)
class RootTemplate:
    weights: tuple
    means: tuple
    sds: tuple


@dataclass(frozen=True)
class EdgeTemplate:
    """Experts y = slope * z + intercept + sd * noise, gated by softmax(a z + b)."""

    gate_a: tuple
    gate_b: tuple
    slope: tuple
    intercept: tuple
    sd: tuple


ROOT_CATALOG = {
    "bimodal": RootTemplate((0.5, 0.5), (-1.0, 1.0), (0.45, 0.45)),
    "skewed": RootTemplate((0.7, 0.3), (-0.5, 1.2), (0.45, 0.8)),
    "heavy_tailed": RootTemplate((0.8, 0.2), (0.0, 0.0), (0.5, 2.0)),
    "trimodal": RootTemplate((1 / 3, 1 / 3, 1 / 3), (-1.5, 0.0, 1.5), (0.35, 0.35, 0.35)),
}

# Child given the standardized parent projection z.  The coupling strength
# (slopes and gate slopes) is kept moderate: strong couplings make the true
# demixing matrix a poor minimizer of the smoothed contrasts at N ~ 1000.
DEPENDENCE = 0.1
_LOG = np.log

EDGE_CATALOG = {
    "bimodal_slope": EdgeTemplate((0.0, 0.0), (0.0, 0.0), (0.5 * DEPENDENCE,) * 2,
                                  (-0.9, 0.9), (0.3, 0.3)),
    "gated_bimodal": EdgeTemplate((-2.0 * DEPENDENCE, 2.0 * DEPENDENCE), (0.0, 0.0), (0.0, 0.0),
                                  (-0.9, 0.9), (0.35, 0.35)),
    "heteroscedastic": EdgeTemplate((-2.5 * DEPENDENCE, 2.5 * DEPENDENCE), (0.0, 0.0),
                                    (0.0, 0.0), (0.0, 0.0), (0.2, 1.0)),
    "skewed": EdgeTemplate((0.0, 0.0), (_LOG(0.75), _LOG(0.25)), (0.5 * DEPENDENCE,) * 2,
                           (-0.35, 1.05), (0.3, 0.6)),
    "heavy_tailed_mixture": EdgeTemplate((0.0, 0.0), (_LOG(0.85), _LOG(0.15)),
                                         (0.5 * DEPENDENCE,) * 2, (0.0, 0.0), (0.3, 1.5)),
}


def _template_logpdf(t, y, z):
    """log p(y | z) for an edge template; vectorised over samples."""
    a, b = np.asarray(t.gate_a), np.asarray(t.gate_b)
    slope, icpt, sd = np.asarray(t.slope), np.asarray(t.intercept), np.asarray(t.sd)
    scores = np.outer(z, a) + b
    loggate = scores - logsumexp(scores, axis=1, keepdims=True)
    resid = (y[:, None] - np.outer(z, slope) - icpt) / sd
    return logsumexp(loggate - 0.5 * resid ** 2 - np.log(sd) - 0.5 * np.log(2 * np.pi), axis=1)


def _template_sample(t, z, rng):
    a, b = np.asarray(t.gate_a), np.asarray(t.gate_b)
    scores = np.outer(z, a) + b
    probs = np.exp(scores - logsumexp(scores, axis=1, keepdims=True))
    k = (rng.random(z.size)[:, None] > np.cumsum(probs, axis=1)).sum(axis=1)
    k = np.minimum(k, len(a) - 1)
    slope, icpt, sd = (np.asarray(v)[k] for v in (t.slope, t.intercept, t.sd))
    return slope * z + icpt + sd * rng.standard_normal(z.size)


def _root_logpdf(t, y):
    w, mu, sd = (np.asarray(v) for v in (t.weights, t.means, t.sds))
    r = (y[:, None] - mu) / sd
    return logsumexp(np.log(w) - 0.5 * r ** 2 - np.log(sd) - 0.5 * np.log(2 * np.pi), axis=1)


def _root_sample(t, n, rng):
    w, mu, sd = (np.asarray(v) for v in (t.weights, t.means, t.sds))
    k = rng.choice(len(w), size=n, p=w)
    return mu[k] + sd[k] * rng.standard_normal(n)


def _moments(x):
    x = np.asarray(x, dtype=float)
    z = (x - x.mean()) / x.std()
    skew = float(np.mean(z ** 3))
    kurt = float(np.mean(z ** 4) - 3.0)
    n = x.size
    g2 = kurt
    bc = (skew ** 2 + 1) / (g2 + 3 * (n - 1) ** 2 / ((n - 2) * (n - 3)))
    return skew, kurt, bc


def validate_catalog(n=200_000, seed=0):
    """Check every template is non-Gaussian (excess kurtosis or bimodality).

    Returns ``{template id: (excess kurtosis, bimodality coefficient, ok)}``.
    Edge templates are checked on the conditional residual y - E[y | z] with
    a standard normal parent.
    """
    rng = np.random.default_rng(seed)
    report = {}
    for name, t in ROOT_CATALOG.items():
        _, kurt, bc = _moments(_root_sample(t, n, rng))
        report[f"root/{name}"] = (kurt, bc, abs(kurt) > 0.3 or bc > 0.555)
    for name, t in EDGE_CATALOG.items():
        z = rng.standard_normal(n)
        y = _template_sample(t, z, rng)
        _, kurt, bc = _moments(y)
        report[f"edge/{name}"] = (kurt, bc, abs(kurt) > 0.3 or bc > 0.555)
    return report


@dataclass
class Conditional:
    """One vertex of the generator: root template or gated experts on parents.

    The parent projection ``z = direction . parents`` and the vertex output
    are both brought to zero mean / unit variance by constants fixed from a
    pilot sample, so templates always see standardized inputs.
    """

    vertex: int
    parents: tuple
    template: str
    direction: np.ndarray = None
    z_loc: float = 0.0
    z_scale: float = 1.0
    out_loc: float = 0.0
    out_scale: float = 1.0

    def _z(self, s):
        return (s[:, list(self.parents)] @ self.direction - self.z_loc) / self.z_scale

    def sample_raw(self, s, rng):
        n = s.shape[0]
        if not self.parents:
            return _root_sample(ROOT_CATALOG[self.template], n, rng)
        return _template_sample(EDGE_CATALOG[self.template], self._z(s), rng)

    def logpdf(self, s):
        """log density of the standardized value of this vertex given its parents."""
        y = self.out_loc + self.out_scale * s[:, self.vertex]
        if not self.parents:
            lp = _root_logpdf(ROOT_CATALOG[self.template], y)
        else:
            lp = _template_logpdf(EDGE_CATALOG[self.template], y, self._z(s))
        return lp + np.log(self.out_scale)

    def to_dict(self):
        return {"vertex": self.vertex, "parents": list(self.parents), "template": self.template,
                "direction": None if self.direction is None else self.direction.tolist(),
                "z_loc": self.z_loc, "z_scale": self.z_scale,
                "out_loc": self.out_loc, "out_scale": self.out_scale}

    @classmethod
    def from_dict(cls, d):
        direction = d.get("direction")
        return cls(int(d["vertex"]), tuple(d["parents"]), d["template"],
                   None if direction is None else np.asarray(direction, dtype=float),
                   float(d["z_loc"]), float(d["z_scale"]),
                   float(d["out_loc"]), float(d["out_scale"]))


@dataclass
class SourceGenerator:
    """Directed source model plus the final standardization and mixing."""

    m: int
    order: tuple
    conditionals: list
    edges: tuple
    treewidth: int
    mixing: np.ndarray
    loc: np.ndarray = None
    scale: np.ndarray = None
    seed: int = None
    version: str = GENERATOR_VERSION
    catalog_version: str = CATALOG_VERSION

    @property
    def demixing(self) -> np.ndarray:
        return np.linalg.inv(self.mixing)

    def _sample_internal(self, n, rng):
        s = np.zeros((n, self.m))
        for v in self.order:
            c = self.conditionals[v]
            s[:, v] = (c.sample_raw(s, rng) - c.out_loc) / c.out_scale
        return s

    def sample_sources(self, n, rng):
        return (self._sample_internal(n, rng) - self.loc) / self.scale

    def sample(self, n, rng):
        """Return ``(x, s)`` with x = A s, one sample per row."""
        s = self.sample_sources(n, rng)
        return s @ self.mixing.T, s

    def source_log_density(self, s):
        internal = self.loc + self.scale * np.asarray(s, dtype=float)
        lp = sum(self.conditionals[v].logpdf(internal) for v in self.order)
        return lp + np.sum(np.log(self.scale))

    def log_density(self, x):
        """Exact log p(x) per sample."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        s = np.linalg.solve(self.mixing, x.T).T
        return self.source_log_density(s) - np.linalg.slogdet(self.mixing)[1]

    def tree(self) -> SpanningTree:
        if self.treewidth != 1:
            raise ValueError("generator is not a tree")
        return SpanningTree(self.m, self.edges)

    def to_dict(self):
        return {"version": self.version, "catalog_version": self.catalog_version,
                "m": self.m, "treewidth": self.treewidth, "seed": self.seed,
                "order": list(self.order), "edges": [list(e) for e in self.edges],
                "mixing": self.mixing.tolist(), "loc": self.loc.tolist(),
                "scale": self.scale.tolist(),
                "conditionals": [c.to_dict() for c in self.conditionals]}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["m"]), tuple(d["order"]),
                   [Conditional.from_dict(c) for c in d["conditionals"]],
                   tuple(tuple(e) for e in d["edges"]), int(d["treewidth"]),
                   np.asarray(d["mixing"], dtype=float), np.asarray(d["loc"], dtype=float),
                   np.asarray(d["scale"], dtype=float), d.get("seed"),
                   d.get("version", GENERATOR_VERSION),
                   d.get("catalog_version", CATALOG_VERSION))


@dataclass(frozen=True)
class GeneratorSpec:
    m: int
    n: int
    treewidth: int = 1
    family: str = "default"
    seed: int = 0

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("m must be >= 2")
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if not 1 <= self.treewidth <= self.m - 1:
            raise InvalidTreewidth(
                f"treewidth must satisfy 1 <= treewidth <= m-1 = {self.m - 1}, got {self.treewidth}")
        if self.treewidth > 4:
            raise InvalidTreewidth(f"treewidth must be <= 4, got {self.treewidth}")
        if self.family != "default":
            raise ValueError(f"unknown conditional family {self.family!r}")


@dataclass
class Instance:
    x: np.ndarray
    w: np.ndarray
    tree: SpanningTree
    sources: np.ndarray
    generator: SourceGenerator = field(repr=False)
    spec: GeneratorSpec = None


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def random_spanning_tree(m, seed=None) -> SpanningTree:
    """Uniform labeled tree via a uniform Prufer sequence."""
    if m == 2:
        return SpanningTree(2, [(0, 1)])
    rng = _rng(seed)
    return prufer_decode(rng.integers(0, m, size=m - 2), m)


def random_mixing_matrix(m, seed=None, max_cond=100.0) -> np.ndarray:
    """Standard normal entries, redrawn until the condition number is below ``max_cond``."""
    rng = _rng(seed)
    while True:
        a = rng.standard_normal((m, m))
        if np.linalg.cond(a) < max_cond:
            return a


def _calibrate(conds, order, m, rng, n_pilot=20000):
    """Fix the standardization constants of every vertex from a pilot sample."""
    s = np.zeros((n_pilot, m))
    for v in order:
        c = conds[v]
        if c.parents:
            z = s[:, list(c.parents)] @ c.direction
            c.z_loc, c.z_scale = float(z.mean()), float(z.std())
        raw = c.sample_raw(s, rng)
        c.out_loc, c.out_scale = float(raw.mean()), float(raw.std())
        s[:, v] = (raw - c.out_loc) / c.out_scale


def _random_direction(k, rng):
    d = rng.standard_normal(k)
    return d / np.linalg.norm(d)


def _finish(m, order, conds, edges, treewidth, spec, rng):
    _calibrate(conds, order, m, rng)
    a = random_mixing_matrix(m, rng)
    gen = SourceGenerator(m, tuple(order), conds, tuple(sorted(edges)), treewidth, a,
                          np.zeros(m), np.ones(m), spec.seed)
    s_int = gen._sample_internal(spec.n, rng)
    gen.loc = s_int.mean(axis=0)
    gen.scale = s_int.std(axis=0)
    s = (s_int - gen.loc) / gen.scale
    return gen, s


def sample_tca_instance(spec: GeneratorSpec) -> Instance:
    """Tree-structured sources, standardized and mixed: x = A s, W = A^{-1}."""
    if spec.treewidth != 1:
        raise InvalidTreewidth("sample_tca_instance needs treewidth 1")
    rng = np.random.default_rng([spec.seed, 1])
    m = spec.m
    tree = random_spanning_tree(m, rng)
    root = int(rng.integers(m))
    adj = tree.adjacency()
    parent, order = {root: None}, [root]
    for u in order:
        for v in adj[u]:
            if v not in parent:
                parent[v] = u
                order.append(v)
    roots, edges_t = sorted(ROOT_CATALOG), sorted(EDGE_CATALOG)
    conds = [None] * m
    conds[root] = Conditional(root, (), roots[rng.integers(len(roots))])
    for v in order[1:]:
        conds[v] = Conditional(v, (parent[v],), edges_t[rng.integers(len(edges_t))],
                               np.ones(1))
    gen, s = _finish(m, order, conds, tree.edges, 1, spec, rng)
    x = s @ gen.mixing.T
    return Instance(x, gen.demixing, tree, s, gen, spec)


def random_ktree(m, k, rng):
    """Random k-tree: a (k+1)-clique, then each new vertex joins a random k-clique.

    Returns ``(order, parents, edges)``; the parents of each vertex form a
    clique, so the moral graph is the k-tree itself.
    """
    order = [int(v) for v in rng.permutation(m)]
    parents = {}
    edges = set()
    base = order[:k + 1]
    for i, v in enumerate(base):
        parents[v] = tuple(base[:i])
        for u in base[:i]:
            edges.add((min(u, v), max(u, v)))
    cliques = [tuple(c) for c in itertools.combinations(base, k)]
    for v in order[k + 1:]:
        c = cliques[rng.integers(len(cliques))]
        parents[v] = tuple(c)
        for u in c:
            edges.add((min(u, v), max(u, v)))
        for drop in c:
            cliques.append(tuple(u for u in c if u != drop) + (v,))
    return order, parents, edges


def sample_treewidth_instance(spec: GeneratorSpec) -> Instance:
    """Sources from a random k-tree model of treewidth ``spec.treewidth``."""
    if spec.treewidth < 1 or spec.treewidth > 4:
        raise InvalidTreewidth("treewidth must be between 1 and 4")
    rng = np.random.default_rng([spec.seed, 2])
    m = spec.m
    order, parents, edges = random_ktree(m, spec.treewidth, rng)
    roots, edges_t = sorted(ROOT_CATALOG), sorted(EDGE_CATALOG)
    conds = [None] * m
    for v in order:
        ps = parents[v]
        if not ps:
            conds[v] = Conditional(v, (), roots[rng.integers(len(roots))])
        else:
            conds[v] = Conditional(v, ps, edges_t[rng.integers(len(edges_t))],
                                   _random_direction(len(ps), rng))
    gen, s = _finish(m, order, conds, edges, spec.treewidth, spec, rng)
    x = s @ gen.mixing.T
    tree = SpanningTree(m, edges) if spec.treewidth == 1 else None
    return Instance(x, gen.demixing, tree, s, gen, spec)


def generate(spec: GeneratorSpec) -> Instance:
    if spec.treewidth == 1:
        return sample_tca_instance(spec)
    return sample_treewidth_instance(spec)


def moral_graph_edges(gen: SourceGenerator):
    edges = set()
    for c in gen.conditionals:
        ps = list(c.parents)
        for u in ps:
            edges.add((min(u, c.vertex), max(u, c.vertex)))
        for u, v in itertools.combinations(ps, 2):
            edges.add((min(u, v), max(u, v)))
    return edges


def exact_treewidth(m, edges):
    """Treewidth by exhaustive search over elimination orders (small m only)."""
    adj0 = [set() for _ in range(m)]
    for u, v in edges:
        adj0[u].add(v)
        adj0[v].add(u)
    best = m - 1
    for perm in itertools.permutations(range(m)):
        adj = [set(a) for a in adj0]
        width = 0
        alive = set(range(m))
        for v in perm:
            nb = adj[v] & alive
            width = max(width, len(nb))
            if width >= best:
                break
            for a in nb:
                adj[a] |= nb - {a}
            alive.discard(v)
        else:
            best = min(best, width)
    return best
