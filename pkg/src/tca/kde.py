"""Gaussian kernel density estimates on regular grids and the entropy-based
tree contrast.

Densities are evaluated by linear binning onto an M-point grid followed by an
FFT convolution with the sampled Gaussian kernel.  The 2-D kernel is a
product kernel, so the 2-D convolution is done one axis at a time.
"""

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .core import (DegenerateData, DimensionMismatch, SingularMatrix, SpanningTree,
                   as_array)


@dataclass(frozen=True)
class KdeConfig:
    bandwidth: float = 0.125
    grid_points: int = 256
    grid_margin: float = 3.0
    density_floor: float = 1e-12

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        m = int(self.grid_points)
        if m < 16 or m & (m - 1):
            raise ValueError("grid_points must be a power of two >= 16")
        if self.grid_margin < 0:
            raise ValueError("grid_margin must be >= 0")


@dataclass(frozen=True)
class Grid:
    lo: float
    step: float
    size: int

    @property
    def points(self) -> np.ndarray:
        return self.lo + self.step * np.arange(self.size)

    @property
    def hi(self) -> float:
        return self.lo + self.step * (self.size - 1)


@dataclass(frozen=True)
class EntropyEstimate:
    value: float
    grid: tuple

    def __float__(self):
        return self.value


def effective_bandwidth(x, cfg: KdeConfig) -> float:
    """Bandwidth in data units: ``h`` times the sample standard deviation.

    On unit-variance components this is exactly ``h``.
    """
    x = np.asarray(x, dtype=float)
    sd = x.std()
    if not sd > 0:
        raise DegenerateData("samples have zero range")
    return cfg.bandwidth * sd


def make_grid(x, cfg: KdeConfig) -> Grid:
    x = np.asarray(x, dtype=float)
    xmin, xmax = x.min(), x.max()
    if not xmax > xmin:
        raise DegenerateData("samples have zero range")
    pad = cfg.grid_margin * effective_bandwidth(x, cfg)
    lo, hi = xmin - pad, xmax + pad
    return Grid(float(lo), float((hi - lo) / (cfg.grid_points - 1)), cfg.grid_points)


def _check_samples(x):
    x = np.asarray(x, dtype=float).ravel()
    if x.size < 2:
        raise DegenerateData("need at least two samples")
    if not np.all(np.isfinite(x)):
        raise DegenerateData("samples must be finite")
    return x


def _bin_positions(x, grid: Grid):
    t = (x - grid.lo) / grid.step
    j = np.clip(np.floor(t).astype(np.intp), 0, grid.size - 2)
    return j, t - j


def linear_bin_1d(x, grid: Grid) -> np.ndarray:
    """Grid masses (summing to 1) from linear binning of the samples."""
    x = np.sort(x)
    j, f = _bin_positions(x, grid)
    idx = np.concatenate([j, j + 1])
    wts = np.concatenate([1.0 - f, f])
    return np.bincount(idx, wts, minlength=grid.size) / x.size


def linear_bin_2d(u, v, gu: Grid, gv: Grid) -> np.ndarray:
    order = np.lexsort((v, u))
    u, v = u[order], v[order]
    ju, fu = _bin_positions(u, gu)
    jv, fv = _bin_positions(v, gv)
    n = gv.size
    idx = np.concatenate([ju * n + jv, ju * n + jv + 1, (ju + 1) * n + jv, (ju + 1) * n + jv + 1])
    wts = np.concatenate([(1 - fu) * (1 - fv), (1 - fu) * fv, fu * (1 - fv), fu * fv])
    return np.bincount(idx, wts, minlength=gu.size * n).reshape(gu.size, n) / u.size


def _kernel_spectrum(grid: Grid, h):
    """Real FFT of the Gaussian kernel sampled at grid offsets (8 bandwidths)."""
    half = int(min(grid.size - 1, np.ceil(8.0 * h / grid.step)))
    offsets = np.arange(-half, half + 1) * grid.step
    k = np.exp(-0.5 * (offsets / h) ** 2) / (np.sqrt(2.0 * np.pi) * h)
    nfft = sfft.next_fast_len(grid.size + 2 * half, real=True)
    padded = np.zeros(nfft)
    padded[:k.size] = k
    return sfft.rfft(padded), half, nfft


def _convolve_axis(a, grid: Grid, h, axis):
    spec, half, nfft = _kernel_spectrum(grid, h)
    shape = [1] * a.ndim
    shape[axis] = spec.size
    out = sfft.irfft(sfft.rfft(a, n=nfft, axis=axis) * spec.reshape(shape), n=nfft, axis=axis)
    return np.take(out, np.arange(half, half + grid.size), axis=axis)


def kde_density_grid_1d(samples, cfg: KdeConfig = KdeConfig(), grid: Grid = None):
    """Return ``(grid, density)`` for the Gaussian KDE on the regular grid."""
    x = _check_samples(samples)
    grid = make_grid(x, cfg) if grid is None else grid
    dens = _convolve_axis(linear_bin_1d(x, grid), grid, effective_bandwidth(x, cfg), 0)
    return grid, np.clip(dens, 0.0, None)


def kde_density_grid_2d(samples_u, samples_v, cfg: KdeConfig = KdeConfig()):
    """Return ``(grid_u, grid_v, density)``; ``density[a, b]`` is at (u_a, v_b)."""
    u, v = _check_samples(samples_u), _check_samples(samples_v)
    if u.size != v.size:
        raise DimensionMismatch("samples_u and samples_v must have equal length")
    gu, gv = make_grid(u, cfg), make_grid(v, cfg)
    mass = linear_bin_2d(u, v, gu, gv)
    hu, hv = effective_bandwidth(u, cfg), effective_bandwidth(v, cfg)
    dens = _convolve_axis(_convolve_axis(mass, gu, hu, 0), gv, hv, 1)
    return gu, gv, np.clip(dens, 0.0, None)


def kde_density_direct_1d(samples, points, h) -> np.ndarray:
    """Plain O(N M) kernel sum at ``points``; reference for the fast path."""
    x = np.asarray(samples, dtype=float).ravel()
    z = (np.asarray(points)[:, None] - x[None, :]) / h
    return np.exp(-0.5 * z * z).sum(axis=1) / (x.size * h * np.sqrt(2 * np.pi))


def kde_density_direct_2d(samples_u, samples_v, points_u, points_v, hu, hv=None) -> np.ndarray:
    hv = hu if hv is None else hv
    u = np.asarray(samples_u, dtype=float).ravel()
    v = np.asarray(samples_v, dtype=float).ravel()
    ku = np.exp(-0.5 * ((np.asarray(points_u)[:, None] - u[None, :]) / hu) ** 2)
    kv = np.exp(-0.5 * ((np.asarray(points_v)[:, None] - v[None, :]) / hv) ** 2)
    return ku @ kv.T / (u.size * 2 * np.pi * hu * hv)


def binned_density_direct_1d(masses, grid: Grid, h) -> np.ndarray:
    """Direct kernel sum over binned grid masses (what the FFT accelerates)."""
    pts = grid.points
    k = np.exp(-0.5 * ((pts[:, None] - pts[None, :]) / h) ** 2) / (np.sqrt(2 * np.pi) * h)
    return k @ masses


def binned_density_direct_2d(masses, gu: Grid, gv: Grid, hu, hv=None) -> np.ndarray:
    hv = hu if hv is None else hv
    pu, pv = gu.points, gv.points
    ku = np.exp(-0.5 * ((pu[:, None] - pu[None, :]) / hu) ** 2) / (np.sqrt(2 * np.pi) * hu)
    kv = np.exp(-0.5 * ((pv[:, None] - pv[None, :]) / hv) ** 2) / (np.sqrt(2 * np.pi) * hv)
    return ku @ masses @ kv.T


def _neg_f_log_f(dens, floor):
    f = dens[dens > floor]
    return -float(np.sum(f * np.log(f)))


def kde_entropy_1d(samples, cfg: KdeConfig = KdeConfig()) -> EntropyEstimate:
    grid, dens = kde_density_grid_1d(samples, cfg)
    return EntropyEstimate(_neg_f_log_f(dens, cfg.density_floor) * grid.step, (grid,))


def kde_entropy_2d(samples_u, samples_v, cfg: KdeConfig = KdeConfig()) -> EntropyEstimate:
    gu, gv, dens = kde_density_grid_2d(samples_u, samples_v, cfg)
    value = _neg_f_log_f(dens, cfg.density_floor) * gu.step * gv.step
    return EntropyEstimate(value, (gu, gv))


def pairwise_mi_kde(samples_u, samples_v, cfg: KdeConfig = KdeConfig()) -> float:
    """H(u) + H(v) - H(u, v).  Not clamped at zero."""
    return (kde_entropy_1d(samples_u, cfg).value + kde_entropy_1d(samples_v, cfg).value
            - kde_entropy_2d(samples_u, samples_v, cfg).value)


def dump_density_csv(path, grid: Grid, density):
    """Write ``point,density`` rows for plotting."""
    with open(path, "w") as fh:
        fh.write("point,density\n")
        for p, d in zip(grid.points, density):
            fh.write(f"{p!r},{d!r}\n")


def log_abs_det(w) -> float:
    sign, logdet = np.linalg.slogdet(np.asarray(w, dtype=float))
    if sign == 0 or logdet < np.log(1e-12):
        raise SingularMatrix("demixing matrix is singular (|det W| < 1e-12)")
    return float(logdet)


class KdeContrast:
    """Entropy-based tree contrast on a fixed dataset, with per-component caching.

    One-dimensional entropies are keyed by ``(i, bytes of row i)`` and pair
    entropies by both rows, so changing a single row of W only recomputes
    quantities that involve that component.
    """

    name = "kde"

    def __init__(self, data, cfg: KdeConfig = KdeConfig(), max_cache=20000):
        self.x = as_array(data)
        self.cfg = cfg
        self.max_cache = max_cache
        self._h1 = {}
        self._h2 = {}
        self.evaluations = {"h1": 0, "h2": 0}

    @contextmanager
    def frozen(self, w):
        """No-op: the binned estimate is already continuous in W."""
        yield self

    def _trim(self, cache):
        if len(cache) > self.max_cache:
            cache.clear()

    def entropy1(self, i, row) -> float:
        row = np.ascontiguousarray(row, dtype=float)
        key = (i, row.tobytes())
        val = self._h1.get(key)
        if val is None:
            self.evaluations["h1"] += 1
            val = kde_entropy_1d(self.x @ row, self.cfg).value
            self._trim(self._h1)
            self._h1[key] = val
        return val

    def entropy2(self, i, j, row_i, row_j) -> float:
        if i > j:
            i, j, row_i, row_j = j, i, row_j, row_i
        row_i = np.ascontiguousarray(row_i, dtype=float)
        row_j = np.ascontiguousarray(row_j, dtype=float)
        key = (i, row_i.tobytes(), j, row_j.tobytes())
        val = self._h2.get(key)
        if val is None:
            self.evaluations["h2"] += 1
            val = kde_entropy_2d(self.x @ row_i, self.x @ row_j, self.cfg).value
            self._trim(self._h2)
            self._h2[key] = val
        return val

    def pair_mi(self, w, i, j) -> float:
        return (self.entropy1(i, w[i]) + self.entropy1(j, w[j])
                - self.entropy2(i, j, w[i], w[j]))

    def mi_matrix(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        m = w.shape[0]
        out = np.zeros((m, m))
        for i in range(m):
            for j in range(i + 1, m):
                out[i, j] = out[j, i] = self.pair_mi(w, i, j)
        return out

    def value(self, w, tree: SpanningTree) -> float:
        w = np.asarray(w, dtype=float)
        logdet = log_abs_det(w)
        total = sum(self.entropy1(i, w[i]) for i in range(w.shape[0]))
        total -= sum(self.pair_mi(w, u, v) for u, v in tree.edges)
        return total - logdet


def contrast_JE(w, data, tree: SpanningTree, cfg: KdeConfig = KdeConfig()) -> float:
    """Sum of marginal entropies minus tree-edge mutual informations minus log|det W|."""
    x = as_array(data)
    w = np.asarray(w, dtype=float)
    if w.shape != (x.shape[1], x.shape[1]):
        raise DimensionMismatch(f"W shape {w.shape} does not match m={x.shape[1]}")
    if tree.m != w.shape[0]:
        raise DimensionMismatch("tree and W disagree on m")
    return KdeContrast(x, cfg).value(w, tree)
