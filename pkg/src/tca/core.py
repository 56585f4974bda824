"""Core data containers, covariance estimation and dataset I/O."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np


class TCAError(Exception):
    """Base class for all errors raised by this package."""


class SingularCovariance(TCAError):
    pass


class SingularMatrix(TCAError):
    pass


class DimensionMismatch(TCAError, ValueError):
    pass


class DegenerateData(TCAError, ValueError):
    pass


class InvalidTree(TCAError, ValueError):
    pass


class DataFormatError(TCAError, ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class Dataset:
    """N observations of an m-dimensional real vector, one per row."""

    samples: np.ndarray

    def __post_init__(self):
        x = np.array(self.samples, dtype=float, copy=True)
        if x.ndim != 2:
            raise DimensionMismatch(f"samples must be 2-D, got shape {x.shape}")
        if x.shape[0] < 2 or x.shape[1] < 2:
            raise DimensionMismatch(f"need N >= 2 and m >= 2, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise DegenerateData("samples contain non-finite values")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def m(self) -> int:
        return self.samples.shape[1]

    def centered(self) -> "Dataset":
        return Dataset(self.samples - self.samples.mean(axis=0))


def as_array(data) -> np.ndarray:
    """Return the sample matrix of a Dataset, or the array itself."""
    if isinstance(data, Dataset):
        return data.samples
    return np.asarray(data, dtype=float)


@dataclass(frozen=True)
class CovarianceMatrix:
    sigma: np.ndarray
    inv_sqrt: np.ndarray
    sqrt: np.ndarray = field(repr=False)

    @classmethod
    def from_sigma(cls, sigma) -> "CovarianceMatrix":
        sigma = np.asarray(sigma, dtype=float)
        sigma = 0.5 * (sigma + sigma.T)
        evals, evecs = np.linalg.eigh(sigma)
        if evals[0] <= 1e-12 * max(evals[-1], 0.0) or evals[-1] <= 0:
            raise SingularCovariance(
                f"covariance is singular (eigenvalue range {evals[0]:.3g} .. {evals[-1]:.3g})")
        inv_sqrt = (evecs / np.sqrt(evals)) @ evecs.T
        sqrt = (evecs * np.sqrt(evals)) @ evecs.T
        return cls(sigma, 0.5 * (inv_sqrt + inv_sqrt.T), 0.5 * (sqrt + sqrt.T))

    @property
    def m(self) -> int:
        return self.sigma.shape[0]


def estimate_covariance(data) -> CovarianceMatrix:
    """Empirical covariance (mean removed, 1/N normalisation) and its
    symmetric inverse square root."""
    x = as_array(data)
    n, m = x.shape
    if n < m + 1:
        raise SingularCovariance(f"N={n} samples cannot give a nonsingular {m}x{m} covariance")
    xc = x - x.mean(axis=0)
    return CovarianceMatrix.from_sigma(xc.T @ xc / n)


def transform_sources(w, data) -> Dataset | np.ndarray:
    """Apply s = W x to every row.  Returns the same container type as ``data``."""
    w = np.asarray(w, dtype=float)
    x = as_array(data)
    if w.ndim != 2 or w.shape[1] != x.shape[1]:
        raise DimensionMismatch(f"W has shape {w.shape}, data has {x.shape[1]} columns")
    s = x @ w.T
    return Dataset(s) if isinstance(data, Dataset) else s


@dataclass(frozen=True)
class SpanningTree:
    """Undirected spanning tree on vertices 0..m-1.

    Edges are stored as sorted ``(u, v)`` pairs with ``u < v``.
    """

    m: int
    edges: tuple

    def __post_init__(self):
        m = int(self.m)
        if m < 1:
            raise InvalidTree("a tree needs at least one vertex")
        edges = []
        for u, v in self.edges:
            u, v = int(u), int(v)
            if u == v or not (0 <= u < m and 0 <= v < m):
                raise InvalidTree(f"invalid edge ({u}, {v}) for m={m}")
            edges.append((min(u, v), max(u, v)))
        edges = tuple(sorted(set(edges)))
        if len(edges) != m - 1:
            raise InvalidTree(f"a spanning tree on {m} vertices has {m - 1} edges, got {len(edges)}")
        parent = list(range(m))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for u, v in edges:
            ru, rv = find(u), find(v)
            if ru == rv:
                raise InvalidTree(f"edge ({u}, {v}) closes a cycle")
            parent[ru] = rv
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "edges", edges)

    @property
    def degree(self) -> np.ndarray:
        d = np.zeros(self.m, dtype=int)
        for u, v in self.edges:
            d[u] += 1
            d[v] += 1
        return d

    def neighbors(self, u: int) -> list:
        return sorted([b for a, b in self.edges if a == u] + [a for a, b in self.edges if b == u])

    def adjacency(self) -> list:
        adj = [[] for _ in range(self.m)]
        for u, v in self.edges:
            adj[u].append(v)
            adj[v].append(u)
        return [sorted(a) for a in adj]

    def leaves(self) -> list:
        return [u for u, d in enumerate(self.degree) if d == 1]

    def relabel(self, perm: Iterable[int]) -> "SpanningTree":
        """Tree with vertex ``u`` renamed to ``perm[u]``."""
        perm = list(perm)
        return SpanningTree(self.m, [(perm[u], perm[v]) for u, v in self.edges])

    def has_edge(self, u: int, v: int) -> bool:
        return (min(u, v), max(u, v)) in self.edges


# --------------------------------------------------------------------------
# Dataset I/O

_MAGIC = b"TCAD"


def load_csv(path, delimiter=",", center=False) -> Dataset:
    """Read one observation per row.  A non-numeric first row is taken as a header."""
    rows = []
    ncol = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = [f.strip() for f in line.split(delimiter)]
            try:
                values = [float(f) for f in fields]
            except ValueError:
                if not rows and lineno == 1:
                    continue
                raise DataFormatError(f"non-numeric field in {fields!r}", lineno) from None
            if ncol is None:
                ncol = len(values)
            elif len(values) != ncol:
                raise DataFormatError(f"expected {ncol} fields, got {len(values)}", lineno)
            if not all(np.isfinite(values)):
                raise DataFormatError("non-finite value", lineno)
            rows.append(values)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    ds = Dataset(np.array(rows))
    return ds.centered() if center else ds


def save_csv(path, data, delimiter=","):
    x = as_array(data)
    with open(path, "w") as fh:
        for row in x:
            fh.write(delimiter.join(repr(float(v)) for v in row))
            fh.write("\n")


def save_binary(path, data):
    """Column-major float64 dump: b"TCAD", u32 N, u32 m, payload (little endian)."""
    x = as_array(data)
    n, m = x.shape
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", n, m))
        fh.write(np.asarray(x, dtype="<f8").tobytes(order="F"))


def load_binary(path, center=False) -> Dataset:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise DataFormatError(f"{path}: bad magic bytes {raw[:4]!r}")
    n, m = struct.unpack("<II", raw[4:12])
    payload = raw[12:]
    if len(payload) != 8 * n * m:
        raise DataFormatError(f"{path}: expected {8 * n * m} payload bytes, found {len(payload)}")
    x = np.frombuffer(payload, dtype="<f8").reshape((n, m), order="F")
    ds = Dataset(x)
    return ds.centered() if center else ds


def load_dataset(path, delimiter=",", center=False) -> Dataset:
    """Dispatch on content: binary dumps start with the magic bytes."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == _MAGIC:
        return load_binary(path, center=center)
    return load_csv(path, delimiter=delimiter, center=center)
