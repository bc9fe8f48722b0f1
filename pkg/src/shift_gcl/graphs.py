"""Graph container and the symmetric-normalized propagation operator.

Graphs are undirected, unweighted, and immutable once built.  Self-loops
are never stored; ``normalized_adjacency`` injects them via (A + I) so
edge-drop augmentation cannot double-count them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import tape
from .tape import ShapeError, Tensor


@dataclass(frozen=True, eq=False)
class Graph:
    n: int
    edges: np.ndarray      # (m, 2) int64, canonical: u < v, sorted, unique
    features: np.ndarray   # (n, d) float64

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    """CSR storage of Â = D̃^(-1/2) (A + I) D̃^(-1/2)."""

    n: int
    matrix: sp.csr_matrix = field(repr=False)

    @property
    def row_offsets(self) -> np.ndarray:
        return self.matrix.indptr

    @property
    def col_indices(self) -> np.ndarray:
        return self.matrix.indices

    @property
    def values(self) -> np.ndarray:
        return self.matrix.data


def build_graph(n: int, edges, features) -> Graph:
    """Canonicalize an edge list (u<v, sorted, unique, self-loops dropped)."""
    if n <= 0:
        raise ValueError(f"node count must be positive, got {n}")
    feats = np.ascontiguousarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] != n:
        raise ShapeError("build_graph", (feats.shape, (n, "d")))

    arr = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
    if arr.size:
        if arr.min() < 0 or arr.max() >= n:
            raise ValueError(f"edge endpoint out of range [0, {n})")
        arr = arr[arr[:, 0] != arr[:, 1]]
        lo = arr.min(axis=1)
        hi = arr.max(axis=1)
        arr = np.unique(np.stack([lo, hi], axis=1), axis=0)
    else:
        arr = arr.reshape(0, 2)
    return Graph(n=n, edges=arr, features=feats)


def normalized_adjacency(g: Graph) -> NormalizedAdjacency:
    n = g.n
    u, v = g.edges[:, 0], g.edges[:, 1]
    rows = np.concatenate([u, v, np.arange(n)])
    cols = np.concatenate([v, u, np.arange(n)])
    deg = np.ones(n)
    np.add.at(deg, u, 1.0)
    np.add.at(deg, v, 1.0)
    inv_sqrt = 1.0 / np.sqrt(deg)
    vals = inv_sqrt[rows] * inv_sqrt[cols]
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    mat.sort_indices()
    return NormalizedAdjacency(n=n, matrix=mat)


def mean_neighbor_matrix(g: Graph) -> sp.csr_matrix:
    """Row-stochastic D^(-1) A; rows of isolated nodes are all zero."""
    n = g.n
    u, v = g.edges[:, 0], g.edges[:, 1]
    rows = np.concatenate([u, v])
    cols = np.concatenate([v, u])
    deg = np.zeros(n)
    np.add.at(deg, rows, 1.0)
    inv = np.divide(1.0, deg, out=np.zeros(n), where=deg > 0)
    mat = sp.csr_matrix((inv[rows], (rows, cols)), shape=(n, n))
    mat.sort_indices()
    return mat


def _spmm_fwd(vals, attrs):
    (x,) = vals
    m = attrs["matrix"]
    if m.shape[1] != x.shape[0]:
        raise ShapeError("spmm", (m.shape, x.shape))
    return np.asarray(m @ x), None


def _spmm_vjp(g, ctx, vals, attrs):
    m = attrs["matrix"]
    return [np.asarray(m.T @ g)]


tape.register_op("spmm", _spmm_fwd, _spmm_vjp)


def spmm(adj, x) -> Tensor:
    """Sparse-dense product, differentiable with respect to x."""
    mat = adj.matrix if isinstance(adj, NormalizedAdjacency) else adj
    return tape.forward("spmm", [x], {"matrix": mat})
