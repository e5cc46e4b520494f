"""Sparse nonnegative affinity graph over the image set.

Edges connect each image to its k nearest neighbors by embedding inner
product, weighted by max(0, f_i . f_j), then symmetrized by union.  For
unit-norm rows all weights live in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .state import FeatureMatrix


@dataclass(frozen=True)
class AffinityGraph:
    """Symmetric CSR affinity matrix with per-row neighbor access."""

    matrix: sp.csr_matrix
    knn: int

    @property
    def num_nodes(self) -> int:
        return self.matrix.shape[0]

    @property
    def num_edges(self) -> int:
        return self.matrix.nnz

    def neighbors(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """(column indices, weights) of the stored edges of row ``i``."""
        lo, hi = self.matrix.indptr[i], self.matrix.indptr[i + 1]
        return self.matrix.indices[lo:hi], self.matrix.data[lo:hi]

    def edge_set(self) -> set[tuple[int, int]]:
        coo = self.matrix.tocoo()
        return {(int(i), int(j)) for i, j in zip(coo.row, coo.col)}

    def propagate(self, z: np.ndarray) -> np.ndarray:
        """W @ z; the neighbor sum used by the decoupled assignment update."""
        return self.matrix @ z

    @staticmethod
    def empty(num_nodes: int) -> "AffinityGraph":
        return AffinityGraph(sp.csr_matrix((num_nodes, num_nodes)), knn=0)


def build_graph(
    features: FeatureMatrix,
    knn: int = 3,
    include_self: bool = False,
    block_size: int = 2048,
) -> AffinityGraph:
    """Exact top-``knn`` inner-product graph, clamped at zero, union-symmetrized.

    Neighbor selection happens before clamping, so an all-negative row still
    gets edges (stored with weight 0).  ``include_self`` additionally stores
    the diagonal f_i . f_i; with the dense setting knn = N-1 this reproduces
    max(0, F F^T) with (or without) its diagonal exactly.  Work is blocked
    over rows (memory O(block_size * N)); the edge structure is independent
    of the block size, weights only up to BLAS accumulation order.
    """
    f = features.data
    n = f.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 rows to build a graph, got {n}")
    if not (1 <= knn < n):
        raise ValueError(f"knn must be in [1, {n - 1}], got {knn}")

    nbr_idx = np.empty((n, knn), dtype=np.int64)
    nbr_sim = np.empty((n, knn), dtype=np.float64)
    for start in range(0, n, block_size):
        stop = min(start + block_size, n)
        sims = f[start:stop] @ f.T
        rows = np.arange(start, stop)
        sims[rows - start, rows] = -np.inf  # self excluded from selection
        part = np.argpartition(-sims, knn - 1, axis=1)[:, :knn]
        # canonical order inside the neighborhood: similarity desc, index asc
        part_sims = np.take_along_axis(sims, part, axis=1)
        order = np.lexsort((part, -part_sims), axis=1)
        nbr_idx[start:stop] = np.take_along_axis(part, order, axis=1)
        nbr_sim[start:stop] = np.take_along_axis(part_sims, order, axis=1)

    weights = np.maximum(nbr_sim, 0.0)
    rows = np.repeat(np.arange(n, dtype=np.int64), knn)
    cols = nbr_idx.ravel()
    vals = weights.ravel()

    # union symmetrization: the reverse of every selected edge carries the
    # identical weight because the inner product is symmetric
    rows_all = np.concatenate([rows, cols])
    cols_all = np.concatenate([cols, rows])
    vals_all = np.concatenate([vals, vals])
    if include_self:
        diag = np.maximum(np.einsum("ij,ij->i", f, f), 0.0)
        rows_all = np.concatenate([rows_all, np.arange(n, dtype=np.int64)])
        cols_all = np.concatenate([cols_all, np.arange(n, dtype=np.int64)])
        vals_all = np.concatenate([vals_all, diag])

    keys = rows_all * n + cols_all
    order = np.argsort(keys, kind="stable")
    keys, rows_all, cols_all, vals_all = (
        keys[order], rows_all[order], cols_all[order], vals_all[order])
    keep = np.ones(len(keys), dtype=bool)
    keep[1:] = keys[1:] != keys[:-1]
    rows_all, cols_all, vals_all = rows_all[keep], cols_all[keep], vals_all[keep]

    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, rows_all + 1, 1)
    indptr = np.cumsum(indptr)
    matrix = sp.csr_matrix((vals_all, cols_all, indptr), shape=(n, n))
    return AffinityGraph(matrix=matrix, knn=knn)


def save_graph(graph: AffinityGraph, path) -> None:
    """Debug dump: adjacency as JSON, one neighbor list per node."""
    import json

    doc = {
        "num_nodes": graph.num_nodes,
        "knn": graph.knn,
        "neighbors": [
            [[int(j), float(w)] for j, w in zip(*graph.neighbors(i))]
            for i in range(graph.num_nodes)
        ],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)
        f.write("\n")


def check_graph(graph: AffinityGraph) -> list[str]:
    """Structural invariants: nonnegative weights, no unrequested
    self-loops beyond the diagonal option, and exact symmetry."""
    out: list[str] = []
    m = graph.matrix
    if m.nnz and m.data.min() < 0:
        out.append(f"negative weight {m.data.min()}")
    diff = (m - m.T).tocoo()
    if diff.nnz and np.max(np.abs(diff.data)) > 0:
        out.append("matrix not symmetric")
    edges = graph.edge_set()
    for i, j in edges:
        if (j, i) not in edges:
            out.append(f"edge ({i},{j}) has no mirror")
            break
    return out
