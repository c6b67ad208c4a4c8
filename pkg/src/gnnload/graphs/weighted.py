"""Weighted region graphs: Gaussian kernels, minimal-connectivity thresholds, fusion, I/O."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from ..core_data import pairwise_haversine


@dataclass(frozen=True, eq=False)
class WeightedGraph:
    """Symmetric, non-negative, finite weight matrix over ``n`` regions.

    ``self_loops`` records the diagonal convention: kernel graphs carry a unit
    diagonal, learned Laplacian graphs a zero one.
    """

    W: np.ndarray
    self_loops: bool
    region_ids: tuple[str, ...] | None = None
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        W = np.array(self.W, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise ValueError(f"weight matrix must be square, got {W.shape}")
        if not np.all(np.isfinite(W)):
            raise ValueError("weight matrix has non-finite entries")
        if np.any(W < 0):
            raise ValueError("weight matrix has negative entries")
        if not np.allclose(W, W.T, rtol=0, atol=1e-12 * max(1.0, np.abs(W).max())):
            raise ValueError("weight matrix is not symmetric")
        W = 0.5 * (W + W.T)
        W.setflags(write=False)
        object.__setattr__(self, "W", W)
        if self.region_ids is not None:
            ids = tuple(str(r) for r in self.region_ids)
            if len(ids) != len(W):
                raise ValueError("region_ids length does not match matrix size")
            object.__setattr__(self, "region_ids", ids)

    @property
    def n(self) -> int:
        return len(self.W)

    def normalized(self) -> WeightedGraph:
        """Scale so the largest off-diagonal weight is 1 (diagonal kept for kernel graphs)."""
        off = self.W - np.diag(np.diag(self.W))
        top = off.max() if self.n > 1 else 0.0
        if top <= 0:
            return self
        W = self.W / top
        if self.self_loops:
            np.fill_diagonal(W, np.diag(self.W))
        return replace(self, W=W)

    def permuted(self, perm) -> WeightedGraph:
        perm = np.asarray(perm)
        ids = None if self.region_ids is None else tuple(self.region_ids[p] for p in perm)
        return replace(self, W=self.W[np.ix_(perm, perm)], region_ids=ids)


def identity_graph(n: int, region_ids=None) -> WeightedGraph:
    """Purely autoregressive structure: every node only hears itself."""
    return WeightedGraph(np.eye(n), True, region_ids, "identity")


def fuse_graphs(graphs: Sequence[WeightedGraph], weights: Sequence[float], name: str = "fused") -> WeightedGraph:
    """Entrywise convex combination of graphs over the same node set."""
    weights = np.asarray(weights, dtype=float)
    if len(graphs) == 0 or len(graphs) != len(weights):
        raise ValueError("need one weight per graph")
    if np.any(weights < 0) or not np.isclose(weights.sum(), 1.0, atol=1e-12):
        raise ValueError(f"fusion weights must be non-negative and sum to 1, got {weights}")
    sizes = {g.n for g in graphs}
    if len(sizes) != 1:
        raise ValueError(f"graphs have mismatched node counts {sorted(sizes)}")
    W = sum(w * g.W for w, g in zip(weights, graphs))
    loops = any(g.self_loops for g in graphs)
    return WeightedGraph(W, loops, graphs[0].region_ids, name, {"weights": weights.tolist()})


# ---------------------------------------------------------------------------
# kernels and thresholds
# ---------------------------------------------------------------------------


def is_connected(adjacency: np.ndarray) -> bool:
    n_comp, _ = connected_components(np.asarray(adjacency) > 0, directed=False)
    return n_comp == 1


def minimal_connectivity_threshold(K: np.ndarray) -> float:
    """Largest lambda such that ``{K_ij >= lambda}`` is connected.

    Equals the smallest edge weight on a maximum spanning tree (Kruskal on
    decreasing weights with union-find).
    """
    n = len(K)
    if n < 2:
        return 1.0
    iu, ju = np.triu_indices(n, 1)
    order = np.argsort(-K[iu, ju], kind="stable")
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    joined, lam = 0, 1.0
    for e in order:
        ra, rb = find(iu[e]), find(ju[e])
        if ra != rb:
            parent[ra] = rb
            joined += 1
            lam = float(K[iu[e], ju[e]])
            if joined == n - 1:
                break
    return lam


def _median_bandwidth(D: np.ndarray) -> float:
    iu = np.triu_indices(len(D), 1)
    return float(np.median(D[iu]))


def gaussian_threshold_graph(D: np.ndarray, lam: float | None = None, region_ids=None, name="") -> WeightedGraph:
    """``exp(-d^2/sigma^2)`` with median bandwidth, zeroed below ``lam``.

    Without ``lam`` the minimal-connectivity threshold is used.
    """
    D = np.asarray(D, dtype=float)
    sigma = _median_bandwidth(D)
    if sigma <= 0:
        raise ValueError("median pairwise distance is zero; bandwidth undefined")
    K = np.exp(-(D**2) / sigma**2)
    auto = lam is None
    if auto:
        lam = minimal_connectivity_threshold(K)
    W = np.where(K >= lam, K, 0.0)
    np.fill_diagonal(W, 1.0)
    meta = {"sigma": sigma, "lambda": float(lam), "auto_lambda": auto}
    return WeightedGraph(W, True, region_ids, name, meta)


def geo_kernel_graph(coords, lam: float | None = None, region_ids=None) -> WeightedGraph:
    """Gaussian kernel on great-circle distances between region reference points."""
    coords = np.asarray(coords, dtype=float)
    if len(coords) < 2:
        raise ValueError("need at least two regions")
    D = pairwise_haversine(coords)
    if np.all(D == 0):
        raise ValueError("all coordinates coincide (sigma = 0)")
    g = gaussian_threshold_graph(D, lam, region_ids, "space")
    g.meta["distances_km"] = D
    return g


def distances_to_graph(D, region_ids=None, name="") -> WeightedGraph:
    """Turn a pairwise distance matrix into a graph with the geodesic recipe."""
    D = np.asarray(D, dtype=float)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ValueError("distance matrix must be square")
    if np.any(D < 0) or not np.allclose(D, D.T) or np.any(np.diag(D) != 0):
        raise ValueError("distance matrix must be symmetric, non-negative, zero-diagonal")
    if np.all(D == 0):
        raise ValueError("all distances are zero")
    return gaussian_threshold_graph(D, None, region_ids, name)


# ---------------------------------------------------------------------------
# serialisation
# ---------------------------------------------------------------------------


def _ids(graph: WeightedGraph) -> tuple[str, ...]:
    return graph.region_ids or tuple(str(i) for i in range(graph.n))


def write_dense_csv(graph: WeightedGraph, path) -> None:
    ids = _ids(graph)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["Region", *ids])
        for rid, row in zip(ids, graph.W):
            w.writerow([rid, *(f"{v:.17g}" for v in row)])


def read_dense_csv(path, name: str = "") -> WeightedGraph:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    ids = rows[0][1:]
    W = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return WeightedGraph(W, bool(np.any(np.diag(W) > 0)), ids, name or Path(path).stem)


def write_edge_list(graph: WeightedGraph, path) -> None:
    ids = _ids(graph)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["src", "dst", "weight"])
        for i in range(graph.n):
            for j in range(i, graph.n):
                if graph.W[i, j] != 0:
                    w.writerow([ids[i], ids[j], f"{graph.W[i, j]:.17g}"])


def read_edge_list(path, region_ids: Sequence[str], name: str = "") -> WeightedGraph:
    index = {str(r): k for k, r in enumerate(region_ids)}
    W = np.zeros((len(index), len(index)))
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            i, j = index[row["src"]], index[row["dst"]]
            W[i, j] = W[j, i] = float(row["weight"])
    return WeightedGraph(W, bool(np.any(np.diag(W) > 0)), tuple(region_ids), name or Path(path).stem)
