"""Edge-mask explanations of trained GNNs and accumulated local effect (ALE) curves.

The mask follows the mutual-information explainer adapted to regression: the
masked graph ``W * sigmoid(M)`` should reproduce the full-graph prediction
while using few, nearly binary edges. Only inter-region edges are masked;
self-loops stay as they are, so every node keeps hearing itself.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core_data import RegionalPanel
from .nn.model import GnnModel, _batch, _run, backward, predict
from .nn.train import panel_arrays


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def binary_entropy(s):
    s = np.clip(s, 1e-12, 1 - 1e-12)
    return -(s * np.log(s) + (1 - s) * np.log(1 - s))


@dataclass
class EdgeMask:
    logits: np.ndarray  # (n, n) symmetric; only entries on masked edges matter
    edges: np.ndarray  # (E, 2) upper-triangle index pairs that carry a mask
    W: np.ndarray
    history: np.ndarray

    @property
    def values(self) -> np.ndarray:
        """sigmoid(M) on masked edges, 0 elsewhere (symmetric)."""
        out = np.zeros_like(self.W)
        i, j = self.edges.T
        out[i, j] = out[j, i] = sigmoid(self.logits[i, j])
        return out

    @property
    def masked_graph(self) -> np.ndarray:
        return masked_adjacency(self.W, self.edges, self.logits[tuple(self.edges.T)])


def masked_adjacency(W, edges, m) -> np.ndarray:
    A = np.array(W, dtype=float)
    i, j = edges.T
    s = sigmoid(m)
    A[i, j] = W[i, j] * s
    A[j, i] = W[j, i] * s
    return A


def mask_edges(W) -> np.ndarray:
    n = len(W)
    iu, ju = np.triu_indices(n, 1)
    keep = W[iu, ju] > 0
    return np.stack([iu[keep], ju[keep]], axis=1)


def learn_edge_mask(
    model: GnnModel,
    X,
    size_coef: float = 0.005,
    entropy_coef: float = 1.0,
    steps: int = 300,
    lr: float = 0.01,
    nodes=None,
) -> EdgeMask:
    """Adam on mask logits (init 0) for fidelity + size + element-entropy.

    Fidelity is measured on all nodes, or only on ``nodes`` when explaining
    selected regional predictions.
    """
    X, _ = _batch(model, X)
    W = np.asarray(model.graph.W, dtype=float)
    edges = mask_edges(W)
    if len(edges) == 0:
        raise ValueError("graph has no inter-region edges to explain")
    target, _ = _run(model, X, W)
    keep = np.zeros((1, W.shape[0], 1))
    keep[:, list(range(W.shape[0])) if nodes is None else list(nodes)] = 1.0
    m = np.zeros(len(edges))
    mom, vel = np.zeros_like(m), np.zeros_like(m)
    b1, b2, eps = 0.9, 0.999, 1e-8
    i, j = edges.T
    hist = []
    for t in range(1, steps + 1):
        A = masked_adjacency(W, edges, m)
        out, caches = _run(model, X, A)
        r = (out - target) * keep
        s = sigmoid(m)
        fid = float(np.sum(r**2) / (keep.sum() * len(X)))
        ent = binary_entropy(s)
        obj = fid + size_coef * s.sum() + entropy_coef * ent.mean()
        if not np.isfinite(obj):
            raise FloatingPointError(f"edge-mask objective became {obj} at step {t}; lower lr")
        hist.append(obj)
        _, _, dA = backward(model, caches, 2.0 * r / (keep.sum() * len(X)), A)
        ds = (dA[i, j] + dA[j, i]) * W[i, j] + size_coef
        # d entropy / d s = log((1 - s) / s)
        sc = np.clip(s, 1e-12, 1 - 1e-12)
        ds = ds + entropy_coef * np.log((1 - sc) / sc) / len(m)
        g = ds * s * (1 - s)
        mom = b1 * mom + (1 - b1) * g
        vel = b2 * vel + (1 - b2) * g**2
        m = m - lr * (mom / (1 - b1**t)) / (np.sqrt(vel / (1 - b2**t)) + eps)
    A = masked_adjacency(W, edges, m)
    out, _ = _run(model, X, A)
    s = sigmoid(m)
    hist.append(float(np.sum(((out - target) * keep) ** 2) / (keep.sum() * len(X)) + size_coef * s.sum() + entropy_coef * binary_entropy(s).mean()))
    logits = np.zeros_like(W)
    logits[i, j] = logits[j, i] = m
    return EdgeMask(logits, edges, W, np.asarray(hist))


def importance_from_masks(masks: list[EdgeMask]) -> np.ndarray:
    """Mean masked inter-region graph, max-normalised to [0, 1], zero diagonal."""
    acc = np.mean([mk.masked_graph for mk in masks], axis=0)
    np.fill_diagonal(acc, 0.0)
    top = acc.max()
    return acc / top if top > 0 else acc


def day_indices(panel: RegionalPanel, date) -> np.ndarray:
    day = np.datetime64(str(date), "D")
    idx = np.nonzero(panel.timestamps.astype("datetime64[D]") == day)[0]
    if len(idx) != 48:
        raise ValueError(f"{day} has {len(idx)} half-hours in the panel, need 48")
    return idx


def explain_day(model: GnnModel, panel: RegionalPanel, date, **kwargs) -> np.ndarray:
    """One mask per half-hour of ``date``; their masked graphs averaged and max-normalised."""
    idx = day_indices(panel, date)
    X, _ = panel_arrays(panel, model.channels or None)
    masks = [learn_edge_mask(model, X[t : t + 1], **kwargs) for t in idx]
    return importance_from_masks(masks)


# ---------------------------------------------------------------------------
# ALE
# ---------------------------------------------------------------------------


@dataclass
class AleCurve:
    feature: str
    edges: np.ndarray  # (n_bins + 1,)
    effect: np.ndarray  # centred accumulated effect at each edge
    counts: np.ndarray  # (n_bins,)
    center: float

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_left", "bin_right", "effect", "count"])
            for k in range(len(self.counts)):
                w.writerow([f"{self.edges[k]:.17g}", f"{self.edges[k + 1]:.17g}", f"{self.effect[k + 1]:.17g}",
                            int(self.counts[k])])

    def __call__(self, x) -> np.ndarray:
        return np.interp(x, self.edges, self.effect)


def ale_from_function(f: Callable[[np.ndarray], np.ndarray], X: np.ndarray, col, n_bins: int = 20,
                      feature: str = "") -> AleCurve:
    """First-order ALE of ``f`` (rows of ``X`` to outputs) in column ``col``.

    ``col`` indexes the last axes of ``X`` (an int, or a tuple for
    multi-dimensional rows); only that entry is moved to the bin edges.
    """
    if n_bins < 2:
        raise ValueError("need n_bins >= 2")
    X = np.asarray(X, dtype=float)
    col = (col,) if np.isscalar(col) else tuple(col)
    sel = (slice(None),) + col
    x = X[sel]
    if np.ptp(x) == 0:
        raise ValueError(f"feature {feature or col} is constant")
    edges = np.unique(np.quantile(x, np.linspace(0, 1, n_bins + 1)))
    nb = len(edges) - 1
    which = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, nb - 1)
    lo, hi = X.copy(), X.copy()
    lo[sel] = edges[which]
    hi[sel] = edges[which + 1]
    diff = np.asarray(f(hi), dtype=float) - np.asarray(f(lo), dtype=float)
    counts = np.bincount(which, minlength=nb).astype(float)
    sums = np.bincount(which, weights=diff, minlength=nb)
    local = np.divide(sums, counts, out=np.zeros(nb), where=counts > 0)
    acc = np.concatenate([[0.0], np.cumsum(local)])
    center = float(np.sum(counts * 0.5 * (acc[:-1] + acc[1:])) / counts.sum())
    return AleCurve(feature, edges, acc - center, counts, center)


def ale_curve(model: GnnModel, panel: RegionalPanel, feature: str, node: int, n_bins: int = 20,
              idx=None) -> AleCurve:
    """ALE of ``feature`` at ``node`` on that node's own prediction (scaled units)."""
    chans = list(model.channels or panel.channels)
    X, _ = panel_arrays(panel, chans)
    if idx is not None:
        X = X[idx]
    k = chans.index(feature)

    def f(Z):
        return predict(model, Z)[:, node]

    return ale_from_function(f, X, (node, k), n_bins, feature)


def write_importance(matrix: np.ndarray, region_ids, dense_path, edge_path=None) -> None:
    from .graphs.weighted import WeightedGraph, write_dense_csv, write_edge_list

    g = WeightedGraph(matrix, False, region_ids, "importance")
    write_dense_csv(g, dense_path)
    if edge_path is not None:
        write_edge_list(g, edge_path)
