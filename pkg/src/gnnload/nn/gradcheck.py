"""Central finite-difference checks for the hand-written reverse passes."""
from __future__ import annotations

import numpy as np

from ..graphs.weighted import WeightedGraph
from .layers import FORWARD
from .model import GnnModel, build_model, loss_and_gradients


def kink_margin(model: GnnModel, X, adj=None) -> float:
    """Smallest distance of any ReLU pre-activation from 0 or any max-pool winner from
    its runner-up. Finite differences are only meaningful when this exceeds the step."""
    A = model.graph.W if adj is None else adj
    H = np.asarray(X, dtype=float)
    margin = np.inf
    for spec, p in zip(model.specs, model.params):
        out, cache = FORWARD[spec.kind](H, A, p, spec)
        z = cache[-1]
        if spec.activation == "relu":
            margin = min(margin, np.abs(z).min())
        if spec.kind == "sage_maxpool":
            zp, P = cache[1], cache[2]
            margin = min(margin, np.abs(zp).min())
            for i in range(A.shape[0]):
                nb = np.nonzero(A[i] > 0)[0]
                if len(nb) < 2:
                    continue
                msg = np.sort(A[i, nb][None, :, None] * P[:, nb, :], axis=1)
                top, second = msg[:, -1, :], msg[:, -2, :]
                live = top > 0
                if live.any():
                    margin = min(margin, (top - second)[live].min())
        H = out
    return float(margin)


def finite_difference(model: GnnModel, X, Y, h: float = 1e-5, adj=None):
    """Central differences of the loss for every parameter entry (and adjacency entry)."""
    out = []
    for p in model.params:
        fd = {}
        for name, v in p.items():
            g = np.zeros_like(v)
            for ix in np.ndindex(v.shape):
                old = v[ix]
                v[ix] = old + h
                lp = loss_and_gradients(model, X, Y, adj)[0]
                v[ix] = old - h
                lm = loss_and_gradients(model, X, Y, adj)[0]
                v[ix] = old
                g[ix] = (lp - lm) / (2 * h)
            fd[name] = g
        out.append(fd)
    return out


def relative_error(a, b) -> float:
    """Norm-wise relative error ``|a - b| / max(|a|, |b|)`` (0 when both vanish)."""
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if denom == 0 else float(np.linalg.norm(a - b) / denom)


def random_check_case(kind: str, seed: int, n: int = 4, d: int = 3, hidden: int = 4, n_layers: int = 3,
                      batch: int = 5, min_margin: float = 1e-3):
    """Seeded random graph, model and batch, redrawn until no kink lies near the FD stencil."""
    rng = np.random.default_rng(seed)
    W = rng.uniform(0.2, 1.0, (n, n)) * (rng.uniform(size=(n, n)) < 0.6)
    W = np.triu(W, 1)
    W = W + W.T
    np.fill_diagonal(W, 1.0)
    model = build_model(kind, n_layers, hidden, d, WeightedGraph(W, True), int(rng.integers(1 << 31)))
    for p in model.params:
        for k in p:
            p[k] = p[k] + rng.normal(0.0, 0.3, p[k].shape)
    for _ in range(1000):
        X = rng.normal(size=(batch, n, d))
        if kink_margin(model, X) > min_margin:
            break
    else:
        raise RuntimeError("could not draw a kink-free batch")
    Y = rng.normal(size=(batch, n))
    return model, X, Y


def check_gradients(model: GnnModel, X, Y, h: float = 1e-5) -> dict[str, float]:
    """Relative error per parameter tensor, keyed ``layer<k>.<name>``."""
    _, grads, _ = loss_and_gradients(model, X, Y)
    fd = finite_difference(model, X, Y, h)
    return {
        f"layer{k}.{name}": relative_error(grads[k][name], fd[k][name])
        for k in range(len(grads))
        for name in grads[k]
    }
