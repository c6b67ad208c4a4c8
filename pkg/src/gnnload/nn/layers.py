"""Dense, GCN and SAGE max-pool layers with hand-written reverse passes.

All layers act on a batch of graph snapshots ``H`` of shape (B, n, d) and a
raw weighted adjacency ``A`` (n, n). Gradients are returned for the layer
parameters, the input and the adjacency (the latter feeds the edge-mask
explainer).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

KINDS = ("dense", "gcn", "sage_maxpool")
ACTIVATIONS = ("relu", "identity")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_dim: int
    out_dim: int
    activation: str = "relu"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError("layer dims must be >= 1")

    @property
    def shapes(self) -> dict[str, tuple[int, ...]]:
        d, k = self.in_dim, self.out_dim
        if self.kind == "sage_maxpool":
            return {"W": (2 * d, k), "b": (k,), "W_pool": (d, d), "b_pool": (d,)}
        return {"W": (d, k), "b": (k,)}

    def n_params(self, pool: bool = True) -> int:
        shapes = self.shapes
        if not pool:
            shapes = {k: v for k, v in shapes.items() if not k.endswith("_pool")}
        return int(sum(np.prod(s) for s in shapes.values()))


def init_layer(spec: LayerSpec, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases."""
    params = {}
    for name, shape in spec.shapes.items():
        if len(shape) == 2:
            lim = np.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-lim, lim, size=shape)
        else:
            params[name] = np.zeros(shape)
    return params


def _act(z, activation):
    return np.maximum(z, 0.0) if activation == "relu" else z


def _act_back(dout, z, activation):
    return dout * (z > 0) if activation == "relu" else dout


def _wgrad(H, G):
    """sum over batch and nodes of outer(h, g)."""
    return H.reshape(-1, H.shape[-1]).T @ G.reshape(-1, G.shape[-1])


def check_adjacency(A: np.ndarray) -> None:
    bad = np.nonzero((A > 0).sum(axis=1) == 0)[0]
    if len(bad):
        raise ValueError(
            f"nodes {bad.tolist()} have no neighbours; add self-loops to the graph before message passing"
        )


# ---------------------------------------------------------------------------
# dense
# ---------------------------------------------------------------------------


def dense_forward(H, A, p, spec):
    z = H @ p["W"] + p["b"]
    return _act(z, spec.activation), (H, z)


def dense_backward(dout, cache, A, p, spec):
    H, z = cache
    dz = _act_back(dout, z, spec.activation)
    grads = {"W": _wgrad(H, dz), "b": dz.sum(axis=(0, 1))}
    return grads, dz @ p["W"].T, np.zeros_like(A)


# ---------------------------------------------------------------------------
# GCN: h_i' = act(sum_j a_ij / sqrt(deg_i deg_j) W h_j + b), weighted degrees
# ---------------------------------------------------------------------------


def gcn_norm(A):
    check_adjacency(A)
    deg = A.sum(axis=1)
    return A / np.sqrt(np.outer(deg, deg)), deg


def gcn_forward(H, A, p, spec):
    Ahat, deg = gcn_norm(A)
    M = H @ p["W"]
    z = Ahat @ M + p["b"]
    return _act(z, spec.activation), (H, M, z, Ahat, deg)


def gcn_backward(dout, cache, A, p, spec):
    H, M, z, Ahat, deg = cache
    dz = _act_back(dout, z, spec.activation)
    dM = Ahat.T @ dz
    grads = {"W": _wgrad(H, dM), "b": dz.sum(axis=(0, 1))}
    dH = dM @ p["W"].T
    G = np.tensordot(dz, M, axes=([0, 2], [0, 2]))
    # d Ahat_ij / d A_kl through both the numerator and the weighted degrees
    GA = G * Ahat
    dA = G / np.sqrt(np.outer(deg, deg)) - 0.5 * ((GA.sum(axis=1) + GA.sum(axis=0)) / deg)[:, None]
    return grads, dH, dA


# ---------------------------------------------------------------------------
# SAGE max-pool: h_i' = act(W [h_i || max_j a_ij relu(W_pool h_j + b_pool)] + b)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _maxpool(P, A):
    """Elementwise max of weighted neighbour messages; first maximiser wins ties."""
    B, n, d = P.shape
    agg = np.empty((B, n, d))
    idx = np.zeros((B, n, d), dtype=np.int64)
    for b in range(B):
        for i in range(n):
            for k in range(d):
                best, arg = -np.inf, 0
                for j in range(n):
                    if A[i, j] > 0:
                        m = A[i, j] * P[b, j, k]
                        if m > best:
                            best, arg = m, j
                agg[b, i, k] = best
                idx[b, i, k] = arg
    return agg, idx


@njit(cache=True)
def _maxpool_back(dagg, P, A, idx):
    B, n, d = P.shape
    dP = np.zeros_like(P)
    dA = np.zeros_like(A)
    for b in range(B):
        for i in range(n):
            for k in range(d):
                j = idx[b, i, k]
                g = dagg[b, i, k]
                dP[b, j, k] += A[i, j] * g
                dA[i, j] += P[b, j, k] * g
    return dP, dA


def sage_forward(H, A, p, spec):
    check_adjacency(A)
    zp = H @ p["W_pool"] + p["b_pool"]
    P = np.maximum(zp, 0.0)
    agg, idx = _maxpool(P, np.ascontiguousarray(A, dtype=np.float64))
    C = np.concatenate([H, agg], axis=-1)
    z = C @ p["W"] + p["b"]
    return _act(z, spec.activation), (H, zp, P, idx, C, z)


def sage_backward(dout, cache, A, p, spec):
    H, zp, P, idx, C, z = cache
    d = H.shape[-1]
    dz = _act_back(dout, z, spec.activation)
    grads = {"W": _wgrad(C, dz), "b": dz.sum(axis=(0, 1))}
    dC = dz @ p["W"].T
    dH = dC[..., :d].copy()
    dP, dA = _maxpool_back(np.ascontiguousarray(dC[..., d:]), P, np.ascontiguousarray(A, dtype=np.float64), idx)
    dzp = dP * (zp > 0)
    grads["W_pool"] = _wgrad(H, dzp)
    grads["b_pool"] = dzp.sum(axis=(0, 1))
    dH += dzp @ p["W_pool"].T
    return grads, dH, dA


FORWARD = {"dense": dense_forward, "gcn": gcn_forward, "sage_maxpool": sage_forward}
BACKWARD = {"dense": dense_backward, "gcn": gcn_backward, "sage_maxpool": sage_backward}
