"""Layer stacks over a fixed region graph, per-node MSE with exact gradients, checkpoints."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from ..core_data import ScalingSpec
from ..graphs.weighted import WeightedGraph
from .layers import BACKWARD, FORWARD, LayerSpec, check_adjacency, init_layer

CHECKPOINT_TAG = "gnnload-checkpoint/1"


@dataclass(eq=False)
class GnnModel:
    specs: tuple[LayerSpec, ...]
    params: list[dict[str, np.ndarray]]
    graph: WeightedGraph
    hidden: int
    channels: tuple[str, ...] = ()
    scaling: ScalingSpec | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.specs = tuple(self.specs)
        if not self.specs:
            raise ValueError("model needs at least one layer")
        last = self.specs[-1]
        if last.out_dim != 1 or last.activation != "identity":
            raise ValueError("last layer must have out_dim 1 and identity activation")
        for a, b in zip(self.specs, self.specs[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError(f"layer dims do not chain: {a.out_dim} -> {b.in_dim}")
        if len(self.params) != len(self.specs):
            raise ValueError("one parameter dict per layer expected")
        for spec, p in zip(self.specs, self.params):
            for name, shape in spec.shapes.items():
                if name not in p or p[name].shape != shape:
                    raise ValueError(f"{spec.kind} parameter {name} must have shape {shape}")

    @property
    def kind(self) -> str:
        graph_kinds = [s.kind for s in self.specs if s.kind != "dense"]
        return graph_kinds[0] if graph_kinds else "dense"

    @property
    def in_dim(self) -> int:
        return self.specs[0].in_dim

    def n_params(self, pool: bool = True) -> int:
        return sum(s.n_params(pool) for s in self.specs)

    def copy(self) -> GnnModel:
        return replace(self, params=[{k: v.copy() for k, v in p.items()} for p in self.params])


def with_self_loops(graph: WeightedGraph) -> WeightedGraph:
    """Give a loop-free graph self-loops weighted by its mean positive edge weight."""
    if graph.self_loops:
        return graph
    W = np.array(graph.W)
    pos = W[W > 0]
    np.fill_diagonal(W, pos.mean() if len(pos) else 1.0)
    return replace(graph, W=W, self_loops=True, name=graph.name, meta={**graph.meta, "added_self_loops": True})


def build_model(
    kind: str,
    n_layers: int,
    hidden: int,
    in_dim: int,
    graph: WeightedGraph,
    seed: int = 0,
    channels: Sequence[str] = (),
    scaling: ScalingSpec | None = None,
) -> GnnModel:
    """``n_layers`` layers of one kind: in_dim -> hidden -> ... -> 1, ReLU except at the output."""
    if n_layers < 1:
        raise ValueError("n_layers must be >= 1")
    dims = [in_dim] + [hidden] * (n_layers - 1) + [1]
    specs = [
        LayerSpec(kind, dims[i], dims[i + 1], "relu" if i < n_layers - 1 else "identity") for i in range(n_layers)
    ]
    rng = np.random.default_rng(seed)
    params = [init_layer(s, rng) for s in specs]
    return GnnModel(tuple(specs), params, graph, hidden, tuple(channels), scaling, {"seed": seed})


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


def _batch(model: GnnModel, X) -> tuple[np.ndarray, bool]:
    X = np.asarray(X, dtype=float)
    single = X.ndim == 2
    if single:
        X = X[None]
    if X.ndim != 3 or X.shape[1] != model.graph.n or X.shape[2] != model.in_dim:
        raise ValueError(f"expected input (B, {model.graph.n}, {model.in_dim}) or ({model.graph.n}, {model.in_dim}), got {X.shape}")
    return X, single


def _run(model, X, A):
    caches = []
    H = X
    for spec, p in zip(model.specs, model.params):
        H, cache = FORWARD[spec.kind](H, A, p, spec)
        caches.append(cache)
    return H, caches


def model_forward(model: GnnModel, X, adj=None) -> np.ndarray:
    """Predictions of shape (n, 1) for one snapshot, or (B, n, 1) for a batch."""
    X, single = _batch(model, X)
    A = model.graph.W if adj is None else np.asarray(adj, dtype=float)
    out, _ = _run(model, X, A)
    return out[0] if single else out


def predict(model: GnnModel, X, chunk: int = 2048) -> np.ndarray:
    """(B, n) predictions, evaluated in chunks to bound memory."""
    X, _ = _batch(model, X)
    return np.concatenate([model_forward(model, X[s : s + chunk])[..., 0] for s in range(0, len(X), chunk)])


def backward(model: GnnModel, caches, dout, A):
    grads = [None] * len(model.specs)
    dA = np.zeros_like(A)
    g = dout
    for k in range(len(model.specs) - 1, -1, -1):
        spec = model.specs[k]
        grads[k], g, dAk = BACKWARD[spec.kind](g, caches[k], A, model.params[k], spec)
        dA += dAk
    return grads, g, dA


def loss_and_gradients(model: GnnModel, X, Y, adj=None):
    """Mean over (timestep, node) of squared scaled residuals and its exact gradients.

    Returns ``(loss, grads, dA)``: one gradient dict per layer and the gradient
    with respect to the adjacency actually used.
    """
    X, _ = _batch(model, X)
    Y = np.asarray(Y, dtype=float).reshape(X.shape[0], X.shape[1])
    A = model.graph.W if adj is None else np.asarray(adj, dtype=float)
    out, caches = _run(model, X, A)
    r = out[..., 0] - Y
    loss = float(np.mean(r**2))
    dout = (2.0 / r.size) * r[..., None]
    grads, _, dA = backward(model, caches, dout, A)
    return loss, grads, dA


def evaluate_loss(model: GnnModel, X, Y, chunk: int = 2048) -> float:
    yhat = predict(model, X, chunk)
    return float(np.mean((yhat - np.asarray(Y)) ** 2))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def _enc(a) -> dict:
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "data": " ".join(f"{v:.17g}" for v in a.ravel())}


def _dec(d) -> np.ndarray:
    vals = np.array([float(v) for v in d["data"].split()]) if d["data"] else np.zeros(0)
    return vals.reshape(d["shape"])


def graph_digest(graph: WeightedGraph) -> str:
    return hashlib.sha256(np.ascontiguousarray(graph.W).tobytes()).hexdigest()[:16]


def checkpoint_dict(model: GnnModel) -> dict:
    out = {
        "format": CHECKPOINT_TAG,
        "hidden": model.hidden,
        "channels": list(model.channels),
        "layers": [
            {"kind": s.kind, "in_dim": s.in_dim, "out_dim": s.out_dim, "activation": s.activation,
             "params": {k: _enc(v) for k, v in p.items()}}
            for s, p in zip(model.specs, model.params)
        ],
        "graph": {
            "name": model.graph.name,
            "digest": graph_digest(model.graph),
            "self_loops": model.graph.self_loops,
            "region_ids": list(model.graph.region_ids) if model.graph.region_ids else None,
            "W": _enc(model.graph.W),
        },
        "meta": model.meta,
    }
    sc = model.scaling
    if sc is not None:
        out["scaling"] = {"feat_min": _enc(sc.feat_min), "feat_max": _enc(sc.feat_max),
                          "load_min": _enc(sc.load_min), "load_max": _enc(sc.load_max),
                          "fit_range": list(sc.fit_range)}
    return out


def model_from_checkpoint(d: dict) -> GnnModel:
    if d.get("format") != CHECKPOINT_TAG:
        raise ValueError(f"unsupported checkpoint format {d.get('format')!r}")
    g = d["graph"]
    graph = WeightedGraph(_dec(g["W"]), g["self_loops"], g["region_ids"], g["name"])
    if graph_digest(graph) != g["digest"]:
        raise ValueError("graph digest mismatch in checkpoint")
    specs = [LayerSpec(L["kind"], L["in_dim"], L["out_dim"], L["activation"]) for L in d["layers"]]
    params = [{k: _dec(v) for k, v in L["params"].items()} for L in d["layers"]]
    scaling = None
    if "scaling" in d:
        s = d["scaling"]
        scaling = ScalingSpec(_dec(s["feat_min"]), _dec(s["feat_max"]), _dec(s["load_min"]),
                              _dec(s["load_max"]), tuple(s["fit_range"]))
    return GnnModel(tuple(specs), params, graph, d["hidden"], tuple(d["channels"]), scaling, d.get("meta", {}))


def save_checkpoint(model: GnnModel, path) -> None:
    Path(path).write_text(json.dumps(checkpoint_dict(model), indent=1))


def load_checkpoint(path) -> GnnModel:
    return model_from_checkpoint(json.loads(Path(path).read_text()))


__all__ = [
    "GnnModel",
    "LayerSpec",
    "build_model",
    "check_adjacency",
    "checkpoint_dict",
    "evaluate_loss",
    "load_checkpoint",
    "loss_and_gradients",
    "model_forward",
    "model_from_checkpoint",
    "predict",
    "save_checkpoint",
    "with_self_loops",
]
