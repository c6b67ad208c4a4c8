"""Adam, minibatch training with best-on-validation snapshots, and exhaustive grid search."""
from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..core_data import RegionalPanel, SplitSpec
from ..graphs.weighted import WeightedGraph
from .model import GnnModel, build_model, evaluate_loss, loss_and_gradients

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 512
    n_epochs: int = 300
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.n_epochs < 1:
            raise ValueError("n_epochs must be >= 1")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> AdamState:
        return cls([{k: np.zeros_like(x) for k, x in p.items()} for p in params],
                   [{k: np.zeros_like(x) for k, x in p.items()} for p in params])


def adam_step(params, grads, state: AdamState, config: TrainConfig) -> None:
    """In-place Adam update with bias correction."""
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        for k in p:
            m[k] = b1 * m[k] + (1 - b1) * g[k]
            v[k] = b2 * v[k] + (1 - b2) * g[k] ** 2
            p[k] -= config.lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + config.eps)


# ---------------------------------------------------------------------------
# data plumbing
# ---------------------------------------------------------------------------


def panel_arrays(panel: RegionalPanel, channels: Sequence[str] | None = None):
    """(T, n, d) inputs and (T, n) targets from a scaled panel."""
    chans = list(channels) if channels else list(panel.channels)
    X = np.stack([panel.channel(c) for c in chans], axis=-1)  # (n, T, d)
    return np.ascontiguousarray(X.transpose(1, 0, 2)), np.ascontiguousarray(panel.loads.T)


@dataclass
class TrainResult:
    model: GnnModel
    curve: np.ndarray  # (epochs, 3): epoch, train_loss, val_loss
    best_epoch: int
    best_val: float
    config: TrainConfig

    def write_curve(self, path) -> None:
        write_loss_curve(self.curve, path)


def write_loss_curve(curve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss"])
        for e, tr, va in curve:
            w.writerow([int(e), f"{tr:.17g}", f"{va:.17g}"])


def train(model: GnnModel, panel: RegionalPanel, split: SplitSpec, config: TrainConfig) -> TrainResult:
    """Minibatch Adam on shuffled training timesteps; keeps the best-on-validation snapshot."""
    X, Y = panel_arrays(panel, model.channels or None)
    tr, va = split.indices("train"), split.indices("val")
    return train_arrays(model, X[tr], Y[tr], X[va], Y[va], config)


def train_arrays(model: GnnModel, Xtr, Ytr, Xva, Yva, config: TrainConfig) -> TrainResult:
    model = model.copy()
    rng = np.random.default_rng(config.seed)
    state = AdamState.zeros_like(model.params)
    best = (np.inf, 0, model.copy())
    rows = []
    n = len(Xtr)
    for epoch in range(1, config.n_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, config.batch_size):
            b = order[s : s + config.batch_size]
            loss, grads, _ = loss_and_gradients(model, Xtr[b], Ytr[b])
            if not np.isfinite(loss):
                raise FloatingPointError(
                    f"loss became {loss} at epoch {epoch} (lr={config.lr}); lower the learning rate"
                )
            adam_step(model.params, grads, state, config)
            total += loss * len(b)
        val = evaluate_loss(model, Xva, Yva) if len(Xva) else total / n
        if not np.isfinite(val):
            raise FloatingPointError(f"validation loss became {val} at epoch {epoch} (lr={config.lr}); lower the learning rate")
        rows.append((epoch, total / n, val))
        if val < best[0]:
            best = (val, epoch, model.copy())
    best_val, best_epoch, best_model = best
    best_model.meta = {**best_model.meta, "best_epoch": best_epoch, "best_val": best_val}
    return TrainResult(best_model, np.array(rows, dtype=float), best_epoch, float(best_val), config)


# ---------------------------------------------------------------------------
# grid search
# ---------------------------------------------------------------------------

FULL_GRID = {
    "batch_size": (256, 512, 1024),
    "n_layers": (3, 4, 5, 12),
    "hidden_channels": (10, 32, 50, 64, 128),
    "n_epochs": (300,),
}


def grid_points(space: Mapping[str, Sequence]) -> list[dict]:
    keys = ("batch_size", "n_layers", "hidden_channels", "n_epochs")
    missing = [k for k in keys if k not in space or len(space[k]) == 0]
    if missing:
        raise ValueError(f"grid space needs non-empty {missing}")
    return [dict(zip(keys, combo)) for combo in itertools.product(*(sorted(space[k]) for k in keys))]


@dataclass
class GridResult:
    ranking: list[dict] = field(default_factory=list)  # sorted, each with val_loss and best_epoch
    best: TrainResult | None = None
    results: list[TrainResult] = field(default_factory=list)  # aligned with ranking

    def write_csv(self, path) -> None:
        keys = ["rank", "batch_size", "n_layers", "hidden_channels", "n_epochs", "best_epoch", "val_loss", "n_params"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, keys)
            w.writeheader()
            for r, row in enumerate(self.ranking, 1):
                w.writerow({"rank": r, **{k: row[k] for k in keys[1:]}})


def grid_search(
    space: Mapping[str, Sequence],
    panel: RegionalPanel,
    split: SplitSpec,
    graph: WeightedGraph,
    model_kind: str,
    channels: Sequence[str] | None = None,
    lr: float = 1e-3,
    seed: int = 0,
) -> GridResult:
    """Train every grid point; rank by best validation loss, ties by config order."""
    chans = tuple(channels) if channels else tuple(panel.channels)
    X, Y = panel_arrays(panel, chans)
    tr, va = split.indices("train"), split.indices("val")
    results = []
    for k, pt in enumerate(grid_points(space)):
        model = build_model(model_kind, pt["n_layers"], pt["hidden_channels"], len(chans), graph, seed + k, chans)
        cfg = TrainConfig(pt["batch_size"], pt["n_epochs"], lr, seed=seed + k)
        res = train_arrays(model, X[tr], Y[tr], X[va], Y[va], cfg)
        log.info("%s %s %s: val %.3e at epoch %d", model_kind, graph.name, pt, res.best_val, res.best_epoch)
        key = (res.best_val, tuple(pt.values()))
        results.append((key, pt, res))
    results.sort(key=lambda r: r[0])
    ranking = [{**pt, "val_loss": res.best_val, "best_epoch": res.best_epoch, "n_params": res.model.n_params()}
               for _, pt, res in results]
    return GridResult(ranking, results[0][2], [res for _, _, res in results])
