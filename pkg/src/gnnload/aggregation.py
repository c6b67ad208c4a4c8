"""Online expert aggregation with ML-Poly (polynomially weighted averages, multiple learning rates).

Protocol at each step: predict with the current weights, observe the target,
then update. With ``gradient=True`` the squared loss is linearised at the
aggregated forecast, which is what gives the regret bound against the best
convex combination.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass
class ExpertPanel:
    names: tuple[str, ...]
    forecasts: np.ndarray  # (K, T)
    targets: np.ndarray  # (T,)

    def __post_init__(self):
        self.names = tuple(self.names)
        self.forecasts = np.atleast_2d(np.asarray(self.forecasts, dtype=float))
        self.targets = np.asarray(self.targets, dtype=float).ravel()
        K, T = self.forecasts.shape
        if K < 1 or len(self.names) != K:
            raise ValueError(f"need one name per expert, got {len(self.names)} names for {K} experts")
        if T != len(self.targets):
            raise ValueError("forecasts and targets differ in length")
        if not np.all(np.isfinite(self.forecasts)) or not np.all(np.isfinite(self.targets)):
            raise ValueError("expert forecasts and targets must be finite")

    @property
    def K(self) -> int:
        return len(self.names)

    @property
    def T(self) -> int:
        return len(self.targets)


@dataclass
class MlPolyState:
    R: np.ndarray  # cumulative regrets
    S: np.ndarray  # cumulative squared instantaneous regrets
    p: np.ndarray  # current weights
    gradient: bool = True
    t: int = 0

    @classmethod
    def init(cls, K: int, gradient: bool = True) -> MlPolyState:
        return cls(np.zeros(K), np.zeros(K), np.full(K, 1.0 / K), gradient)

    @property
    def eta(self) -> np.ndarray:
        return 1.0 / (1.0 + self.S)


def mlpoly_predict(state: MlPolyState, x) -> float:
    return float(np.dot(state.p, np.asarray(x, dtype=float)))


def mlpoly_weights(R: np.ndarray, eta: np.ndarray) -> np.ndarray:
    w = eta * np.maximum(R, 0.0)
    total = w.sum()
    if total <= 0 or not np.isfinite(total):
        return np.full(len(R), 1.0 / len(R))
    return w / total


def mlpoly_update(state: MlPolyState, x, y: float) -> MlPolyState:
    """One predict-then-update step (in place); returns the state for chaining."""
    x = np.asarray(x, dtype=float)
    yhat = float(np.dot(state.p, x))
    if state.gradient:
        g = 2.0 * (yhat - y)
        r = g * (yhat - x)
    else:
        r = (yhat - y) ** 2 - (x - y) ** 2
    state.R += r
    state.S += r**2
    state.p = mlpoly_weights(state.R, state.eta)
    state.t += 1
    return state


@dataclass
class AggregationResult:
    names: tuple[str, ...]
    prediction: np.ndarray  # (T,)
    weights: np.ndarray  # (K, T): weights used at each step

    def write_weights(self, path, t0: int = 0) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "expert", "weight"])
            for t in range(self.weights.shape[1]):
                for k, name in enumerate(self.names):
                    w.writerow([t0 + t, name, f"{self.weights[k, t]:.17g}"])


def run_online_aggregation(panel: ExpertPanel, gradient: bool = True) -> AggregationResult:
    state = MlPolyState.init(panel.K, gradient)
    pred = np.empty(panel.T)
    weights = np.empty((panel.K, panel.T))
    for t in range(panel.T):
        x = panel.forecasts[:, t]
        weights[:, t] = state.p
        pred[t] = mlpoly_predict(state, x)
        mlpoly_update(state, x, panel.targets[t])
    return AggregationResult(panel.names, pred, weights)


def aggregate_forecasts(names: Sequence[str], forecasts, targets, gradient: bool = True) -> AggregationResult:
    return run_online_aggregation(ExpertPanel(tuple(names), forecasts, targets), gradient)


@dataclass
class RegretReport:
    agg_loss: float
    best_loss: float
    loss_range: float
    bound: float
    expert_losses: np.ndarray = field(repr=False)

    @property
    def ok(self) -> bool:
        return self.agg_loss <= self.best_loss + self.bound


def regret_report(panel: ExpertPanel, result: AggregationResult, slack: float = 10.0) -> RegretReport:
    """Average-loss check against the best expert with a ``slack * sqrt(K/T) * range`` allowance."""
    sq = (panel.forecasts - panel.targets) ** 2
    agg = (result.prediction - panel.targets) ** 2
    every = np.concatenate([sq.ravel(), agg])
    rng = float(every.max() - every.min())
    bound = slack * np.sqrt(panel.K / panel.T) * rng
    return RegretReport(float(agg.mean()), float(sq.mean(axis=1).min()), rng, float(bound), sq.mean(axis=1))
