"""Cubic B-spline bases, second-difference ridge fits and the additive (GAM) baseline."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import block_diag
from scipy.interpolate import BSpline

from .core_data import CATEGORICAL_CHANNELS, RegionalPanel, SplitSpec

DEGREE = 3
FORMAT_TAG = "gnnload-additive/1"


@dataclass(frozen=True, eq=False)
class SplineBasis:
    """Clamped cubic B-spline basis on ``knots``; dimension is ``len(knots) + 2``.

    Outside ``[knots[0], knots[-1]]`` every basis function is continued linearly,
    so fitted curves extrapolate as straight lines.
    """

    knots: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        if knots.ndim != 1 or len(knots) < 2 or np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be a strictly increasing vector of length >= 2")
        object.__setattr__(self, "knots", knots)
        t = np.r_[[knots[0]] * DEGREE, knots, [knots[-1]] * DEGREE]
        spl = BSpline(t, np.eye(len(knots) + 2), DEGREE, extrapolate=True)
        object.__setattr__(self, "_spline", spl)
        lo, hi = knots[0], knots[-1]
        d1 = spl.derivative()
        object.__setattr__(self, "_edge", (spl(lo), d1(lo), spl(hi), d1(hi)))

    degree = DEGREE

    @property
    def dim(self) -> int:
        return len(self.knots) + 2

    def design(self, x) -> np.ndarray:
        """(len(x), dim) matrix of basis values."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        lo, hi = self.knots[0], self.knots[-1]
        out = np.empty((len(x), self.dim))
        inside = (x >= lo) & (x <= hi)
        out[inside] = self._spline(x[inside])
        v_lo, s_lo, v_hi, s_hi = self._edge
        below, above = x < lo, x > hi
        out[below] = v_lo + np.outer(x[below] - lo, s_lo)
        out[above] = v_hi + np.outer(x[above] - hi, s_hi)
        return out

    def penalty(self) -> np.ndarray:
        """Squared second-difference penalty on the coefficient vector."""
        D = np.diff(np.eye(self.dim), n=2, axis=0)
        return D.T @ D


def make_basis(values, k: int = 10) -> SplineBasis:
    """Basis with ``k`` knots at equally spaced empirical quantiles of ``values``."""
    if k < 4:
        raise ValueError(f"need k >= 4 knots, got {k}")
    values = np.asarray(values, dtype=float).ravel()
    uniq = np.unique(values[np.isfinite(values)])
    if len(uniq) < k:
        raise ValueError(f"need at least {k} distinct sample values, got {len(uniq)}")
    probs = np.linspace(0.0, 1.0, k)
    knots = np.quantile(values, probs)
    if np.any(np.diff(knots) <= 0):
        # heavy ties: place knots on the distinct values instead
        knots = np.quantile(uniq, probs)
    return SplineBasis(knots)


@dataclass(frozen=True, eq=False)
class SplineModel:
    basis: SplineBasis
    coef: np.ndarray
    ridge: float = 0.0
    intercept: float = 0.0

    def __post_init__(self):
        coef = np.asarray(self.coef, dtype=float)
        if coef.shape != (self.basis.dim,):
            raise ValueError(f"coefficient length {coef.shape} != basis dim {self.basis.dim}")
        object.__setattr__(self, "coef", coef)

    def __call__(self, x) -> np.ndarray:
        return predict_spline(self, x)

    def to_dict(self) -> dict:
        return {
            "knots": self.basis.knots.tolist(),
            "coef": self.coef.tolist(),
            "ridge": self.ridge,
            "intercept": self.intercept,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> SplineModel:
        return cls(SplineBasis(np.array(d["knots"])), np.array(d["coef"]), d["ridge"], d["intercept"])


def _solve_penalized(B, y, pen, what="spline") -> np.ndarray:
    A = B.T @ B + pen
    if not np.isfinite(np.linalg.cond(A)) or np.linalg.cond(A) > 1e14:
        raise np.linalg.LinAlgError(f"singular {what} system; use ridge > 0")
    return np.linalg.solve(A, B.T @ y)


def fit_spline_ridge(x, y, basis: SplineBasis, ridge: float = 1.0) -> SplineModel:
    """Minimise ``||y - B beta||^2 + ridge * ||D2 beta||^2``."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if len(x) != len(y):
        raise ValueError("x and y lengths differ")
    if len(x) < basis.dim:
        raise ValueError(f"need at least {basis.dim} points, got {len(x)}")
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    coef = _solve_penalized(basis.design(x), y, ridge * basis.penalty())
    return SplineModel(basis, coef, float(ridge))


def predict_spline(model: SplineModel, x) -> np.ndarray:
    return model.intercept + model.basis.design(x) @ model.coef


# ---------------------------------------------------------------------------
# additive baseline
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class AdditiveModel:
    """``intercept + sum_j f_j(x_j) + sum_c slope_c * x_c + sum_g offset_g[level]``."""

    intercept: float
    splines: dict[str, SplineModel] = field(default_factory=dict)
    linear: dict[str, float] = field(default_factory=dict)
    offsets: dict[str, dict[int, float]] = field(default_factory=dict)

    def decompose(self, columns: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Per-effect contributions; their sum plus the intercept is the prediction."""
        parts = {}
        for name, spl in self.splines.items():
            parts[name] = predict_spline(spl, columns[name])
        for name, slope in self.linear.items():
            parts[name] = slope * np.asarray(columns[name], dtype=float)
        for name, table in self.offsets.items():
            codes = np.rint(np.asarray(columns[name], dtype=float)).astype(int)
            unseen = sorted(set(np.unique(codes)) - set(table))
            if unseen:
                warnings.warn(f"{name}: unseen levels {unseen} get a zero offset", stacklevel=2)
            parts[name] = np.array([table.get(int(c), 0.0) for c in codes])
        return parts

    def predict(self, columns: Mapping[str, np.ndarray]) -> np.ndarray:
        parts = self.decompose(columns)
        n = len(next(iter(columns.values())))
        return self.intercept + sum(parts.values(), np.zeros(n))

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_TAG,
            "intercept": self.intercept,
            "splines": {k: v.to_dict() for k, v in self.splines.items()},
            "linear": dict(self.linear),
            "offsets": {k: {str(lv): off for lv, off in v.items()} for k, v in self.offsets.items()},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> AdditiveModel:
        if d.get("format") != FORMAT_TAG:
            raise ValueError(f"unsupported model format {d.get('format')!r}")
        return cls(
            intercept=d["intercept"],
            splines={k: SplineModel.from_dict(v) for k, v in d["splines"].items()},
            linear=dict(d["linear"]),
            offsets={k: {int(lv): off for lv, off in v.items()} for k, v in d["offsets"].items()},
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def loads(cls, text: str) -> AdditiveModel:
        return cls.from_dict(json.loads(text))


def _sum_to_zero(B: np.ndarray) -> np.ndarray:
    """Null-space basis Z of the column-mean constraint, so ``mean(B Z g) = 0``."""
    c = B.mean(axis=0)[:, None]
    q, _ = np.linalg.qr(c, mode="complete")
    return q[:, 1:]


def region_columns(panel: RegionalPanel, region: int, idx=None) -> dict[str, np.ndarray]:
    sl = slice(None) if idx is None else idx
    return {ch: panel.features[region, k, sl] for k, ch in enumerate(panel.channels)}


def fit_gam_baseline(
    panel: RegionalPanel,
    region: int,
    split: SplitSpec,
    k: int = 10,
    ridge: float = 1.0,
    spline_channels: Sequence[str] = ("Temperature", "Instant", "Posan"),
    linear_channels: Sequence[str] = ("Trend",),
    categorical_channels: Sequence[str] = CATEGORICAL_CHANNELS,
    param_ridge: float = 1e-6,
) -> AdditiveModel:
    """Jointly solved additive model for one region on the training block.

    Channels absent from the panel are skipped. Spline effects carry a
    sum-to-zero constraint on the training data; categorical levels get dummy
    offsets with the first observed level as reference. ``param_ridge`` adds a
    small identity ridge to every block, which keeps the system definite when
    calendar terms and temperature are collinear (as on synthetic data).
    """
    idx = split.indices("train")
    if len(idx) == 0:
        raise ValueError("empty training range")
    cols = region_columns(panel, region, idx)
    y = panel.loads[region, idx]
    blocks, pens, layout = [], [], []

    for name in spline_channels:
        if name not in cols or np.unique(cols[name]).size < k:
            continue
        basis = make_basis(cols[name], k)
        B = basis.design(cols[name])
        Z = _sum_to_zero(B)
        blocks.append(B @ Z)
        pens.append(ridge * Z.T @ basis.penalty() @ Z + param_ridge * np.eye(Z.shape[1]))
        layout.append(("spline", name, basis, Z))
    for name in linear_channels:
        if name not in cols or np.ptp(cols[name]) == 0:
            continue
        col = np.asarray(cols[name], float)
        scale = col.std()
        blocks.append(col[:, None] / scale)
        pens.append(np.array([[param_ridge]]))
        layout.append(("linear", name, scale, None))
    for name in categorical_channels:
        if name not in cols:
            continue
        codes = np.rint(cols[name]).astype(int)
        levels = sorted(np.unique(codes))
        if len(levels) < 2:
            layout.append(("offset", name, [levels[0]], None))
            blocks.append(np.zeros((len(y), 0)))
            pens.append(np.zeros((0, 0)))
            continue
        blocks.append(np.stack([(codes == lv).astype(float) for lv in levels[1:]], axis=1))
        pens.append(param_ridge * np.eye(len(levels) - 1))
        layout.append(("offset", name, levels, None))

    if blocks:
        X = np.hstack(blocks)
        xbar = X.mean(axis=0)
        ybar = y.mean()
        beta = _solve_penalized(X - xbar, y - ybar, block_diag(*pens), "additive model")
        intercept = float(ybar - xbar @ beta)
    else:
        beta, intercept = np.zeros(0), float(y.mean())

    model = AdditiveModel(intercept)
    pos = 0
    for kind, name, extra, Z in layout:
        if kind == "spline":
            width = Z.shape[1]
            model.splines[name] = SplineModel(extra, Z @ beta[pos : pos + width], ridge)
        elif kind == "linear":
            width = 1
            model.linear[name] = float(beta[pos] / extra)
        else:
            width = len(extra) - 1
            table = {int(extra[0]): 0.0}
            table.update({int(lv): float(b) for lv, b in zip(extra[1:], beta[pos : pos + width])})
            model.offsets[name] = table
        pos += width
    return model


def fit_gam_regions(panel: RegionalPanel, split: SplitSpec, **kwargs) -> list[AdditiveModel]:
    return [fit_gam_baseline(panel, i, split, **kwargs) for i in range(panel.n)]


def predict_gam_regions(models: Sequence[AdditiveModel], panel: RegionalPanel) -> np.ndarray:
    """(n, T) regional predictions; their column sums are the national forecast."""
    return np.stack([m.predict(region_columns(panel, i)) for i, m in enumerate(models)])
