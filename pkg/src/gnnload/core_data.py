"""Regional panel data model, CSV ingestion, scaling, splits and national metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

EARTH_RADIUS_KM = 6371.0
HALF_HOUR = np.timedelta64(30, "m")

# Channel schema. Categorical channels hold integer codes.
WEATHER_CHANNELS = (
    "Temperature",
    "Nebulosity",
    "Wind",
    "TempMin",
    "TempMax",
    "TempSmoothHigh",
    "TempSmoothLow",
)
CALENDAR_CHANNELS = (
    "Instant",
    "Posan",
    "DayType",
    "Weekend",
    "Summer",
    "Christmas",
    "Holiday_zone",
    "Trend",
)
CATEGORICAL_CHANNELS = ("DayType", "Weekend", "Summer", "Christmas", "Holiday_zone")
FEATURE_CHANNELS = WEATHER_CHANNELS + CALENDAR_CHANNELS


class PanelError(ValueError):
    pass


class PanelGapError(PanelError):
    """Raised when (region, timestamp) cells are missing from a CSV panel."""

    def __init__(self, gaps: list[tuple[str, str]]):
        self.gaps = gaps
        shown = ", ".join(f"({r}, {t})" for r, t in gaps[:10])
        more = "" if len(gaps) <= 10 else f" ... and {len(gaps) - 10} more"
        super().__init__(f"{len(gaps)} missing (region, timestamp) cells: {shown}{more}")


@dataclass(frozen=True, eq=False)
class RegionalPanel:
    """Per-region features (n, d, T) and loads (n, T) on a regular half-hourly grid."""

    region_ids: tuple[str, ...]
    timestamps: np.ndarray
    channels: tuple[str, ...]
    features: np.ndarray
    loads: np.ndarray
    coords: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "region_ids", tuple(str(r) for r in self.region_ids))
        object.__setattr__(self, "channels", tuple(self.channels))
        ts = np.asarray(self.timestamps, dtype="datetime64[m]")
        feats = np.asarray(self.features, dtype=float)
        loads = np.asarray(self.loads, dtype=float)
        n, T = len(self.region_ids), len(ts)
        if n < 1:
            raise PanelError("panel needs at least one region")
        if feats.shape != (n, len(self.channels), T):
            raise PanelError(f"features shape {feats.shape} != {(n, len(self.channels), T)}")
        if loads.shape != (n, T):
            raise PanelError(f"loads shape {loads.shape} != {(n, T)}")
        if T > 1:
            steps = np.diff(ts)
            if np.any(steps <= np.timedelta64(0, "m")):
                raise PanelError("timestamps must be strictly increasing")
            if np.any(steps != steps[0]):
                raise PanelError("timestamps must be equally spaced")
        if not (np.all(np.isfinite(feats)) and np.all(np.isfinite(loads))):
            raise PanelError("panel contains missing or non-finite values")
        if self.coords is not None:
            coords = np.asarray(self.coords, dtype=float)
            if coords.shape != (n, 2):
                raise PanelError(f"coords shape {coords.shape} != {(n, 2)}")
            object.__setattr__(self, "coords", coords)
        for name, arr in (("timestamps", ts), ("features", feats), ("loads", loads)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return len(self.region_ids)

    @property
    def d(self) -> int:
        return len(self.channels)

    @property
    def T(self) -> int:
        return len(self.timestamps)

    def channel(self, name: str) -> np.ndarray:
        """(n, T) view of one feature channel."""
        try:
            idx = self.channels.index(name)
        except ValueError:
            raise KeyError(f"channel {name!r} not in panel (have {self.channels})") from None
        return self.features[:, idx, :]

    def select(self, channels: Sequence[str]) -> np.ndarray:
        """(n, len(channels), T) array of the requested channels."""
        return np.stack([self.channel(c) for c in channels], axis=1)

    def slice_time(self, start: int, stop: int) -> RegionalPanel:
        return replace(
            self,
            timestamps=self.timestamps[start:stop],
            features=self.features[:, :, start:stop],
            loads=self.loads[:, start:stop],
        )

    def with_values(self, features=None, loads=None, **provenance) -> RegionalPanel:
        prov = {**self.provenance, **provenance}
        return replace(
            self,
            features=self.features if features is None else features,
            loads=self.loads if loads is None else loads,
            provenance=prov,
        )


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def load_region_table(path: str | Path | None = None) -> pd.DataFrame:
    """Region reference points as a frame indexed by Region with Lat/Lon columns.

    Without a path, returns the bundled table of the 12 mainland French regions.
    """
    if path is None:
        with resources.files("gnnload.data").joinpath("french_regions.csv").open() as fh:
            table = pd.read_csv(fh)
    else:
        table = pd.read_csv(path)
    missing = {"Region", "Lat", "Lon"} - set(table.columns)
    if missing:
        raise PanelError(f"region table lacks columns {sorted(missing)}")
    return table.set_index("Region")[["Lat", "Lon"]].astype(float)


def load_panel_csv(
    path: str | Path,
    channels: Sequence[str] | None = None,
    fill: str = "reject",
    regions_path: str | Path | None = None,
) -> RegionalPanel:
    """Read a long-format CSV (``Date,Region,Load,<channels...>``) into a panel.

    ``fill="ffill"`` forward-fills missing cells per region instead of raising
    :class:`PanelGapError`; filled cells are listed in the panel provenance.
    """
    if fill not in ("reject", "ffill"):
        raise ValueError(f"fill must be 'reject' or 'ffill', got {fill!r}")
    frame = pd.read_csv(path, float_precision="round_trip")
    required = {"Date", "Region", "Load"}
    if not required <= set(frame.columns):
        raise PanelError(f"CSV lacks columns {sorted(required - set(frame.columns))}")
    if channels is None:
        channels = [c for c in frame.columns if c not in required]
    missing_cols = [c for c in channels if c not in frame.columns]
    if missing_cols:
        raise PanelError(f"CSV lacks schema channels {missing_cols}")

    for col in ["Load", *channels]:
        values = pd.to_numeric(frame[col], errors="coerce")
        bad = values.isna() & frame[col].notna()
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise PanelError(f"non-numeric {col} value {frame[col].iloc[row]!r} at data row {row}")
        frame[col] = values

    frame["Date"] = pd.to_datetime(frame["Date"])
    frame["Region"] = frame["Region"].astype(str)
    if frame.duplicated(["Region", "Date"]).any():
        dup = frame[frame.duplicated(["Region", "Date"], keep=False)].iloc[0]
        raise PanelError(f"duplicate row for ({dup['Region']}, {dup['Date']})")

    regions = sorted(frame["Region"].unique())
    stamps = np.sort(frame["Date"].unique())
    if len(stamps) > 1:
        step = pd.Series(stamps).diff().dropna().min()
        stamps = pd.date_range(stamps[0], stamps[-1], freq=step).to_numpy()
    grid = pd.MultiIndex.from_product([regions, stamps], names=["Region", "Date"])
    full = frame.set_index(["Region", "Date"]).reindex(grid)
    cols = ["Load", *channels]
    holes = full[cols].isna().any(axis=1)

    provenance = {"source": str(path)}
    if holes.any():
        gaps = [(r, str(pd.Timestamp(t))) for r, t in full.index[holes.to_numpy()]]
        if fill == "reject":
            raise PanelGapError(gaps)
        full[cols] = full[cols].groupby(level="Region").ffill()
        left = full[cols].isna().any(axis=1).to_numpy()
        if left.any():
            # nothing earlier to carry forward from
            raise PanelGapError([(r, str(pd.Timestamp(t))) for r, t in full.index[left]])
        provenance["forward_filled"] = gaps

    n, T = len(regions), len(stamps)
    loads = full["Load"].to_numpy().reshape(n, T)
    feats = full[list(channels)].to_numpy().reshape(n, T, len(channels)).transpose(0, 2, 1)
    if np.any(loads < 0):
        raise PanelError("negative load values")

    coords = None
    table = load_region_table(regions_path)
    if all(r in table.index for r in regions):
        coords = table.loc[regions].to_numpy()
    return RegionalPanel(regions, stamps, tuple(channels), feats, loads, coords, provenance)


def write_panel_csv(panel: RegionalPanel, path: str | Path) -> None:
    """Write a panel back out in the long CSV schema it was read from."""
    ts = pd.to_datetime(panel.timestamps).strftime("%Y-%m-%dT%H:%M:%S")
    frames = []
    for i, region in enumerate(panel.region_ids):
        part = {"Date": ts, "Region": region, "Load": panel.loads[i]}
        for k, ch in enumerate(panel.channels):
            part[ch] = panel.features[i, k]
        frames.append(pd.DataFrame(part))
    pd.concat(frames, ignore_index=True).to_csv(path, index=False, float_format="%.17g")


# ---------------------------------------------------------------------------
# Scaling
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ScalingSpec:
    """Per-region, per-channel min/max fitted on ``fit_range``."""

    feat_min: np.ndarray  # (n, d)
    feat_max: np.ndarray
    load_min: np.ndarray  # (n,)
    load_max: np.ndarray
    fit_range: tuple[int, int]

    def __post_init__(self):
        if np.any(self.feat_max < self.feat_min) or np.any(self.load_max < self.load_min):
            raise ValueError("scaling max must be >= min")

    def scale_loads(self, loads: np.ndarray) -> np.ndarray:
        return _affine(loads, self.load_min[:, None], self.load_max[:, None])

    def unscale_loads(self, scaled: np.ndarray) -> np.ndarray:
        return _affine_inv(scaled, self.load_min[:, None], self.load_max[:, None])


def _affine(x, lo, hi):
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (x - lo) / safe, 0.0)


def _affine_inv(z, lo, hi):
    return lo + z * (hi - lo)


def fit_minmax(panel: RegionalPanel, fit_range: tuple[int, int]) -> ScalingSpec:
    start, stop = fit_range
    if not 0 <= start < stop <= panel.T:
        raise ValueError(f"fit_range {fit_range} is empty or outside [0, {panel.T}]")
    feats = panel.features[:, :, start:stop]
    loads = panel.loads[:, start:stop]
    return ScalingSpec(
        feat_min=feats.min(axis=2),
        feat_max=feats.max(axis=2),
        load_min=loads.min(axis=1),
        load_max=loads.max(axis=1),
        fit_range=(int(start), int(stop)),
    )


def apply_minmax(panel: RegionalPanel, spec: ScalingSpec) -> RegionalPanel:
    """Scale features and loads; values outside the fitted range may leave [0, 1]."""
    feats = _affine(panel.features, spec.feat_min[:, :, None], spec.feat_max[:, :, None])
    return panel.with_values(feats, spec.scale_loads(panel.loads), scaled=True)


def invert_minmax(scaled: RegionalPanel, spec: ScalingSpec) -> RegionalPanel:
    feats = _affine_inv(scaled.features, spec.feat_min[:, :, None], spec.feat_max[:, :, None])
    return scaled.with_values(feats, spec.unscale_loads(scaled.loads), scaled=False)


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    train: tuple[int, int]
    val: tuple[int, int]
    test: tuple[int, int]

    def __post_init__(self):
        if not (self.train[0] == 0 and self.train[1] == self.val[0] and self.val[1] == self.test[0]):
            raise ValueError(f"blocks must be contiguous and ordered: {self}")
        for name in ("train", "val", "test"):
            a, b = getattr(self, name)
            if b <= a:
                raise ValueError(f"{name} block is empty: {(a, b)}")

    @property
    def sizes(self) -> tuple[int, int, int]:
        return tuple(b - a for a, b in (self.train, self.val, self.test))

    @property
    def T(self) -> int:
        return self.test[1]

    def indices(self, name: str) -> np.ndarray:
        a, b = getattr(self, name)
        return np.arange(a, b)


def chronological_split(T: int, fractions: Sequence[float] = (0.6, 0.2, 0.2)) -> SplitSpec:
    """Train/validation/test blocks in time order; flooring remainder goes to train."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3:
        raise ValueError("need exactly three fractions")
    if any(f <= 0 for f in fractions):
        raise ValueError(f"fractions must be positive, got {fractions}")
    if not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)}")
    n_val = math.floor(fractions[1] * T + 1e-9)
    n_test = math.floor(fractions[2] * T + 1e-9)
    n_train = T - n_val - n_test
    return SplitSpec((0, n_train), (n_train, n_train + n_val), (n_train + n_val, T))


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def _pair(y, yhat):
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {yhat.shape}")
    if y.ndim == 1:  # already national
        y, yhat = y[None, :], yhat[None, :]
    return y, yhat


def national_mape(y, yhat) -> float:
    """MAPE (%) of the region-summed forecast; inputs are (n, T) or national (T,)."""
    y, yhat = _pair(y, yhat)
    total = y.sum(axis=0)
    zero = np.flatnonzero(total == 0)
    if zero.size:
        raise ValueError(f"national load is zero at t={int(zero[0])}")
    return float(np.mean(np.abs((y - yhat).sum(axis=0) / total)) * 100.0)


def national_rmse(y, yhat) -> float:
    """RMSE of the region-summed residual (residuals are summed before squaring)."""
    y, yhat = _pair(y, yhat)
    return float(np.sqrt(np.mean((y - yhat).sum(axis=0) ** 2)))


def regional_rmse(y, yhat) -> np.ndarray:
    """Per-region RMSE; a diagnostic only, never used for national reporting."""
    y, yhat = _pair(y, yhat)
    return np.sqrt(np.mean((y - yhat) ** 2, axis=1))


def haversine_km(a, b) -> float:
    """Great-circle distance between (lat, lon) pairs given in degrees."""
    lat1, lon1, lat2, lon2 = np.radians([a[0], a[1], b[0], b[1]])
    h = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    return float(2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(min(1.0, h))))


def pairwise_haversine(coords) -> np.ndarray:
    coords = np.asarray(coords, dtype=float)
    n = len(coords)
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            D[i, j] = D[j, i] = haversine_km(coords[i], coords[j])
    return D
