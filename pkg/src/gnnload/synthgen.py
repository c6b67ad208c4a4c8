"""Synthetic 12-region dataset: bi-periodic trended temperatures, spline loads, graph-shaped noise."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.signal import lfilter

from .core_data import RegionalPanel, load_region_table
from .graphs.weighted import WeightedGraph, geo_kernel_graph
from .splines import SplineModel, fit_spline_ridge, make_basis, predict_spline

HALF_HOURS_PER_DAY = 48
HALF_HOURS_PER_YEAR = 17520


@dataclass(frozen=True)
class SynthConfig:
    """Generation parameters.

    ``noise_scale`` multiplies the per-region ``noise_reference`` statistic of
    the observed loads (``"mean"`` level or ``"std"``). ``trend=None`` sets the
    one-year drift to 1% of the mean temperature amplitude.
    """

    T: int = HALF_HOURS_PER_YEAR
    trend: float | None = None
    noise_scale: float = 0.02
    noise_reference: str = "mean"
    sigma_mode: str = "correlated"
    seed: int = 0
    spline_k: int = 10
    spline_ridge: float = 1.0
    amp_window: int = HALF_HOURS_PER_DAY
    start: str = "2019-01-01"

    def __post_init__(self):
        if self.T < HALF_HOURS_PER_DAY:
            raise ValueError(f"T must be >= {HALF_HOURS_PER_DAY}")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")
        if self.sigma_mode not in ("correlated", "independent"):
            raise ValueError(f"unknown sigma_mode {self.sigma_mode!r}")
        if self.noise_reference not in ("mean", "std"):
            raise ValueError(f"unknown noise_reference {self.noise_reference!r}")

    omega_daily = 2 * np.pi / HALF_HOURS_PER_DAY
    omega_yearly = 2 * np.pi / HALF_HOURS_PER_YEAR


@dataclass(frozen=True, eq=False)
class TempStats:
    mu: np.ndarray  # (n,)
    cov: np.ndarray  # (n, n)
    tmin: np.ndarray
    tmax: np.ndarray


def _streams(seed: int):
    temp_ss, noise_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(temp_ss), np.random.default_rng(noise_ss)


def estimate_temp_stats(panel: RegionalPanel, window: int = HALF_HOURS_PER_DAY, channel="Temperature") -> TempStats:
    """Mean and covariance across regions of windowed amplitude estimates.

    Each full window of ``window`` steps gives one amplitude sample per region
    (half the within-window range); ``mu`` and ``cov`` are taken over windows.
    """
    temps = panel.channel(channel)
    T = temps.shape[1]
    if T < 2:
        raise ValueError("need at least two timesteps")
    window = max(2, min(window, T // 2)) if T >= 4 else T
    n_win = T // window
    blocks = temps[:, : n_win * window].reshape(panel.n, n_win, window)
    amps = 0.5 * (blocks.max(axis=2) - blocks.min(axis=2))
    mu = amps.mean(axis=1)
    cov = np.cov(amps) if n_win > 1 else np.zeros((panel.n, panel.n))
    cov = np.atleast_2d(cov)
    return TempStats(mu, 0.5 * (cov + cov.T), temps.min(axis=1), temps.max(axis=1))


def draw_amplitudes(stats: TempStats, rng: np.random.Generator) -> np.ndarray:
    n = len(stats.mu)
    C = stats.cov + 1e-10 * np.eye(n)
    try:
        L = np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(C)
        L = vecs * np.sqrt(np.clip(vals, 0, None))
    return stats.mu + L @ rng.standard_normal(n)


def default_trend(stats: TempStats) -> float:
    return 0.01 * float(np.mean(stats.mu)) / HALF_HOURS_PER_YEAR


def rescale_rows(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Affine map of each row onto [lo, hi]; constant rows map to lo."""
    xmin = x.min(axis=1, keepdims=True)
    span = np.ptp(x, axis=1, keepdims=True)
    unit = np.where(span > 0, (x - xmin) / np.where(span > 0, span, 1.0), 0.0)
    return lo[:, None] + unit * (hi - lo)[:, None]


def gen_temperature(stats: TempStats, config: SynthConfig, rng=None, amplitudes=None) -> np.ndarray:
    """``a t + b_j (cos w1 t + cos w2 t)`` rescaled onto each region's observed range."""
    if amplitudes is None:
        rng = rng if rng is not None else _streams(config.seed)[0]
        amplitudes = draw_amplitudes(stats, rng)
    a = default_trend(stats) if config.trend is None else config.trend
    t = np.arange(config.T, dtype=float)
    wave = np.cos(config.omega_daily * t) + np.cos(config.omega_yearly * t)
    raw = a * t[None, :] + np.asarray(amplitudes)[:, None] * wave[None, :]
    return rescale_rows(raw, stats.tmin, stats.tmax)


def nearest_correlation(A: np.ndarray, floor: float = 1e-8, max_iter: int = 100) -> np.ndarray:
    """Clip eigenvalues at ``floor`` and renormalise to a unit diagonal, repeated until both hold."""
    C = 0.5 * (np.asarray(A, dtype=float) + np.asarray(A, dtype=float).T)
    for _ in range(max_iter):
        vals, vecs = np.linalg.eigh(C)
        if vals.min() >= floor and np.allclose(np.diag(C), 1.0, rtol=0, atol=1e-13):
            break
        C = (vecs * np.maximum(vals, floor)) @ vecs.T
        d = 1.0 / np.sqrt(np.diag(C))
        C = C * np.outer(d, d)
        C = 0.5 * (C + C.T)
        np.fill_diagonal(C, 1.0)
    return C


def build_sigma(graph: WeightedGraph, mode: str = "correlated") -> np.ndarray:
    """Noise covariance: identity, or ``W_lambda`` projected to a correlation matrix."""
    if mode == "independent":
        return np.eye(graph.n)
    if mode != "correlated":
        raise ValueError(f"unknown mode {mode!r}")
    W = np.array(graph.W, dtype=float)
    np.fill_diagonal(W, 1.0)
    return nearest_correlation(W)


def fit_load_splines(panel_obs: RegionalPanel, k: int = 10, ridge: float = 1.0) -> list[SplineModel]:
    """Per-region cubic spline of observed load (MW) on observed temperature."""
    temps = panel_obs.channel("Temperature")
    return [
        fit_spline_ridge(temps[j], panel_obs.loads[j], make_basis(temps[j], k), ridge) for j in range(panel_obs.n)
    ]


def noise_reference(panel_obs: RegionalPanel, how: str) -> np.ndarray:
    return panel_obs.loads.mean(axis=1) if how == "mean" else panel_obs.loads.std(axis=1)


def gen_load(fits, temps_gen, sigma, config: SynthConfig, scale, rng=None, xi=None) -> np.ndarray:
    """Spline loads plus noise ``s * scale_j * z_j``, z ~ N(0, sigma) i.i.d. over time."""
    temps_gen = np.asarray(temps_gen)
    n, T = temps_gen.shape
    clean = np.stack([predict_spline(f, temps_gen[j]) for j, f in enumerate(fits)])
    if config.noise_scale == 0:
        return clean
    if xi is None:
        rng = rng if rng is not None else _streams(config.seed)[1]
        xi = rng.standard_normal((T, n))
    z = xi @ np.linalg.cholesky(sigma).T
    return clean + config.noise_scale * np.asarray(scale)[:, None] * z.T


# ---------------------------------------------------------------------------
# calendar channels
# ---------------------------------------------------------------------------

HOLIDAY_WINDOWS = (((2, 8), (3, 8)), ((4, 5), (5, 3)), ((10, 19), (11, 3)))


def calendar_channels(timestamps) -> dict[str, np.ndarray]:
    idx = pd.DatetimeIndex(pd.to_datetime(timestamps))
    md = idx.month * 100 + idx.day
    holiday = np.zeros(len(idx), dtype=bool)
    for (m0, d0), (m1, d1) in HOLIDAY_WINDOWS:
        holiday |= (md >= m0 * 100 + d0) & (md <= m1 * 100 + d1)
    days_in_year = np.where(idx.is_leap_year, 366, 365)
    return {
        "Instant": (idx.hour * 2 + idx.minute // 30).to_numpy(float),
        "Posan": ((idx.dayofyear - 1 + (idx.hour * 60 + idx.minute) / 1440) / days_in_year).to_numpy(float),
        "DayType": idx.dayofweek.to_numpy(float),
        "Weekend": (idx.dayofweek >= 5).astype(float),
        "Summer": np.isin(idx.month, (7, 8)).astype(float),
        "Christmas": ((md >= 1220) | (md <= 103)).astype(float),
        "Holiday_zone": holiday.astype(float),
        "Trend": np.arange(len(idx), dtype=float),
    }


def temperature_channels(temps: np.ndarray, timestamps) -> dict[str, np.ndarray]:
    """Daily min/max and two exponential smoothings of an (n, T) temperature matrix."""
    day = pd.DatetimeIndex(pd.to_datetime(timestamps)).normalize()
    frame = pd.DataFrame(temps.T, index=day)
    grouped = frame.groupby(level=0)
    tmin = grouped.transform("min").to_numpy().T
    tmax = grouped.transform("max").to_numpy().T

    def smooth(alpha):
        zi = (alpha * temps[:, :1])
        out, _ = lfilter([1 - alpha], [1, -alpha], temps, axis=1, zi=zi)
        return out

    return {
        "Temperature": temps,
        "TempMin": tmin,
        "TempMax": tmax,
        "TempSmoothHigh": smooth(0.99),
        "TempSmoothLow": smooth(0.95),
    }


def half_hour_stamps(start: str, T: int) -> np.ndarray:
    return pd.date_range(start, periods=T, freq="30min").to_numpy()


def assemble_panel(region_ids, timestamps, temps, loads, coords, provenance) -> RegionalPanel:
    chans = {**temperature_channels(temps, timestamps)}
    cal = calendar_channels(timestamps)
    n = temps.shape[0]
    for name, row in cal.items():
        chans[name] = np.broadcast_to(row, (n, len(row)))
    names = tuple(chans)
    feats = np.stack([chans[c] for c in names], axis=1)
    return RegionalPanel(region_ids, timestamps, names, feats, loads, coords, provenance)


# ---------------------------------------------------------------------------
# end-to-end
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SyntheticDataset:
    panel: RegionalPanel
    sigma: np.ndarray
    graph: WeightedGraph
    splines: list[SplineModel]
    amplitudes: np.ndarray
    config: SynthConfig

    def sidecar(self) -> dict:
        return {
            "config": asdict(self.config),
            "omega_daily": self.config.omega_daily,
            "omega_yearly": self.config.omega_yearly,
            "amplitudes": self.amplitudes.tolist(),
            "sigma": self.sigma.tolist(),
            "graph": {"sigma_km": self.graph.meta.get("sigma"), "lambda": self.graph.meta.get("lambda")},
            "source": self.panel.provenance.get("observed_source"),
        }

    def write_sidecar(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.sidecar(), indent=1))


def make_synthetic_panel(panel_obs: RegionalPanel, config: SynthConfig, graph: WeightedGraph | None = None) -> SyntheticDataset:
    """Generate a full synthetic panel; temperatures depend only on the seed, not on the noise mode."""
    if graph is None:
        if panel_obs.coords is None:
            raise ValueError("observed panel has no coordinates; pass a graph")
        graph = geo_kernel_graph(panel_obs.coords, region_ids=panel_obs.region_ids)
    temp_rng, noise_rng = _streams(config.seed)
    stats = estimate_temp_stats(panel_obs, config.amp_window)
    b = draw_amplitudes(stats, temp_rng)
    temps = gen_temperature(stats, config, amplitudes=b)
    fits = fit_load_splines(panel_obs, config.spline_k, config.spline_ridge)
    sigma = build_sigma(graph, config.sigma_mode)
    xi = noise_rng.standard_normal((config.T, panel_obs.n))
    loads = gen_load(fits, temps, sigma, config, noise_reference(panel_obs, config.noise_reference), xi=xi)
    stamps = half_hour_stamps(config.start, config.T)
    prov = {
        "generator": "synthgen",
        "seed": config.seed,
        "sigma_mode": config.sigma_mode,
        "observed_source": panel_obs.provenance.get("source", "unknown"),
    }
    panel = assemble_panel(panel_obs.region_ids, stamps, temps, loads, panel_obs.coords, prov)
    return SyntheticDataset(panel, sigma, graph, fits, b, config)


# ---------------------------------------------------------------------------
# stand-in observed panel
# ---------------------------------------------------------------------------

# Rough regional consumption levels (MW) for the 12 mainland regions.
_BASE_LOAD = {
    "Auvergne-Rhone-Alpes": 7200,
    "Bourgogne-Franche-Comte": 2400,
    "Bretagne": 2600,
    "Centre-Val-de-Loire": 2000,
    "Grand-Est": 5000,
    "Hauts-de-France": 5400,
    "Ile-de-France": 8000,
    "Normandie": 3100,
    "Nouvelle-Aquitaine": 4900,
    "Occitanie": 4400,
    "Pays-de-la-Loire": 3200,
    "Provence-Alpes-Cote-d-Azur": 4700,
}


def reference_observed_panel(seed: int = 2018, T: int = HALF_HOURS_PER_YEAR, start: str = "2018-01-01") -> RegionalPanel:
    """Plausible observed temperatures and loads for the 12 mainland French regions.

    Stands in for proprietary regional data: temperatures follow a latitude-
    dependent seasonal and daily cycle plus a spatially correlated AR(1)
    weather anomaly; loads follow regional heating/cooling curves with a daily
    profile and noise. Only its statistics feed the generator.
    """
    table = load_region_table()
    ids = tuple(table.index)
    coords = table.to_numpy()
    n = len(ids)
    rng = np.random.default_rng(seed)
    stamps = half_hour_stamps(start, T)
    idx = pd.DatetimeIndex(stamps)
    doy = (idx.dayofyear.to_numpy() - 1) + (idx.hour.to_numpy() + idx.minute.to_numpy() / 60) / 24
    hour = idx.hour.to_numpy() + idx.minute.to_numpy() / 60

    lat, lon = coords[:, 0], coords[:, 1]
    mean_t = 12.5 - 0.9 * (lat - 46.5) + 0.8 * (lat < 44.5)
    season_amp = 7.0 + 0.35 * (lon - 1.0)
    daily_amp = 3.0 + 0.4 * rng.random(n)
    seasonal = -np.cos(2 * np.pi * (doy - 20) / 365.25)
    daily = -np.cos(2 * np.pi * (hour - 3) / 24)

    from .core_data import pairwise_haversine

    D = pairwise_haversine(coords)
    C = np.exp(-D / 600.0)
    Lc = np.linalg.cholesky(C + 1e-9 * np.eye(n))
    shocks = rng.standard_normal((T, n)) @ Lc.T
    anomaly = lfilter([0.06], [1, -0.998], shocks, axis=0).T * 1.2
    temps = mean_t[:, None] + season_amp[:, None] * seasonal + daily_amp[:, None] * daily + anomaly

    base = np.array([_BASE_LOAD.get(r, 4000) for r in ids], dtype=float)
    # comfort thresholds follow the local climate; heating sensitivity grows northwards
    lo, span = temps.min(axis=1), np.ptp(temps, axis=1)
    heat_at = lo + 0.55 * span
    cool_at = lo + 0.85 * span
    heat_k = 0.012 + 0.006 * (lat - 43.3)
    cool_k = 0.006 + 0.018 * (lat < 45.0)
    heat = (heat_k * base)[:, None] * np.logaddexp(0, heat_at[:, None] - temps)
    cool = (cool_k * base)[:, None] * np.logaddexp(0, temps - cool_at[:, None])
    profile = 0.03 * np.sin(2 * np.pi * (hour - 9) / 24) + 0.015 * np.sin(4 * np.pi * (hour - 6) / 24)
    weekend = np.where(idx.dayofweek.to_numpy() >= 5, -0.07, 0.0)
    loads = base[:, None] * (1 + profile + weekend) + heat + cool
    loads = loads + 0.01 * base[:, None] * rng.standard_normal((n, T))
    loads = np.maximum(loads, 0.0)
    prov = {"source": "reference_observed_panel", "seed": seed}
    return assemble_panel(ids, stamps, temps, loads, coords, prov)


# ---------------------------------------------------------------------------
# planted-edge toy problem for explainer checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PlantedPair:
    X: np.ndarray  # (T, 4, 1)
    Y: np.ndarray  # (T, 4)
    graph: WeightedGraph
    edge: tuple[int, int]


def planted_pair_data(seed: int, T: int = 3000, distractor: float = 0.3, edge=(1, 2)) -> PlantedPair:
    """Four nodes with i.i.d. U(0, 1) features; the two planted nodes predict each
    other's feature, the rest predict their own.

    Every node is linked to every other with weight ``distractor``; only the
    planted edge has weight 1 and carries the signal.
    """
    a, b = edge
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(T, 4))
    Y = x.copy()
    Y[:, a], Y[:, b] = x[:, b], x[:, a]
    W = np.full((4, 4), float(distractor))
    np.fill_diagonal(W, 1.0)
    W[a, b] = W[b, a] = 1.0
    return PlantedPair(x[:, :, None], Y, WeightedGraph(W, True, name="planted"), (min(a, b), max(a, b)))
