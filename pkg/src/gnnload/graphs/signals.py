"""Signal-driven distances between regions: SVD reduction and spline temperature effects."""
from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.integrate import trapezoid

from ..core_data import RegionalPanel
from ..splines import fit_spline_ridge, make_basis, predict_spline


def svd_reduce(panel: RegionalPanel, channels: Sequence[str], include_load: bool = False) -> np.ndarray:
    """One unit-norm representative series per region: the top right-singular
    vector of that region's (d, T) channel matrix.

    The panel should already be min-max scaled. Signs are fixed so each series
    correlates non-negatively with the region's load.
    """
    channels = list(channels)
    if not channels and not include_load:
        raise ValueError("svd_reduce needs at least one channel")
    out = np.empty((panel.n, panel.T))
    for i in range(panel.n):
        rows = [panel.channel(c)[i] for c in channels]
        if include_load:
            rows.append(panel.loads[i])
        M = np.asarray(rows, dtype=float)
        _, _, vt = np.linalg.svd(M, full_matrices=False)
        v = vt[0] / np.linalg.norm(vt[0])
        load = panel.loads[i] - panel.loads[i].mean()
        score = float(np.dot(v - v.mean(), load))
        if score < 0 or (score == 0 and v.sum() < 0):
            v = -v
        out[i] = v
    return out


def regional_temperature_splines(panel: RegionalPanel, k: int = 10, ridge: float = 1.0, channel="Temperature"):
    """Per-region spline of min-max scaled load against temperature."""
    temps = panel.channel(channel)
    fits = []
    for i in range(panel.n):
        y = panel.loads[i]
        span = np.ptp(y)
        y = (y - y.min()) / span if span > 0 else np.zeros_like(y)
        basis = make_basis(temps[i], k)
        fits.append(fit_spline_ridge(temps[i], y, basis, ridge))
    return fits


def l2_curve_distance(f, g, lo: float, hi: float, n_points: int = 256) -> float:
    """``sqrt(int_lo^hi (f - g)^2)`` by the trapezoid rule on an equispaced grid."""
    grid = np.linspace(lo, hi, n_points)
    diff2 = (f(grid) - g(grid)) ** 2
    return float(np.sqrt(trapezoid(diff2, grid)))


def spline_effect_distance(panel: RegionalPanel, k: int = 10, ridge: float = 1.0, n_points: int = 256) -> np.ndarray:
    """L2 distances between regional temperature-effect splines on overlapping ranges."""
    fits = regional_temperature_splines(panel, k, ridge)
    temps = panel.channel("Temperature")
    lo, hi = temps.min(axis=1), temps.max(axis=1)
    n = panel.n
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            a, b = max(lo[i], lo[j]), min(hi[i], hi[j])
            if b <= a:
                raise ValueError(
                    f"temperature ranges of {panel.region_ids[i]} and {panel.region_ids[j]} do not overlap"
                )
            fi, fj = fits[i], fits[j]
            D[i, j] = D[j, i] = l2_curve_distance(
                lambda x: predict_spline(fi, x), lambda x: predict_spline(fj, x), a, b, n_points
            )
    return D
