"""Dynamic time warping: exact dynamic program and the FastDTW multiresolution approximation.

Local cost is the squared difference. Both routes share one banded DP kernel, so
FastDTW with a radius covering the whole series reproduces the exact DP bit for bit.
"""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _band_dp(a, b, lo, hi):
    n, m = len(a), len(b)
    offs = np.zeros(n + 1, dtype=np.int64)
    for i in range(n):
        offs[i + 1] = offs[i] + hi[i] - lo[i] + 1
    acc = np.empty(offs[n])
    inf = np.inf
    for i in range(n):
        for j in range(lo[i], hi[i] + 1):
            c = (a[i] - b[j]) ** 2
            if i == 0 and j == 0:
                acc[offs[0]] = c
                continue
            best = inf
            if i > 0:
                if lo[i - 1] <= j - 1 <= hi[i - 1]:
                    v = acc[offs[i - 1] + j - 1 - lo[i - 1]]
                    if v < best:
                        best = v
                if lo[i - 1] <= j <= hi[i - 1]:
                    v = acc[offs[i - 1] + j - lo[i - 1]]
                    if v < best:
                        best = v
            if j > lo[i]:
                v = acc[offs[i] + j - 1 - lo[i]]
                if v < best:
                    best = v
            acc[offs[i] + j - lo[i]] = c + best

    # traceback; ties prefer diagonal, then vertical, then horizontal
    path_i = np.empty(n + m, dtype=np.int64)
    path_j = np.empty(n + m, dtype=np.int64)
    i, j, k = n - 1, m - 1, 0
    path_i[0], path_j[0] = i, j
    while i > 0 or j > 0:
        d = up = left = inf
        if i > 0 and j > 0 and lo[i - 1] <= j - 1 <= hi[i - 1]:
            d = acc[offs[i - 1] + j - 1 - lo[i - 1]]
        if i > 0 and lo[i - 1] <= j <= hi[i - 1]:
            up = acc[offs[i - 1] + j - lo[i - 1]]
        if j > lo[i]:
            left = acc[offs[i] + j - 1 - lo[i]]
        if d <= up and d <= left:
            i -= 1
            j -= 1
        elif up <= left:
            i -= 1
        else:
            j -= 1
        k += 1
        path_i[k], path_j[k] = i, j
    return acc[offs[n] - 1], path_i[: k + 1][::-1].copy(), path_j[: k + 1][::-1].copy()


@njit(cache=True)
def _expand_window(pi, pj, n_coarse, n, m, radius):
    """Project a coarse path to fine row ranges, widened by ``radius`` coarse cells."""
    pmin = np.full(n_coarse, 1 << 60, dtype=np.int64)
    pmax = np.full(n_coarse, -1, dtype=np.int64)
    for k in range(len(pi)):
        i = pi[k]
        pmin[i] = min(pmin[i], pj[k])
        pmax[i] = max(pmax[i], pj[k])
    lo = np.empty(n, dtype=np.int64)
    hi = np.empty(n, dtype=np.int64)
    for ic in range(n_coarse):
        a = max(0, ic - radius)
        b = min(n_coarse - 1, ic + radius)
        cmin, cmax = 1 << 60, -1
        for r in range(a, b + 1):
            cmin = min(cmin, pmin[r])
            cmax = max(cmax, pmax[r])
        flo = max(0, 2 * (cmin - radius))
        fhi = min(m - 1, 2 * (cmax + radius) + 1)
        for fi in (2 * ic, 2 * ic + 1):
            if fi < n:
                lo[fi] = flo
                hi[fi] = fhi
    hi[n - 1] = m - 1
    return lo, hi


def _check(a, b):
    a = np.ascontiguousarray(a, dtype=np.float64).ravel()
    b = np.ascontiguousarray(b, dtype=np.float64).ravel()
    if len(a) == 0 or len(b) == 0:
        raise ValueError("DTW needs non-empty series")
    return a, b


def _full_band(n, m):
    return np.zeros(n, dtype=np.int64), np.full(n, m - 1, dtype=np.int64)


def dtw_path(a, b):
    """Exact DTW cost and optimal warping path (as an (L, 2) index array)."""
    a, b = _check(a, b)
    cost, pi, pj = _band_dp(a, b, *_full_band(len(a), len(b)))
    return float(cost), np.stack([pi, pj], axis=1)


def dtw_exact(a, b) -> float:
    """Classic full-alignment DTW with squared local cost and no window."""
    return dtw_path(a, b)[0]


def _halve(x):
    k = len(x) // 2
    head = 0.5 * (x[0 : 2 * k : 2] + x[1 : 2 * k : 2])
    return np.concatenate([head, x[2 * k :]])


def _fastdtw(a, b, radius):
    base = 2 * radius + 2
    if len(a) <= base or len(b) <= base:
        return _band_dp(a, b, *_full_band(len(a), len(b)))
    ac, bc = _halve(a), _halve(b)
    _, pi, pj = _fastdtw(ac, bc, radius)
    lo, hi = _expand_window(pi, pj, len(ac), len(a), len(b), radius)
    return _band_dp(a, b, lo, hi)


def fastdtw(a, b, radius: int = 20) -> float:
    """Approximate DTW cost in linear time and memory (always >= the exact cost)."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    a, b = _check(a, b)
    return float(_fastdtw(a, b, int(radius))[0])


def fastdtw_path(a, b, radius: int = 20):
    a, b = _check(a, b)
    cost, pi, pj = _fastdtw(a, b, int(radius))
    return float(cost), np.stack([pi, pj], axis=1)


def dtw_distance_matrix(signals, radius: int = 20, exact: bool = False) -> np.ndarray:
    """Pairwise root-DTW distances ``sqrt(cost)`` between the rows of ``signals``."""
    signals = np.asarray(signals, dtype=float)
    n = len(signals)
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            c = dtw_exact(signals[i], signals[j]) if exact else fastdtw(signals[i], signals[j], radius)
            D[i, j] = D[j, i] = np.sqrt(c)
    return D
