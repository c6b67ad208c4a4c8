import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gnnload.graphs import dtw_distance_matrix, dtw_exact, dtw_path, fastdtw, fastdtw_path

series = arrays(float, st.integers(1, 8), elements=st.floats(-5, 5))


def _naive(a, b):
    n, m = len(a), len(b)
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            acc[i, j] = (a[i - 1] - b[j - 1]) ** 2 + min(acc[i - 1, j], acc[i, j - 1], acc[i - 1, j - 1])
    return acc[n, m]


def test_hand_example():
    # a = [0, 1, 2], b = [0, 2]: best path (0,0),(1,1)... cost 1
    assert dtw_exact([0, 1, 2], [0, 2]) == 1.0
    assert dtw_exact([1, 2, 3], [1, 2, 3]) == 0.0
    assert dtw_exact([0, 0, 0, 5], [0, 5]) == 0.0


@given(series, series)
def test_exact_matches_naive_dp(a, b):
    assert dtw_exact(a, b) == pytest.approx(_naive(a, b), rel=1e-12, abs=1e-12)


@given(series, series)
def test_fastdtw_with_wide_radius_is_exact(a, b):
    assert fastdtw(a, b, radius=max(len(a), len(b))) == dtw_exact(a, b)


@given(series, series)
def test_symmetry_and_identity(a, b):
    assert dtw_exact(a, b) == pytest.approx(dtw_exact(b, a), rel=1e-12, abs=1e-12)
    assert dtw_exact(a, a) == 0.0


def test_path_is_monotone_and_priced_correctly(rng):
    a, b = rng.normal(size=30), rng.normal(size=23)
    for cost, path in (dtw_path(a, b), fastdtw_path(a, b, 2)):
        assert tuple(path[0]) == (0, 0) and tuple(path[-1]) == (29, 22)
        steps = np.diff(path, axis=0)
        assert np.all((steps >= 0) & (steps <= 1)) and np.all(steps.sum(1) >= 1)
        assert cost == pytest.approx(np.sum((a[path[:, 0]] - b[path[:, 1]]) ** 2), rel=1e-12)


def test_fastdtw_upper_bounds_exact(rng):
    for _ in range(20):
        a, b = rng.normal(size=100), rng.normal(size=90)
        assert fastdtw(a, b, 1) >= dtw_exact(a, b) - 1e-12


def _smooth_pair(rng, T=128):
    t = np.linspace(0, 1, T)
    f = rng.uniform(1, 4, size=2)
    ph = rng.uniform(0, 2 * np.pi, size=2)
    return np.sin(2 * np.pi * f[0] * t + ph[0]), np.sin(2 * np.pi * f[1] * t + ph[1]) + 0.1 * rng.normal(size=T)


def test_fastdtw_close_on_smooth_series():
    rng = np.random.default_rng(7)
    ratios = []
    for _ in range(30):
        a, b = _smooth_pair(rng)
        ex = dtw_exact(a, b)
        ratios.append(fastdtw(a, b, 20) / ex if ex > 0 else 1.0)
    assert np.mean(np.asarray(ratios) <= 1.10) >= 0.95


def test_distance_matrix(rng):
    X = rng.normal(size=(4, 20))
    D = dtw_distance_matrix(X, exact=True)
    assert np.array_equal(D, D.T) and np.all(np.diag(D) == 0)
    assert D[0, 1] == pytest.approx(np.sqrt(dtw_exact(X[0], X[1])))
    assert np.allclose(dtw_distance_matrix(X, radius=20), D)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        dtw_exact([], [1.0])
    with pytest.raises(ValueError):
        fastdtw([1.0], [1.0], radius=-1)
