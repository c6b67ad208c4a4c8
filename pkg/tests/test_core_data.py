import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gnnload.core_data import (
    PanelError,
    PanelGapError,
    RegionalPanel,
    apply_minmax,
    chronological_split,
    fit_minmax,
    haversine_km,
    invert_minmax,
    load_panel_csv,
    national_mape,
    national_rmse,
    write_panel_csv,
)

REGIONS = ["Auvergne-Rhone-Alpes", "Bourgogne-Franche-Comte", "Bretagne", "Centre-Val-de-Loire", "Grand-Est",
           "Hauts-de-France", "Ile-de-France", "Normandie", "Nouvelle-Aquitaine", "Occitanie", "Pays-de-la-Loire",
           "Provence-Alpes-Cote-d-Azur"]


def _write_csv(path, regions, n_steps, drop=None):
    rows = []
    stamps = pd.date_range("2019-01-01", periods=n_steps, freq="30min")
    for r in regions:
        for k, t in enumerate(stamps):
            if drop == (r, k):
                continue
            rows.append({"Date": t.isoformat(), "Region": r, "Load": 1000.0 + k, "Temperature": 5.0 + k})
    pd.DataFrame(rows).to_csv(path, index=False)


def _panel(features, loads):
    n, d, T = features.shape
    stamps = pd.date_range("2019-01-01", periods=T, freq="30min").to_numpy()
    return RegionalPanel([f"r{i}" for i in range(n)], stamps, [f"c{k}" for k in range(d)], features, loads)


# ingestion


def test_load_minimal_complete_file(tmp_path):
    path = tmp_path / "p.csv"
    _write_csv(path, REGIONS, 2)
    panel = load_panel_csv(path, ["Temperature"])
    assert (panel.n, panel.T) == (12, 2)
    assert list(panel.region_ids) == sorted(REGIONS)
    assert panel.coords is not None  # all twelve mainland regions are in the bundled table


def test_missing_cell_is_named(tmp_path):
    path = tmp_path / "p.csv"
    _write_csv(path, REGIONS, 3, drop=("Bretagne", 1))
    with pytest.raises(PanelGapError) as err:
        load_panel_csv(path, ["Temperature"])
    assert err.value.gaps == [("Bretagne", "2019-01-01 00:30:00")]
    assert "Bretagne" in str(err.value)


def test_forward_fill_is_recorded(tmp_path):
    path = tmp_path / "p.csv"
    _write_csv(path, REGIONS[:2], 3, drop=(REGIONS[0], 1))
    panel = load_panel_csv(path, ["Temperature"], fill="ffill")
    assert panel.loads[0, 1] == panel.loads[0, 0]
    assert panel.provenance["forward_filled"] == [(REGIONS[0], "2019-01-01 00:30:00")]


def test_non_numeric_load_reports_row(tmp_path):
    path = tmp_path / "p.csv"
    _write_csv(path, REGIONS[:1], 3)
    frame = pd.read_csv(path).astype({"Load": object})
    frame.loc[2, "Load"] = "abc"
    frame.to_csv(path, index=False)
    with pytest.raises(PanelError, match="row 2"):
        load_panel_csv(path, ["Temperature"])


def test_csv_round_trip(tmp_path, small_synthetic):
    panel = small_synthetic.panel.slice_time(0, 96)
    path = tmp_path / "round.csv"
    write_panel_csv(panel, path)
    back = load_panel_csv(path, list(panel.channels))
    np.testing.assert_array_equal(back.loads, panel.loads)
    np.testing.assert_array_equal(back.features, panel.features)


def test_panel_rejects_irregular_timestamps():
    stamps = np.array(["2019-01-01T00:00", "2019-01-01T00:30", "2019-01-01T01:30"], dtype="datetime64[m]")
    with pytest.raises(PanelError, match="equally spaced"):
        RegionalPanel(["a"], stamps, ["c"], np.zeros((1, 1, 3)), np.zeros((1, 3)))


# scaling


def test_minmax_affine_example():
    p = _panel(np.array([[[10.0, 20.0, 30.0]]]), np.array([[1.0, 2.0, 3.0]]))
    spec = fit_minmax(p, (0, 3))
    np.testing.assert_allclose(apply_minmax(p, spec).features[0, 0], [0.0, 0.5, 1.0])


def test_minmax_constant_channel_maps_to_zero():
    p = _panel(np.full((1, 1, 3), 5.0), np.ones((1, 3)))
    spec = fit_minmax(p, (0, 3))
    np.testing.assert_array_equal(apply_minmax(p, spec).features, 0.0)


def test_minmax_empty_range_rejected():
    p = _panel(np.zeros((1, 1, 3)), np.ones((1, 3)))
    with pytest.raises(ValueError):
        fit_minmax(p, (2, 2))


def test_minmax_tolerates_out_of_range_values():
    p = _panel(np.array([[[0.0, 1.0, 4.0]]]), np.ones((1, 3)))
    spec = fit_minmax(p, (0, 2))
    assert apply_minmax(p, spec).features[0, 0, 2] == pytest.approx(4.0)


@given(arrays(np.float64, (3, 2, 7), elements=st.floats(-1e4, 1e4)),
       arrays(np.float64, (3, 7), elements=st.floats(0, 1e5)))
def test_scaling_round_trip(feats, loads):
    p = _panel(feats, loads)
    spec = fit_minmax(p, (0, 7))
    scaled = apply_minmax(p, spec)
    assert np.all(scaled.features >= -1e-12) and np.all(scaled.features <= 1 + 1e-12)
    back = invert_minmax(scaled, spec)
    span = (spec.feat_max - spec.feat_min)[:, :, None]
    varying = np.broadcast_to(span > 0, feats.shape)
    err = np.abs(back.features - feats)[varying]
    assert np.all(err <= 1e-12 * np.broadcast_to(np.maximum(span, 1.0), feats.shape)[varying] * 10)
    lspan = (spec.load_max - spec.load_min)[:, None]
    ok = np.broadcast_to(lspan > 0, loads.shape)
    assert np.all(np.abs(back.loads - loads)[ok] <= 1e-11 * np.broadcast_to(np.maximum(lspan, 1.0), loads.shape)[ok])


# splits


@pytest.mark.parametrize("T, fractions, sizes", [
    (10, (0.6, 0.2, 0.2), (6, 2, 2)),
    (7, (0.5, 0.25, 0.25), (5, 1, 1)),
    (3, (1 / 3, 1 / 3, 1 / 3), (1, 1, 1)),
])
def test_split_sizes(T, fractions, sizes):
    sp = chronological_split(T, fractions)
    assert sp.sizes == sizes
    assert sp.train[0] == 0 and sp.test[1] == T


def test_split_block_boundaries():
    sp = chronological_split(10, (0.6, 0.2, 0.2))
    assert (sp.train, sp.val, sp.test) == ((0, 6), (6, 8), (8, 10))


@pytest.mark.parametrize("fractions", [(0.0, 0.5, 0.5), (-0.1, 0.6, 0.5), (0.5, 0.5, 0.5)])
def test_split_rejects_bad_fractions(fractions):
    with pytest.raises(ValueError):
        chronological_split(10, fractions)


@given(st.integers(3, 10_000), st.floats(0.05, 0.9), st.floats(0.05, 0.9))
def test_split_covers_and_orders(T, a, b):
    if a + b >= 0.95:
        return
    fr = (1 - a - b, a, b)
    if min(fr) * T < 1:
        return
    sp = chronological_split(T, fr)
    assert sum(sp.sizes) == T
    assert sp.train[1] == sp.val[0] and sp.val[1] == sp.test[0]


# metrics


def test_mape_examples():
    y = np.array([[100.0, 100.0], [100.0, 100.0]])
    assert national_mape(y, y) == 0.0
    assert national_mape(np.array([[100.0]]), np.array([[90.0]])) == pytest.approx(10.0)
    assert national_mape(y, np.array([[110.0, 90.0], [100.0, 100.0]])) == pytest.approx(5.0)


def test_mape_zero_national_load_names_step():
    with pytest.raises(ValueError, match="t=1"):
        national_mape(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0]]))


def test_rmse_examples():
    assert national_rmse(np.zeros((2, 1)), np.zeros((2, 1))) == 0.0
    assert national_rmse(np.array([[3.0], [4.0]]), np.zeros((2, 1))) == pytest.approx(7.0)
    assert national_rmse(np.array([[3.0, -4.0]]), np.zeros((1, 2))) == pytest.approx(3.5355339059327378)


def test_rmse_shape_mismatch():
    with pytest.raises(ValueError):
        national_rmse(np.zeros((2, 3)), np.zeros((3, 2)))


@given(arrays(np.float64, (4, 6), elements=st.floats(1, 1e3)), arrays(np.float64, (4, 6), elements=st.floats(-50, 50)),
       st.permutations(range(4)))
def test_metrics_permutation_invariant(y, noise, perm):
    yhat = y + noise
    perm = list(perm)
    assert national_mape(y[perm], yhat[perm]) == pytest.approx(national_mape(y, yhat), rel=1e-12)
    assert national_rmse(y[perm], yhat[perm]) == pytest.approx(national_rmse(y, yhat), rel=1e-12, abs=1e-9)


@given(arrays(np.float64, (3, 5), elements=st.floats(-10, 10)))
def test_rmse_zero_iff_national_residual_zero(r):
    r = r - r.mean(axis=0, keepdims=True)  # every column sums to zero
    y = np.full((3, 5), 100.0)
    assert national_rmse(y, y + r) == pytest.approx(0.0, abs=1e-12)


# haversine


def test_haversine_examples():
    assert haversine_km((48.0, 2.0), (48.0, 2.0)) == 0.0
    assert haversine_km((0.0, 0.0), (0.0, 180.0)) == pytest.approx(math.pi * 6371.0)
    assert haversine_km((48.8566, 2.3522), (45.7640, 4.8357)) == pytest.approx(392.0, abs=1.0)


coord = st.tuples(st.floats(-90, 90), st.floats(-180, 180))


@given(coord, coord)
def test_haversine_symmetric_nonnegative(a, b):
    d = haversine_km(a, b)
    assert d >= 0
    assert d == pytest.approx(haversine_km(b, a), abs=1e-9)
    assert d <= math.pi * 6371.0 + 1e-6
