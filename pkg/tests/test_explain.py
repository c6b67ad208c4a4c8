import numpy as np
import pytest

from gnnload.core_data import RegionalPanel
from gnnload.explain import (
    ale_curve,
    ale_from_function,
    binary_entropy,
    day_indices,
    explain_day,
    importance_from_masks,
    learn_edge_mask,
    mask_edges,
    masked_adjacency,
    write_importance,
)
from gnnload.graphs import WeightedGraph
from gnnload.nn import build_model, model_forward
from gnnload.nn.model import _run
from gnnload.synthgen import half_hour_stamps


def _graph(n=5, seed=0):
    rng = np.random.default_rng(seed)
    W = rng.uniform(0.2, 1.0, (n, n)) * (rng.uniform(size=(n, n)) < 0.7)
    W = np.triu(W, 1)
    W = W + W.T
    np.fill_diagonal(W, 1.0)
    return WeightedGraph(W, True)


def _panel(n=5, days=3, seed=0):
    T = 48 * days
    rng = np.random.default_rng(seed)
    feats = rng.uniform(size=(n, 2, T))
    return RegionalPanel([f"r{i}" for i in range(n)], half_hour_stamps("2019-06-01", T), ["Temperature", "Instant"],
                         feats, rng.uniform(size=(n, T)))


@pytest.mark.parametrize("kind", ["gcn", "sage_maxpool"])
def test_saturated_mask_reproduces_model_exactly(kind):
    g = _graph()
    m = build_model(kind, 3, 6, 2, g, 1)
    X = np.random.default_rng(0).normal(size=(4, 5, 2))
    edges = mask_edges(g.W)
    A = masked_adjacency(g.W, edges, np.full(len(edges), 50.0))
    assert np.array_equal(A, g.W)
    assert np.array_equal(_run(m, X, A)[0], model_forward(m, X))


def test_self_loops_are_never_masked():
    g = _graph()
    edges = mask_edges(g.W)
    assert np.all(edges[:, 0] < edges[:, 1])
    A = masked_adjacency(g.W, edges, np.full(len(edges), -50.0))
    assert np.array_equal(np.diag(A), np.diag(g.W))


def test_huge_size_penalty_switches_edges_off():
    m = build_model("gcn", 2, 4, 2, _graph(), 2)
    X = np.random.default_rng(1).normal(size=(1, 5, 2))
    mk = learn_edge_mask(m, X, size_coef=1e3, entropy_coef=0.0, steps=300, lr=0.1)
    s = mk.values[tuple(mk.edges.T)]
    assert np.all(s < 0.01)


def test_entropy_term_binarises_mask():
    m = build_model("sage_maxpool", 2, 4, 2, _graph(), 3)
    X = np.random.default_rng(2).normal(size=(1, 5, 2))
    mk = learn_edge_mask(m, X, size_coef=0.005, entropy_coef=1.0, steps=300, lr=0.05)
    s = mk.values[tuple(mk.edges.T)]
    assert binary_entropy(s).mean() < 0.5 * np.log(2)
    assert mk.history[-1] < mk.history[0]


def test_mask_is_symmetric_and_deterministic():
    m = build_model("gcn", 2, 4, 2, _graph(), 4)
    X = np.random.default_rng(3).normal(size=(2, 5, 2))
    a = learn_edge_mask(m, X, steps=50)
    b = learn_edge_mask(m, X, steps=50)
    assert np.array_equal(a.values, a.values.T)
    assert np.array_equal(a.logits, b.logits)


def test_no_edges_to_explain():
    m = build_model("gcn", 2, 4, 1, WeightedGraph(np.eye(3), True), 0)
    with pytest.raises(ValueError, match="no inter-region"):
        learn_edge_mask(m, np.zeros((1, 3, 1)))


def test_importance_normalisation():
    g = _graph()
    edges = mask_edges(g.W)
    from gnnload.explain import EdgeMask

    mk = EdgeMask(np.zeros_like(g.W), edges, g.W, np.zeros(1))
    imp = importance_from_masks([mk, mk])
    assert imp.max() == 1.0 and np.all(np.diag(imp) == 0)
    assert np.array_equal(imp, imp.T)


def test_explain_day_permutation_equivariant():
    panel = _panel()
    g = _graph()
    perm = np.array([3, 0, 4, 1, 2])
    m = build_model("gcn", 2, 4, 2, g, 5, ("Temperature", "Instant"))
    mp = build_model("gcn", 2, 4, 2, g.permuted(perm), 5, ("Temperature", "Instant"))
    pp = RegionalPanel([panel.region_ids[p] for p in perm], panel.timestamps, panel.channels,
                       panel.features[perm], panel.loads[perm])
    a = explain_day(m, panel, "2019-06-02", steps=30)
    b = explain_day(mp, pp, "2019-06-02", steps=30)
    assert np.allclose(a[np.ix_(perm, perm)], b, rtol=0, atol=1e-9)


def test_incomplete_day_rejected():
    panel = _panel()
    with pytest.raises(ValueError, match="half-hours"):
        day_indices(panel, "2019-07-01")
    assert len(day_indices(panel, "2019-06-03")) == 48


def test_importance_csv(tmp_path):
    imp = np.array([[0.0, 1.0], [1.0, 0.0]])
    write_importance(imp, ["a", "b"], tmp_path / "d.csv", tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text().splitlines()[1] == "a,b,1"


# --- ALE -------------------------------------------------------------------


def test_ale_of_linear_function_is_linear():
    X = np.random.default_rng(0).uniform(-2, 5, size=(1000, 3))
    curve = ale_from_function(lambda Z: 3.0 * Z[:, 1] + Z[:, 0] ** 2, X, 1, n_bins=15)
    slope = np.diff(curve.effect) / np.diff(curve.edges)
    assert np.allclose(slope, 3.0)
    assert np.sum(curve.counts * 0.5 * (curve.effect[:-1] + curve.effect[1:])) == pytest.approx(0.0, abs=1e-9)


def test_ale_flat_for_unused_feature():
    X = np.random.default_rng(1).normal(size=(500, 2))
    curve = ale_from_function(lambda Z: np.sin(Z[:, 0]), X, 1)
    assert np.allclose(curve.effect, 0.0)


def test_ale_isolates_interactions_correctly():
    # additive in x1: ALE recovers x1^2 up to a constant even when x0 and x1 are correlated
    rng = np.random.default_rng(2)
    x0 = rng.uniform(0, 1, 4000)
    X = np.stack([x0, x0 + 0.05 * rng.normal(size=4000)], axis=1)
    curve = ale_from_function(lambda Z: Z[:, 1] ** 2 + 10 * Z[:, 0], X, 1, n_bins=30)
    ref = curve.edges**2
    assert np.corrcoef(curve.effect, ref)[0, 1] > 0.999


def test_ale_constant_feature_rejected():
    with pytest.raises(ValueError, match="constant"):
        ale_from_function(lambda Z: Z[:, 0], np.ones((10, 2)), 0)
    with pytest.raises(ValueError):
        ale_from_function(lambda Z: Z[:, 0], np.ones((10, 2)), 0, n_bins=1)


def test_ale_curve_on_model_touches_one_node(tmp_path):
    panel = _panel()
    m = build_model("gcn", 2, 4, 2, _graph(), 6, ("Temperature", "Instant"))
    c = ale_curve(m, panel, "Temperature", 2, n_bins=8)
    assert len(c.edges) == 9 and c.counts.sum() == panel.T
    c.write_csv(tmp_path / "ale.csv")
    assert (tmp_path / "ale.csv").read_text().startswith("bin_left,bin_right,effect,count")
