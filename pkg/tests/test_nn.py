import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gnnload.core_data import chronological_split
from gnnload.graphs import WeightedGraph, identity_graph
from gnnload.nn import (
    AdamState,
    LayerSpec,
    TrainConfig,
    adam_step,
    build_model,
    grid_points,
    grid_search,
    load_checkpoint,
    loss_and_gradients,
    model_forward,
    predict,
    save_checkpoint,
    train_arrays,
    with_self_loops,
)
from gnnload.nn.gradcheck import check_gradients, random_check_case, relative_error

KINDS = ("dense", "gcn", "sage_maxpool")
PATH3 = WeightedGraph(np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 1.0], [0.0, 1.0, 1.0]]), True)


# --- shapes and parameter counts -------------------------------------------


def test_gcn_three_layers_fifty_hidden_count():
    m = build_model("gcn", 3, 50, 1, identity_graph(12))
    assert m.n_params() == 2701


@pytest.mark.parametrize("kind, layers, hidden, expected", [
    ("gcn", 3, 64, 4353), ("sage_maxpool", 3, 50, 5301), ("sage_maxpool", 4, 50, 10351), ("dense", 3, 50, 2701),
])
def test_reference_counts_without_pool_weights(kind, layers, hidden, expected):
    m = build_model(kind, layers, hidden, 1, identity_graph(4))
    assert m.n_params(pool=False) == expected
    if kind == "sage_maxpool":
        # the max-pool transform adds in_dim^2 + in_dim per layer
        assert m.n_params() == expected + (1 + 1) + (layers - 1) * (hidden * hidden + hidden)


def test_layer_spec_validation():
    with pytest.raises(ValueError):
        LayerSpec("gat", 1, 1)
    with pytest.raises(ValueError):
        LayerSpec("gcn", 0, 1)
    with pytest.raises(ValueError):
        LayerSpec("gcn", 1, 1, "tanh")


def test_input_shape_checked():
    m = build_model("gcn", 2, 4, 2, identity_graph(3))
    assert model_forward(m, np.zeros((3, 2))).shape == (3, 1)
    assert model_forward(m, np.zeros((5, 3, 2))).shape == (5, 3, 1)
    with pytest.raises(ValueError, match="expected input"):
        model_forward(m, np.zeros((5, 4, 2)))


def test_isolated_node_rejected():
    W = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    m = build_model("gcn", 1, 2, 1, WeightedGraph(W, False))
    with pytest.raises(ValueError, match="self-loops"):
        model_forward(m, np.zeros((3, 1)))


def test_with_self_loops():
    W = np.array([[0.0, 2.0, 0.0], [2.0, 0.0, 4.0], [0.0, 4.0, 0.0]])
    g = with_self_loops(WeightedGraph(W, False))
    assert g.self_loops and np.all(np.diag(g.W) == 3.0)
    assert with_self_loops(g) is g


# --- gradients -------------------------------------------------------------


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("seed", range(5))
def test_gradients_match_finite_differences(kind, seed):
    model, X, Y = random_check_case(kind, seed)
    errs = check_gradients(model, X, Y)
    assert max(errs.values()) < 1e-4, errs


@pytest.mark.parametrize("kind", ["gcn", "sage_maxpool"])
def test_adjacency_gradient(kind):
    model, X, Y = random_check_case(kind, 42)
    A = np.array(model.graph.W)
    _, _, dA = loss_and_gradients(model, X, Y, A)
    h = 1e-6
    fd = np.zeros_like(A)
    for i, j in zip(*np.nonzero(A)):
        Ap, Am = A.copy(), A.copy()
        Ap[i, j] += h
        Am[i, j] -= h
        fd[i, j] = (loss_and_gradients(model, X, Y, Ap)[0] - loss_and_gradients(model, X, Y, Am)[0]) / (2 * h)
    assert relative_error(dA[A > 0], fd[A > 0]) < 1e-4


def test_relative_error_conventions():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_error(np.array([1.0]), np.array([0.0])) == 1.0


# --- Adam ------------------------------------------------------------------


def test_adam_zero_gradient_keeps_params():
    p = [{"W": np.array([1.0, -2.0])}]
    state = AdamState.zeros_like(p)
    adam_step(p, [{"W": np.zeros(2)}], state, TrainConfig())
    assert p[0]["W"].tolist() == [1.0, -2.0]


def test_adam_first_step_is_lr_sign():
    p = [{"W": np.zeros(3)}]
    state = AdamState.zeros_like(p)
    cfg = TrainConfig(lr=1e-3)
    adam_step(p, [{"W": np.array([5.0, -0.01, 300.0])}], state, cfg)
    assert np.allclose(p[0]["W"], [-1e-3, 1e-3, -1e-3], rtol=1e-5)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)


# --- training --------------------------------------------------------------


def test_dense_model_fits_linear_target():
    rng = np.random.default_rng(0)
    X = rng.uniform(size=(400, 3, 2))
    Y = 0.3 * X[..., 0] - 0.2 * X[..., 1] + 0.5
    m = build_model("dense", 1, 1, 2, identity_graph(3), 0)
    m.specs = (LayerSpec("dense", 2, 1, "identity"),)
    res = train_arrays(m, X[:300], Y[:300], X[300:], Y[300:], TrainConfig(32, 400, 1e-2))
    assert res.best_val < 1e-6
    assert res.curve.shape == (400, 3) and res.best_epoch == int(res.curve[np.argmin(res.curve[:, 2]), 0])


def test_training_is_seed_deterministic():
    rng = np.random.default_rng(1)
    X, Y = rng.uniform(size=(120, 3, 1)), rng.uniform(size=(120, 3))
    runs = [train_arrays(build_model("sage_maxpool", 2, 4, 1, PATH3, 3), X[:90], Y[:90], X[90:], Y[90:],
                         TrainConfig(16, 5, 1e-2, seed=7)) for _ in range(2)]
    assert np.array_equal(runs[0].curve, runs[1].curve)
    for a, b in zip(runs[0].model.params, runs[1].model.params):
        assert all(np.array_equal(a[k], b[k]) for k in a)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    X, Y = np.ones((8, 3, 1)), np.full((8, 3), np.inf)
    with pytest.raises(FloatingPointError, match="learning rate"):
        train_arrays(build_model("gcn", 2, 3, 1, PATH3), X, Y, X, Y, TrainConfig(8, 3, 1.0))


def test_grid_points_and_ranking(small_synthetic):
    assert len(grid_points({"batch_size": [256, 512, 1024], "n_layers": [3, 4, 5, 12],
                            "hidden_channels": [10, 32, 50, 64, 128], "n_epochs": [300]})) == 60
    with pytest.raises(ValueError):
        grid_points({"batch_size": [1]})
    from gnnload.core_data import apply_minmax, fit_minmax

    panel = small_synthetic.panel
    split = chronological_split(panel.T)
    scaled = apply_minmax(panel, fit_minmax(panel, split.train))
    space = {"batch_size": [256], "n_layers": [2], "hidden_channels": [4, 8], "n_epochs": [2]}
    res = grid_search(space, scaled, split, identity_graph(12), "gcn", ["Temperature"], 3e-3, 0)
    vals = [r["val_loss"] for r in res.ranking]
    assert vals == sorted(vals) and len(res.results) == 2
    assert res.best is res.results[0] and res.best.best_val == vals[0]


# --- structural properties -------------------------------------------------


@pytest.mark.parametrize("kind", ["gcn", "sage_maxpool"])
def test_receptive_field_on_path(kind):
    X = np.random.default_rng(0).normal(size=(3, 2))
    Xc = X.copy()
    Xc[2] += 1.0
    one = build_model(kind, 1, 4, 2, PATH3, 1)
    two = build_model(kind, 2, 4, 2, PATH3, 1)
    assert model_forward(one, X)[0] == model_forward(one, Xc)[0]
    assert model_forward(two, X)[0] != model_forward(two, Xc)[0]


def _random_graph(rng, n):
    W = rng.uniform(0.1, 1.0, (n, n)) * (rng.uniform(size=(n, n)) < 0.4)
    W = np.triu(W, 1)
    W = W + W.T
    np.fill_diagonal(W, 1.0)
    return W


def _hops(W):
    n = len(W)
    D = np.full((n, n), np.inf)
    for s in range(n):
        D[s, s], frontier, k = 0, [s], 0
        while frontier:
            k += 1
            nxt = [j for i in frontier for j in np.nonzero(W[i] > 0)[0] if D[s, j] == np.inf]
            for j in nxt:
                D[s, j] = k
            frontier = list(set(nxt))
    return D


@given(st.integers(0, 10_000), st.sampled_from(["gcn", "sage_maxpool"]), st.integers(1, 3))
def test_receptive_field_random_graphs(seed, kind, L):
    rng = np.random.default_rng(seed)
    n = 7
    W = _random_graph(rng, n)
    m = build_model(kind, L, 3, 2, WeightedGraph(W, True), seed)
    X = rng.normal(size=(n, 2))
    hops = _hops(W)
    src = int(rng.integers(n))
    Xp = X.copy()
    Xp[src] += rng.normal(size=2)
    far = hops[:, src] > L
    assert np.array_equal(model_forward(m, X)[far], model_forward(m, Xp)[far])


@given(st.integers(0, 10_000), st.sampled_from(["gcn", "sage_maxpool", "dense"]))
def test_permutation_equivariance(seed, kind):
    rng = np.random.default_rng(seed)
    n = 6
    W = _random_graph(rng, n)
    perm = rng.permutation(n)
    g = WeightedGraph(W, True)
    m = build_model(kind, 3, 4, 2, g, seed)
    mp = build_model(kind, 3, 4, 2, g.permuted(perm), seed)
    X = rng.normal(size=(4, n, 2))
    assert np.allclose(predict(m, X)[:, perm], predict(mp, X[:, perm]), rtol=0, atol=1e-12)


@pytest.mark.parametrize("kind", ["gcn", "sage_maxpool"])
def test_identity_graph_reduces_to_per_node_map(kind):
    """Without neighbours every node applies the same function to its own input."""
    m = build_model(kind, 3, 5, 1, identity_graph(4), 2)
    X = np.random.default_rng(3).normal(size=(10, 4, 1))
    out = predict(m, X)
    same = predict(m, np.repeat(X[:, :1], 4, axis=1))
    assert np.allclose(out[:, 0], same[:, 3])
    shuffled = X[:, ::-1]
    assert np.allclose(predict(m, shuffled), out[:, ::-1])


# --- checkpoints -----------------------------------------------------------


@pytest.mark.parametrize("kind", KINDS)
def test_checkpoint_round_trip(tmp_path, kind):
    m = build_model(kind, 3, 6, 2, PATH3, 9, ("Temperature", "Instant"))
    save_checkpoint(m, tmp_path / "m.json")
    m2 = load_checkpoint(tmp_path / "m.json")
    X = np.random.default_rng(0).normal(size=(5, 3, 2))
    assert np.array_equal(predict(m, X), predict(m2, X))
    assert m2.channels == m.channels and np.array_equal(m2.graph.W, m.graph.W)
