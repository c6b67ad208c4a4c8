"""End-to-end experiment pipeline: data -> graphs -> grid search -> baselines -> mixtures -> explanations.

A run is a deterministic function of its config and master seed. Per-stage
seeds come from a stable hash of the stage name, so adding a stage does not
reshuffle the others.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import re
import time
import traceback
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import pandas as pd
import yaml

from .aggregation import AggregationResult, aggregate_forecasts
from .core_data import (
    RegionalPanel,
    ScalingSpec,
    SplitSpec,
    apply_minmax,
    chronological_split,
    fit_minmax,
    load_panel_csv,
    national_mape,
    national_rmse,
)
from .explain import ale_curve, day_indices, explain_day, write_importance
from .graphs import (
    WeightedGraph,
    distances_to_graph,
    dtw_distance_matrix,
    fuse_graphs,
    geo_kernel_graph,
    identity_graph,
    learn_smooth_graph,
    spline_effect_distance,
    svd_reduce,
    write_dense_csv,
    write_edge_list,
)
from .nn import GridResult, grid_search, panel_arrays, predict, save_checkpoint, with_self_loops
from .splines import fit_gam_regions, predict_gam_regions
from .synthgen import SynthConfig, SyntheticDataset, make_synthetic_panel, reference_observed_panel

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
GRAPH_SOURCES = ("identity", "space", "distsplines", "gl3sr-slot", "dtw")
MODEL_KINDS = {"gcn": "gcn", "sage": "sage_maxpool", "ffn": "dense"}
BASELINES = ("gam", "ffn")
ROW_LABEL = {"gcn": "GCN", "sage": "SAGE", "ffn": "FFN", "gam": "GAM-Regions"}


class ExperimentError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class DatasetConfig:
    source: str = "synthetic"  # synthetic | csv
    sigma_modes: tuple[str, ...] = ("correlated",)
    T: int = 17520
    noise_scale: float = 0.02
    noise_reference: str = "mean"
    observed_seed: int = 2018
    csv_path: str | None = None
    csv_fill: str = "reject"
    channels: tuple[str, ...] = ("Temperature",)


@dataclass
class GraphConfig:
    sources: tuple[str, ...] = ("identity", "space")
    dtw_radius: int = 20
    dtw_window: int = 48  # average signals over this many steps before DTW
    smooth_sparsity: float = 0.0
    fusion: tuple[dict, ...] = ()  # each {"name", "parts", "weights"}


@dataclass
class GridConfig:
    batch_size: tuple[int, ...] = (256,)
    n_layers: tuple[int, ...] = (3,)
    hidden_channels: tuple[int, ...] = (32,)
    n_epochs: tuple[int, ...] = (60,)
    lr: float = 3e-3
    # optional per-model epoch caps, e.g. {"gcn": [200]}; other models use n_epochs
    n_epochs_by_model: dict = field(default_factory=dict)

    def space(self, model: str | None = None) -> dict:
        out = {k: tuple(getattr(self, k)) for k in ("batch_size", "n_layers", "hidden_channels", "n_epochs")}
        if model in self.n_epochs_by_model:
            out["n_epochs"] = tuple(self.n_epochs_by_model[model])
        return out


@dataclass
class GamConfig:
    k: int = 10
    ridge: float = 1.0
    spline_channels: tuple[str, ...] = ("Temperature", "Instant", "Posan")
    linear_channels: tuple[str, ...] = ("Trend",)
    categorical_channels: tuple[str, ...] = ("DayType", "Weekend", "Summer", "Christmas", "Holiday_zone")


@dataclass
class ExplainConfig:
    enabled: bool = False
    dataset: str = "correlated"
    model: str = "sage"
    graph: str = "space"
    date: str | None = None  # None: first complete day of June, else first test day
    steps: int = 300
    size_coef: float = 0.005
    entropy_coef: float = 1.0
    lr: float = 0.01
    ale_bins: int = 20


@dataclass
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    name: str = "experiment"
    seed: int = 0
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    graphs: GraphConfig = field(default_factory=GraphConfig)
    models: tuple[str, ...] = ("gcn", "sage")
    grid: GridConfig = field(default_factory=GridConfig)
    split: tuple[float, float, float] = (0.6, 0.2, 0.2)
    gam: GamConfig = field(default_factory=GamConfig)
    mixtures: bool = True
    mixture_warmup: bool = True  # run the experts' weights through the validation block first
    explain: ExplainConfig = field(default_factory=ExplainConfig)

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ValueError(f"config schema_version {self.schema_version} unsupported (expected {SCHEMA_VERSION})")
        self.models = tuple(self.models)
        if not self.models:
            raise ValueError("config needs at least one model")
        bad = [m for m in self.models if m not in MODEL_KINDS and m != "gam"]
        if bad:
            raise ValueError(f"unknown model kinds {bad}; choose from {sorted([*MODEL_KINDS, 'gam'])}")
        if not self.graphs.sources:
            raise ValueError("config needs at least one graph")
        bad = [g for g in self.graphs.sources if g not in GRAPH_SOURCES]
        if bad:
            raise ValueError(f"unknown graph sources {bad}; choose from {list(GRAPH_SOURCES)}")
        if self.dataset.source not in ("synthetic", "csv"):
            raise ValueError(f"unknown dataset source {self.dataset.source!r}")
        if self.dataset.source == "csv":
            if not self.dataset.csv_path or not Path(self.dataset.csv_path).exists():
                raise FileNotFoundError(f"dataset csv_path {self.dataset.csv_path!r} does not exist")
        for mode in self.dataset.sigma_modes:
            if mode not in ("correlated", "independent"):
                raise ValueError(f"unknown sigma mode {mode!r}")

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    @property
    def gnn_models(self) -> tuple[str, ...]:
        return tuple(m for m in self.models if m in ("gcn", "sage"))

    @property
    def baselines(self) -> tuple[str, ...]:
        return tuple(m for m in self.models if m in BASELINES)


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


_SECTIONS = {"dataset": DatasetConfig, "graphs": GraphConfig, "grid": GridConfig, "gam": GamConfig,
             "explain": ExplainConfig}


def _build(cls, data: Mapping[str, Any], where: str):
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ValueError(f"unknown keys in {where}: {unknown}")
    kwargs = {}
    for k, v in data.items():
        if isinstance(v, list) and k != "fusion":
            v = tuple(v)
        if k == "n_epochs_by_model":
            v = {str(m): tuple(e) if isinstance(e, (list, tuple)) else (int(e),) for m, e in dict(v).items()}
        if k == "fusion":
            v = tuple(dict(item) for item in v)
        kwargs[k] = v
    return cls(**kwargs)


def config_from_dict(data: Mapping[str, Any]) -> ExperimentConfig:
    data = dict(data or {})
    if "schema_version" not in data:
        raise ValueError("config lacks schema_version")
    kwargs = {}
    for k, v in data.items():
        if k in _SECTIONS:
            kwargs[k] = _build(_SECTIONS[k], v or {}, k)
        elif k in ("models", "split"):
            kwargs[k] = tuple(v)
        else:
            kwargs[k] = v
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(kwargs) - known)
    if unknown:
        raise ValueError(f"unknown top-level config keys: {unknown}")
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return config_from_dict(yaml.safe_load(fh))


def dump_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))


def stage_seed(master: int, stage: str) -> int:
    """Stable 31-bit seed for a named stage."""
    h = hashlib.sha256(f"{int(master)}/{stage}".encode()).digest()
    return int.from_bytes(h[:4], "little") & 0x7FFFFFFF


# ---------------------------------------------------------------------------
# data and graphs
# ---------------------------------------------------------------------------


@dataclass
class PreparedData:
    mode: str
    panel: RegionalPanel
    scaled: RegionalPanel
    scaling: ScalingSpec
    split: SplitSpec
    synthetic: SyntheticDataset | None = None


def prepare_data(cfg: ExperimentConfig, mode: str) -> PreparedData:
    ds = None
    dc = cfg.dataset
    if dc.source == "synthetic":
        obs = reference_observed_panel(dc.observed_seed)
        sc = SynthConfig(T=dc.T, noise_scale=dc.noise_scale, noise_reference=dc.noise_reference, sigma_mode=mode,
                         seed=stage_seed(cfg.seed, "data"))
        ds = make_synthetic_panel(obs, sc)
        panel = ds.panel
    else:
        panel = load_panel_csv(dc.csv_path, fill=dc.csv_fill)
    missing = [c for c in dc.channels if c not in panel.channels]
    if missing:
        raise ValueError(f"panel lacks channels {missing}")
    split = chronological_split(panel.T, cfg.split)
    scaling = fit_minmax(panel, split.train)
    return PreparedData(mode, panel, apply_minmax(panel, scaling), scaling, split, ds)


def window_means(x: np.ndarray, window: int) -> np.ndarray:
    if window <= 1:
        return x
    m = x.shape[-1] // window
    return x[..., : m * window].reshape(*x.shape[:-1], m, window).mean(axis=-1)


def build_graph(source: str, data: PreparedData, gc: GraphConfig, channels: Sequence[str]) -> WeightedGraph:
    """Graphs are inferred from the training block only."""
    p = data.panel
    ids = p.region_ids
    train = data.scaled.slice_time(*data.split.train)
    if source == "identity":
        return identity_graph(p.n, ids)
    if source == "space":
        if p.coords is None:
            raise ValueError("space graph needs region coordinates")
        return geo_kernel_graph(p.coords, region_ids=ids)
    if source == "distsplines":
        g = distances_to_graph(spline_effect_distance(data.panel.slice_time(*data.split.train)), ids, "distsplines")
        return g
    signals = svd_reduce(train, channels, include_load=True)
    if source == "dtw":
        D = dtw_distance_matrix(window_means(signals, gc.dtw_window), gc.dtw_radius)
        return distances_to_graph(D, ids, "dtw")
    if source == "gl3sr-slot":
        res = learn_smooth_graph(window_means(signals, gc.dtw_window), gc.smooth_sparsity, region_ids=ids)
        return with_self_loops(res.graph.normalized())
    raise ValueError(f"unknown graph source {source!r}")


def build_graphs(cfg: ExperimentConfig, data: PreparedData) -> dict[str, WeightedGraph]:
    graphs = {s: build_graph(s, data, cfg.graphs, cfg.dataset.channels) for s in cfg.graphs.sources}
    for spec in cfg.graphs.fusion:
        parts = [graphs[name] for name in spec["parts"]]
        graphs[spec["name"]] = fuse_graphs(parts, spec["weights"], spec["name"])
    return graphs


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

RESULT_COLUMNS = ["dataset", "row", "model", "graph", "mape", "rmse", "batch_size", "n_layers", "hidden_channels",
                  "best_epoch", "val_loss", "n_params"]


@dataclass
class ResultsTable:
    rows: list[dict] = field(default_factory=list)

    def add(self, **row) -> None:
        if not (np.isfinite(row["mape"]) and np.isfinite(row["rmse"])):
            raise ExperimentError(f"non-finite metrics for {row['dataset']}/{row['row']}")
        self.rows.append(row)

    def get(self, dataset: str, row: str) -> dict:
        for r in self.rows:
            if r["dataset"] == dataset and r["row"] == row:
                return r
        raise KeyError(f"no result row {row!r} for dataset {dataset!r}")

    def names(self, dataset: str) -> list[str]:
        return [r["row"] for r in self.rows if r["dataset"] == dataset]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, RESULT_COLUMNS, lineterminator="\n")
            w.writeheader()
            for r in self.rows:
                w.writerow({k: _fmt(r.get(k, "")) for k in RESULT_COLUMNS})

    @classmethod
    def read_csv(cls, path) -> ResultsTable:
        frame = pd.read_csv(path, keep_default_na=False)
        rows = []
        for rec in frame.to_dict("records"):
            rec["mape"], rec["rmse"] = float(rec["mape"]), float(rec["rmse"])
            rows.append(rec)
        return cls(rows)


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.10g}"
    return v


def _slug(name: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", name.lower()).strip("_")


def mixture_groups(names: Sequence[str], baselines: Sequence[str], gnns: Sequence[str]) -> dict[str, list[str]]:
    """Three mixtures (baselines, GNNs, both) when both baselines and GNNs exist, otherwise one over everything."""
    if baselines and gnns:
        return {"Mixture (Baseline)": list(baselines), "Mixture (GNNs)": list(gnns),
                "Mixture (Baseline + GNNs)": list(baselines) + list(gnns)}
    return {"Mixture (all)": list(names)}


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------


@dataclass
class ExpertForecast:
    name: str
    regional: np.ndarray  # (n, T) in MW over the whole panel horizon used for mixtures
    meta: dict = field(default_factory=dict)


def unscaled_predictions(model, data: PreparedData, idx) -> np.ndarray:
    X, _ = panel_arrays(data.scaled, model.channels or None)
    return data.scaling.unscale_loads(predict(model, X[idx]).T)


def _grid_rows(grid: GridResult, data: PreparedData, idx_test) -> list[dict]:
    y = data.panel.loads[:, idx_test]
    rows = []
    for rank, (entry, res) in enumerate(zip(grid.ranking, grid.results), 1):
        yhat = unscaled_predictions(res.model, data, idx_test)
        rows.append({**{k: entry[k] for k in ("batch_size", "n_layers", "hidden_channels", "n_epochs", "best_epoch")},
                     "rank": rank, "val_loss": entry["val_loss"], "n_params": entry["n_params"],
                     "test_mape": national_mape(y, yhat), "test_rmse": national_rmse(y, yhat),
                     "selected": rank == 1})
    return rows


def _write_rows(rows: list[dict], path) -> None:
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})


class _Stages:
    def __init__(self, manifest: dict):
        self.manifest = manifest

    def run(self, name: str, fn, *args, **kwargs):
        t0 = time.perf_counter()
        entry = {"stage": name, "status": "running"}
        self.manifest["stages"].append(entry)
        try:
            out = fn(*args, **kwargs)
        except Exception as exc:
            entry.update(status="failed", error=f"{type(exc).__name__}: {exc}",
                         traceback=traceback.format_exc(limit=6))
            raise ExperimentError(f"stage {name} failed: {exc}") from exc
        entry.update(status="ok", seconds=round(time.perf_counter() - t0, 3))
        return out


def _dataset_dirs(out: Path, mode: str) -> dict[str, Path]:
    names = ("graphs", "checkpoints", "curves", "grids", "forecasts", "weights", "explain", "ale", "data")
    dirs = {k: out / k / mode for k in names}
    for d in dirs.values():
        d.mkdir(parents=True, exist_ok=True)
    return dirs


def _run_dataset(cfg: ExperimentConfig, mode: str, out: Path, stages: _Stages, table: ResultsTable,
                 manifest: dict) -> None:
    dirs = _dataset_dirs(out, mode)
    data = stages.run(f"data:{mode}", prepare_data, cfg, mode)
    if data.synthetic is not None:
        data.synthetic.write_sidecar(dirs["data"] / "synthetic.json")
    _write_slim_panel(data.panel, dirs["data"] / "panel.csv", cfg.dataset.channels)
    manifest["datasets"][mode] = {"T": data.panel.T, "n": data.panel.n, "split": {
        "train": list(data.split.train), "val": list(data.split.val), "test": list(data.split.test)}}

    graphs = stages.run(f"graphs:{mode}", build_graphs, cfg, data)
    for name, g in graphs.items():
        write_dense_csv(g, dirs["graphs"] / f"{name}.csv")
        write_edge_list(g, dirs["graphs"] / f"{name}_edges.csv")

    idx_test = data.split.indices("test")
    idx_mix = np.arange(data.split.val[0], data.split.test[1]) if cfg.mixture_warmup else idx_test
    y_test = data.panel.loads[:, idx_test]
    chans = tuple(cfg.dataset.channels)
    experts: dict[str, ExpertForecast] = {}
    models = {}

    def fit_network(kind: str, gname: str):
        graph = graphs[gname] if kind != "ffn" else identity_graph(data.panel.n, data.panel.region_ids)
        seed = stage_seed(cfg.seed, f"model:{mode}:{kind}:{gname}")
        grid = grid_search(cfg.grid.space(kind), data.scaled, data.split, graph, MODEL_KINDS[kind], chans, cfg.grid.lr,
                           seed)
        grid.best.model.scaling = data.scaling
        return grid

    for kind in cfg.gnn_models:
        for gname in graphs:
            label = f"{ROW_LABEL[kind]}-{gname}"
            grid = stages.run(f"model:{mode}:{kind}:{gname}", fit_network, kind, gname)
            _record_network(label, kind, gname, grid, data, dirs, idx_test, idx_mix, y_test, table, experts, mode)
            models[(kind, gname)] = grid.best.model
    for base in cfg.baselines:
        if base == "ffn":
            grid = stages.run(f"model:{mode}:ffn", fit_network, "ffn", "identity")
            _record_network("FFN", "ffn", "none", grid, data, dirs, idx_test, idx_mix, y_test, table, experts, mode)
        else:
            gams = stages.run(f"gam:{mode}", fit_gam_regions, data.panel, data.split, k=cfg.gam.k,
                              ridge=cfg.gam.ridge, spline_channels=cfg.gam.spline_channels,
                              linear_channels=cfg.gam.linear_channels,
                              categorical_channels=cfg.gam.categorical_channels)
            pred = predict_gam_regions(gams, data.panel)
            for i, m in enumerate(gams):
                (dirs["checkpoints"] / f"gam_{i:02d}.txt").write_text(m.dumps())
            label = ROW_LABEL["gam"]
            experts[label] = ExpertForecast(label, pred[:, idx_mix])
            table.add(dataset=mode, row=label, model="gam", graph="none", mape=national_mape(y_test, pred[:, idx_test]),
                      rmse=national_rmse(y_test, pred[:, idx_test]))

    _write_forecasts(data, experts, idx_mix, idx_test, dirs["forecasts"])

    if cfg.mixtures and experts:
        names = list(experts)
        base_names = [n for n in names if n in (ROW_LABEL["gam"], ROW_LABEL["ffn"])]
        gnn_names = [n for n in names if n not in base_names]
        national = {n: e.regional.sum(axis=0) for n, e in experts.items()}
        target = data.panel.loads[:, idx_mix].sum(axis=0)
        off = len(idx_mix) - len(idx_test)
        mix_cols = {}
        for mix_name, members in mixture_groups(names, base_names, gnn_names).items():
            res = stages.run(f"mixture:{mode}:{_slug(mix_name)}", aggregate_forecasts, members,
                             np.stack([national[m] for m in members]), target)
            test_res = AggregationResult(res.names, res.prediction[off:], res.weights[:, off:])
            test_res.write_weights(dirs["weights"] / f"{_slug(mix_name)}.csv")
            yhat = res.prediction[off:]
            ynat = y_test.sum(axis=0)
            mape = float(np.mean(np.abs((ynat - yhat) / ynat)) * 100)
            rmse = float(np.sqrt(np.mean((ynat - yhat) ** 2)))
            table.add(dataset=mode, row=mix_name, model="mixture", graph="+".join(members), mape=mape, rmse=rmse)
            mix_cols[mix_name] = yhat
        if mix_cols:
            frame = pd.DataFrame({"Date": _dates(data.panel, idx_test), "Load": y_test.sum(axis=0),
                                  **{n: national[n][off:] for n in names}, **mix_cols})
            frame.to_csv(dirs["forecasts"] / "national.csv", index=False, float_format="%.10g")

    ex = cfg.explain
    if ex.enabled and ex.dataset == mode:
        key = (ex.model, ex.graph)
        if key not in models:
            raise ExperimentError(f"explain target {ex.model}-{ex.graph} was not trained on {mode}")
        stages.run(f"explain:{mode}", _explain, models[key], data, ex, dirs)


def _record_network(label, kind, gname, grid, data, dirs, idx_test, idx_mix, y_test, table, experts, mode):
    best = grid.best
    slug = _slug(label)
    save_checkpoint(best.model, dirs["checkpoints"] / f"{slug}.json")
    best.write_curve(dirs["curves"] / f"{slug}.csv")
    rows = _grid_rows(grid, data, idx_test)
    _write_rows(rows, dirs["grids"] / f"{slug}.csv")
    pred = unscaled_predictions(best.model, data, idx_mix)
    experts[label] = ExpertForecast(label, pred)
    off = len(idx_mix) - len(idx_test)
    top = grid.ranking[0]
    table.add(dataset=mode, row=label, model=kind, graph=gname, mape=national_mape(y_test, pred[:, off:]),
              rmse=national_rmse(y_test, pred[:, off:]), batch_size=top["batch_size"], n_layers=top["n_layers"],
              hidden_channels=top["hidden_channels"], best_epoch=top["best_epoch"], val_loss=top["val_loss"],
              n_params=top["n_params"])


def _dates(panel: RegionalPanel, idx) -> list[str]:
    return [str(t) for t in panel.timestamps[idx].astype("datetime64[m]")]


def _write_slim_panel(panel: RegionalPanel, path, channels) -> None:
    frames = []
    stamps = _dates(panel, slice(None))
    for i, rid in enumerate(panel.region_ids):
        f = {"Date": stamps, "Region": rid, "Load": panel.loads[i]}
        for c in channels:
            f[c] = panel.channel(c)[i]
        frames.append(pd.DataFrame(f))
    pd.concat(frames, ignore_index=True).to_csv(path, index=False, float_format="%.10g")


def _write_forecasts(data: PreparedData, experts: dict[str, ExpertForecast], idx_mix, idx_test, folder: Path) -> None:
    off = len(idx_mix) - len(idx_test)
    stamps = _dates(data.panel, idx_test)
    frames = []
    for i, rid in enumerate(data.panel.region_ids):
        f = {"Date": stamps, "Region": rid, "Load": data.panel.loads[i, idx_test]}
        for name, e in experts.items():
            f[name] = e.regional[i, off:]
        frames.append(pd.DataFrame(f))
    pd.concat(frames, ignore_index=True).to_csv(folder / "regional.csv", index=False, float_format="%.10g")


def pick_explain_date(panel: RegionalPanel, split: SplitSpec, date: str | None) -> str:
    if date is not None:
        return date
    days = panel.timestamps.astype("datetime64[D]")
    uniq, counts = np.unique(days, return_counts=True)
    full = uniq[counts == 48]
    june = [d for d in full if str(d)[5:7] == "06"]
    if june:
        return str(june[0])
    first_test = days[split.test[0]]
    later = [d for d in full if d >= first_test]
    if not later:
        raise ValueError("no complete day available to explain")
    return str(later[0])


def ale_generator_correlation(curve, data: PreparedData, node: int, central: float = 0.9) -> float:
    """Correlation between an ALE curve (scaled units) and the generating spline, over the central
    ``central`` mass of the node's temperature distribution."""
    if data.synthetic is None:
        raise ValueError("generator comparison needs a synthetic dataset")
    k = data.panel.channels.index(curve.feature)
    lo_s, hi_s = data.scaling.feat_min[node, k], data.scaling.feat_max[node, k]
    temps = lo_s + curve.edges * (hi_s - lo_s)
    raw = data.panel.channel(curve.feature)[node]
    q = (1 - central) / 2
    lo, hi = np.quantile(raw, [q, 1 - q])
    sel = (temps >= lo) & (temps <= hi)
    if sel.sum() < 3:
        raise ValueError("too few ALE edges in the central range; use more bins")
    spline = data.synthetic.splines[node](temps[sel])
    return float(np.corrcoef(curve.effect[sel], spline)[0, 1])


def _explain(model, data: PreparedData, ex: ExplainConfig, dirs) -> dict:
    date = pick_explain_date(data.panel, data.split, ex.date)
    day_indices(data.panel, date)
    imp = explain_day(model, data.scaled, date, size_coef=ex.size_coef, entropy_coef=ex.entropy_coef,
                      steps=ex.steps, lr=ex.lr)
    write_importance(imp, data.panel.region_ids, dirs["explain"] / "importance.csv",
                     dirs["explain"] / "importance_edges.csv")
    (dirs["explain"] / "date.txt").write_text(date + "\n")
    rows, summary = [], []
    idx = data.split.indices("train")
    for i, rid in enumerate(data.panel.region_ids):
        curve = ale_curve(model, data.scaled, "Temperature", i, ex.ale_bins, idx)
        k = data.panel.channels.index("Temperature")
        lo_s, hi_s = data.scaling.feat_min[i, k], data.scaling.feat_max[i, k]
        temps = lo_s + curve.edges * (hi_s - lo_s)
        spline = None
        if data.synthetic is not None:
            s = data.synthetic.splines[i](temps)
            w = np.concatenate([[0.0], curve.counts]) + np.concatenate([curve.counts, [0.0]])
            spline = s - np.sum(w * s) / w.sum()
            summary.append({"region": rid, "corr": ale_generator_correlation(curve, data, i)})
        for b in range(len(curve.counts)):
            rows.append({"region": rid, "bin_left": curve.edges[b], "bin_right": curve.edges[b + 1],
                         "temp_left": temps[b], "temp_right": temps[b + 1],
                         "effect": curve.effect[b + 1] * (data.scaling.load_max[i] - data.scaling.load_min[i]),
                         "count": int(curve.counts[b]),
                         "spline_effect": "" if spline is None else spline[b + 1]})
    _write_rows(rows, dirs["ale"] / "temperature.csv")
    _write_rows(summary, dirs["ale"] / "summary.csv")
    return {"date": date}


def run_experiment(cfg: ExperimentConfig, out) -> ResultsTable:
    """Run every configured stage; writes ``results.csv`` and ``manifest.json`` under ``out``.

    On failure the manifest records the failing stage and an
    :class:`ExperimentError` is raised.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.yaml")
    manifest = {"schema_version": SCHEMA_VERSION, "config": cfg.to_dict(), "seed": cfg.seed,
                "stage_seeds": {}, "datasets": {}, "stages": [], "status": "running"}
    stages = _Stages(manifest)
    table = ResultsTable()
    t0 = time.perf_counter()
    modes = cfg.dataset.sigma_modes if cfg.dataset.source == "synthetic" else ("csv",)
    manifest["stage_seeds"]["data"] = stage_seed(cfg.seed, "data")
    try:
        for mode in modes:
            _run_dataset(cfg, mode, out, stages, table, manifest)
        for e in manifest["stages"]:
            if e["stage"].startswith("model:"):
                manifest["stage_seeds"][e["stage"]] = stage_seed(cfg.seed, e["stage"])
        table.write_csv(out / "results.csv")
        manifest["status"] = "ok"
    except Exception as exc:
        manifest["status"] = "failed"
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        if table.rows:
            table.write_csv(out / "results_partial.csv")
        raise ExperimentError(str(exc)) from exc
    finally:
        manifest["seconds"] = round(time.perf_counter() - t0, 3)
        (out / "manifest.json").write_text(json.dumps(_plain(manifest), indent=1))
    return table


# ---------------------------------------------------------------------------
# plot data
# ---------------------------------------------------------------------------


def _need(path: Path) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"missing artifact {path}")
    return path


def emit_plot_data(results_dir, out=None) -> dict[str, Path]:
    """One plot-ready CSV per artifact under ``<results_dir>/plots`` (or ``out``)."""
    root = Path(results_dir)
    cfg = load_config(_need(root / "config.yaml"))
    manifest = json.loads(_need(root / "manifest.json").read_text())
    if manifest.get("status") != "ok":
        raise ValueError(f"experiment in {root} did not complete (status {manifest.get('status')!r})")
    dest = Path(out) if out is not None else root / "plots"
    dest.mkdir(parents=True, exist_ok=True)
    written = {}
    modes = list(manifest["datasets"])

    # space graph
    for mode in modes[:1]:
        gpath = root / "graphs" / mode / "space.csv"
        if gpath.exists():
            frame = pd.read_csv(gpath)
            frame.to_csv(dest / "space_graph.csv", index=False)
            written["space_graph"] = dest / "space_graph.csv"

    # generated temperature and load: first two weeks of the first region
    frame = pd.read_csv(_need(root / "data" / modes[0] / "panel.csv"))
    first = frame[frame["Region"] == frame["Region"].iloc[0]].head(14 * 48)
    first.to_csv(dest / "generated_series.csv", index=False)
    written["generated_series"] = dest / "generated_series.csv"

    # boxplot of grid test errors
    rows = []
    for mode in modes:
        for r in ResultsTable.read_csv(_need(root / "results.csv")).rows:
            if r["dataset"] != mode or r["model"] not in MODEL_KINDS:
                continue
            g = pd.read_csv(_need(root / "grids" / mode / f"{_slug(r['row'])}.csv"))
            g.insert(0, "row", r["row"])
            g.insert(0, "dataset", mode)
            rows.append(g)
    if rows:
        box = pd.concat(rows, ignore_index=True)
        box.to_csv(dest / "grid_errors.csv", index=False)
        written["grid_errors"] = dest / "grid_errors.csv"

    ex = cfg.explain
    if ex.enabled:
        imp = _need(root / "explain" / ex.dataset / "importance.csv")
        pd.read_csv(imp).to_csv(dest / "explanation.csv", index=False)
        written["explanation"] = dest / "explanation.csv"
        ale = _need(root / "ale" / ex.dataset / "temperature.csv")
        pd.read_csv(ale).to_csv(dest / "ale_temperature.csv", index=False)
        written["ale_temperature"] = dest / "ale_temperature.csv"

    if cfg.mixtures:
        frames = []
        for mode in modes:
            folder = root / "weights" / mode
            files = sorted(folder.glob("*.csv"))
            if not files:
                raise FileNotFoundError(f"missing artifact {folder}/*.csv")
            for f in files:
                w = pd.read_csv(f)
                w.insert(0, "mixture", f.stem)
                w.insert(0, "dataset", mode)
                frames.append(w)
        pd.concat(frames, ignore_index=True).to_csv(dest / "mixture_weights.csv", index=False)
        written["mixture_weights"] = dest / "mixture_weights.csv"
    return written


def replace_seed(cfg: ExperimentConfig, seed: int | None) -> ExperimentConfig:
    return cfg if seed is None else replace(cfg, seed=int(seed))
