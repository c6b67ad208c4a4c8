"""Command line entry point: ``gnnload <subcommand> --config C --seed S --out DIR``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from .aggregation import aggregate_forecasts
from .core_data import national_mape, national_rmse, regional_rmse
from .experiment import (
    MODEL_KINDS,
    ROW_LABEL,
    ExperimentConfig,
    ExperimentError,
    _slug,
    build_graphs,
    emit_plot_data,
    load_config,
    pick_explain_date,
    prepare_data,
    replace_seed,
    run_experiment,
    stage_seed,
)
from .explain import ale_curve, explain_day, write_importance
from .graphs import identity_graph, write_dense_csv, write_edge_list
from .nn import TrainConfig, build_model, grid_search, load_checkpoint, save_checkpoint, train

log = logging.getLogger("gnnload")

SUBCOMMANDS = ("gen-synthetic", "infer-graph", "train", "gridsearch", "aggregate", "explain", "evaluate", "run",
               "emit-plots")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    return replace_seed(cfg, args.seed)


def cmd_gen_synthetic(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    from .core_data import write_panel_csv

    for mode in cfg.dataset.sigma_modes:
        data = prepare_data(cfg, mode)
        write_panel_csv(data.panel, out / f"panel_{mode}.csv")
        if data.synthetic is not None:
            data.synthetic.write_sidecar(out / f"panel_{mode}.json")
    return 0


def cmd_infer_graph(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = prepare_data(cfg, cfg.dataset.sigma_modes[0])
    for name, g in build_graphs(cfg, data).items():
        write_dense_csv(g, out / f"{name}.csv")
        write_edge_list(g, out / f"{name}_edges.csv")
    return 0


def _networks(cfg: ExperimentConfig):
    for kind in cfg.models:
        if kind in ("gcn", "sage"):
            for g in cfg.graphs.sources:
                yield kind, g
        elif kind == "ffn":
            yield kind, "identity"


def cmd_train(args) -> int:
    """One training run per (model, graph) at the first value of every grid axis."""
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mode = cfg.dataset.sigma_modes[0]
    data = prepare_data(cfg, mode)
    graphs = build_graphs(cfg, data)
    gr = cfg.grid
    for kind, gname in _networks(cfg):
        graph = graphs[gname] if kind != "ffn" else identity_graph(data.panel.n, data.panel.region_ids)
        seed = stage_seed(cfg.seed, f"train:{mode}:{kind}:{gname}")
        model = build_model(MODEL_KINDS[kind], gr.n_layers[0], gr.hidden_channels[0], len(cfg.dataset.channels),
                            graph, seed, cfg.dataset.channels, data.scaling)
        epochs = gr.space(kind)["n_epochs"][0]
        res = train(model, data.scaled, data.split, TrainConfig(gr.batch_size[0], epochs, gr.lr, seed=seed))
        slug = _slug(f"{ROW_LABEL[kind]}-{gname}" if kind != "ffn" else "FFN")
        save_checkpoint(res.model, out / f"{slug}.json")
        res.write_curve(out / f"{slug}_curve.csv")
        print(f"{slug}: best epoch {res.best_epoch}, val loss {res.best_val:.6g}")
    return 0


def cmd_gridsearch(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mode = cfg.dataset.sigma_modes[0]
    data = prepare_data(cfg, mode)
    graphs = build_graphs(cfg, data)
    for kind, gname in _networks(cfg):
        graph = graphs[gname] if kind != "ffn" else identity_graph(data.panel.n, data.panel.region_ids)
        seed = stage_seed(cfg.seed, f"model:{mode}:{kind}:{gname}")
        res = grid_search(cfg.grid.space(kind), data.scaled, data.split, graph, MODEL_KINDS[kind], cfg.dataset.channels,
                          cfg.grid.lr, seed)
        res.best.model.scaling = data.scaling
        slug = _slug(f"{ROW_LABEL[kind]}-{gname}" if kind != "ffn" else "FFN")
        res.write_csv(out / f"{slug}_grid.csv")
        save_checkpoint(res.best.model, out / f"{slug}.json")
        res.best.write_curve(out / f"{slug}_curve.csv")
        print(f"{slug}: best {res.ranking[0]}")
    return 0


def _read_national(path):
    frame = pd.read_csv(path)
    if "Load" not in frame.columns:
        raise ValueError(f"{path} needs a Load column")
    experts = [c for c in frame.columns if c not in ("Date", "Load", "Region")]
    if "Region" in frame.columns:
        frame = frame.groupby("Date", sort=True)[["Load", *experts]].sum().reset_index()
    return frame, experts


def cmd_aggregate(args) -> int:
    """ML-Poly over the expert columns of a forecast CSV (regional rows are summed first)."""
    if not args.forecasts:
        raise SystemExit("aggregate needs --forecasts <csv>")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    frame, experts = _read_national(args.forecasts)
    if args.experts:
        experts = [e for e in args.experts.split(",")]
    res = aggregate_forecasts(experts, frame[experts].to_numpy().T, frame["Load"].to_numpy())
    res.write_weights(out / "weights.csv")
    mix = frame[["Date", "Load"]].copy() if "Date" in frame else frame[["Load"]].copy()
    mix["Mixture"] = res.prediction
    mix.to_csv(out / "mixture.csv", index=False, float_format="%.10g")
    y = frame["Load"].to_numpy()
    print(f"mixture RMSE {np.sqrt(np.mean((y - res.prediction) ** 2)):.6g} MW")
    return 0


def cmd_explain(args) -> int:
    cfg = _config(args)
    if not args.checkpoint:
        raise SystemExit("explain needs --checkpoint <model.json>")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = load_checkpoint(args.checkpoint)
    ex = cfg.explain
    data = prepare_data(cfg, ex.dataset if ex.dataset in cfg.dataset.sigma_modes else cfg.dataset.sigma_modes[0])
    date = pick_explain_date(data.panel, data.split, args.date or ex.date)
    imp = explain_day(model, data.scaled, date, size_coef=ex.size_coef, entropy_coef=ex.entropy_coef,
                      steps=ex.steps, lr=ex.lr)
    write_importance(imp, data.panel.region_ids, out / "importance.csv", out / "importance_edges.csv")
    idx = data.split.indices("train")
    for i, rid in enumerate(data.panel.region_ids):
        ale_curve(model, data.scaled, "Temperature", i, ex.ale_bins, idx).write_csv(out / f"ale_{rid}.csv")
    print(f"explained {date}")
    return 0


def cmd_evaluate(args) -> int:
    """National MAPE/RMSE of every forecast column of a regional forecast CSV."""
    if not args.forecasts:
        raise SystemExit("evaluate needs --forecasts <csv>")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    frame = pd.read_csv(args.forecasts)
    experts = [c for c in frame.columns if c not in ("Date", "Region", "Load")]
    rows = []
    if "Region" in frame.columns:
        wide = {c: frame.pivot(index="Region", columns="Date", values=c).to_numpy() for c in ["Load", *experts]}
        for e in experts:
            rows.append({"forecast": e, "mape": national_mape(wide["Load"], wide[e]),
                         "rmse": national_rmse(wide["Load"], wide[e]),
                         "max_regional_rmse": float(regional_rmse(wide["Load"], wide[e]).max())})
    else:
        y = frame["Load"].to_numpy()[None]
        for e in experts:
            yh = frame[e].to_numpy()[None]
            rows.append({"forecast": e, "mape": national_mape(y, yh), "rmse": national_rmse(y, yh)})
    pd.DataFrame(rows).to_csv(out / "metrics.csv", index=False, float_format="%.10g")
    for r in rows:
        print(f"{r['forecast']}: MAPE {r['mape']:.4f}%  RMSE {r['rmse']:.2f} MW")
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    try:
        table = run_experiment(cfg, args.out)
    except ExperimentError as exc:
        print(f"experiment failed: {exc} (see {Path(args.out) / 'manifest.json'})", file=sys.stderr)
        return 2
    for r in table.rows:
        print(f"{r['dataset']:<12} {r['row']:<28} MAPE {r['mape']:.3f}%  RMSE {r['rmse']:.1f} MW")
    return 0


def cmd_emit_plots(args) -> int:
    results = args.results or args.out
    written = emit_plot_data(results, args.out if args.results else None)
    for k, p in written.items():
        print(f"{k}: {p}")
    return 0


HANDLERS = {
    "gen-synthetic": cmd_gen_synthetic,
    "infer-graph": cmd_infer_graph,
    "train": cmd_train,
    "gridsearch": cmd_gridsearch,
    "aggregate": cmd_aggregate,
    "explain": cmd_explain,
    "evaluate": cmd_evaluate,
    "run": cmd_run,
    "emit-plots": cmd_emit_plots,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gnnload", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=(HANDLERS[name].__doc__ or "").strip().split("\n")[0] or None)
        p.add_argument("--config", help="YAML experiment config (defaults used when omitted)")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
        p.add_argument("--out", required=True, help="output directory")
        if name in ("aggregate", "evaluate"):
            p.add_argument("--forecasts", help="forecast CSV (Date[,Region],Load,<expert columns>)")
        if name == "aggregate":
            p.add_argument("--experts", help="comma-separated subset of expert columns")
        if name == "explain":
            p.add_argument("--checkpoint", help="model checkpoint JSON")
            p.add_argument("--date", help="day to explain (YYYY-MM-DD)")
        if name == "emit-plots":
            p.add_argument("--results", help="experiment directory (defaults to --out)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return HANDLERS[args.command](args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
