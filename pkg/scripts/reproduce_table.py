"""Run one experiment config over several seeds and print median MAPE/RMSE per row.

    python3 scripts/reproduce_table.py configs/acceptance_correlated.yaml --seeds 0 1 2 --out runs/table
"""
import argparse
from pathlib import Path

import pandas as pd

from gnnload.experiment import load_config, replace_seed, run_experiment


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("config")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--out", default="runs/table")
    args = ap.parse_args()
    out = Path(args.out)
    frames = []
    for seed in args.seeds:
        cfg = replace_seed(load_config(args.config), seed)
        table = run_experiment(cfg, out / f"seed{seed}")
        f = pd.DataFrame(table.rows)
        f["seed"] = seed
        frames.append(f)
    allr = pd.concat(frames, ignore_index=True)
    allr.to_csv(out / "all_seeds.csv", index=False)
    med = allr.groupby(["dataset", "row"], sort=False)[["mape", "rmse"]].median()
    med.to_csv(out / "median.csv")
    with pd.option_context("display.float_format", "{:.3f}".format):
        print(med)


if __name__ == "__main__":
    main()
