"""Manifold vs Cartesian stage one at equal budget and seeds.

Writes each seed's paired traces, a ``curves.csv`` with every best-so-far
curve side by side, and prints both median final MSEs.

    python scripts/manifold_comparison.py --seeds 0 1 2 3 4 5 6 7 8 9 --budget 100
"""
import argparse
import csv
import json
from pathlib import Path

import numpy as np

from cardiovi.config import load_config
from cardiovi.experiments import run_manifold_comparison


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=list(range(10)))
    ap.add_argument("--budget", type=int, default=100)
    ap.add_argument("--out", default="runs/manifold")
    args = ap.parse_args()
    out = Path(args.out)
    finals = {"manifold": [], "cartesian": []}
    curves = {}
    for seed in args.seeds:
        cfg = load_config(None, [f"stage1.budget={args.budget}"], seed=seed, out=str(out / f"seed{seed}"))
        rep = run_manifold_comparison(cfg)
        for kind in finals:
            finals[kind].append(rep[f"final_mse_{kind}"])
            rows = list(csv.DictReader((out / f"seed{seed}" / f"trace_{kind}.csv").open()))
            curves[f"{kind}_seed{seed}"] = [float(r["best_so_far"]) for r in rows]
        print(json.dumps({"seed": seed, "manifold": rep["final_mse_manifold"], "cartesian": rep["final_mse_cartesian"]}), flush=True)
    with (out / "curves.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        names = sorted(curves)
        w.writerow(["iter"] + names)
        for i in range(args.budget):
            w.writerow([i] + [repr(curves[n][i]) for n in names])
    med = {k: float(np.median(v)) for k, v in finals.items()}
    print(json.dumps({"median_final_mse": med, "manifold_not_worse": med["manifold"] <= med["cartesian"]}))


if __name__ == "__main__":
    main()
