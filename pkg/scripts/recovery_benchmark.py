"""Recovery benchmark: full two-stage runs on the default shell over several seeds.

Prints one line per seed and the median MSE ratio (final / prior mean).

    python scripts/recovery_benchmark.py --seeds 0 1 2 3 4 --out runs/recovery
"""
import argparse
import json
import time
from pathlib import Path

import numpy as np

from cardiovi.config import load_config
from cardiovi.experiments import run_recovery


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--out", default="runs/recovery")
    ap.add_argument("--set", action="append", default=[], metavar="PATH=VALUE")
    args = ap.parse_args()
    rows = []
    for seed in args.seeds:
        cfg = load_config(None, args.set, seed=seed, out=str(Path(args.out) / f"seed{seed}"))
        t = time.perf_counter()
        rep = run_recovery(cfg)
        rows.append({"seed": seed, "mse_ratio": rep["mse_ratio"], "seconds": round(time.perf_counter() - t, 1)})
        print(json.dumps(rows[-1]), flush=True)
    print("median mse_ratio:", float(np.median([r["mse_ratio"] for r in rows])))


if __name__ == "__main__":
    main()
