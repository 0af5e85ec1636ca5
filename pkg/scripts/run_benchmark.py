#!/usr/bin/env python3
"""Cost-versus-RMSE benchmark with slope regression.

Runs the packaged benchmark command for crude and multilevel Monte
Carlo over a geometric n ladder, then regresses log(cost_units) on
log(achieved_rmse) per method.  The theoretical slopes at alpha = 1
are -3 for the single-resolution baseline (cost n^3, error 1/n) and
-2 for the multilevel estimator up to log factors.  Emits the raw CSV
to --out and a JSON slope summary to stdout; no plotting on purpose,
the CSV is the figure data.
"""

import argparse
import csv
import io
import json

import numpy as np

from mlmc_euler.cli import main as cli_main


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n-list", default="16,32,64,128,256,512")
    parser.add_argument("--replications", type=int, default=40)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--x0", type=float, default=1.0)
    parser.add_argument("--mu", type=float, default=0.05)
    parser.add_argument("--vol", type=float, default=0.2)
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--out", default="benchmark.csv")
    args = parser.parse_args()

    argv = [
        "benchmark",
        "--n-list", args.n_list,
        "--replications", str(args.replications),
        "--seed", str(args.seed),
        "--x0", str(args.x0),
        "--mu", str(args.mu),
        "--vol", str(args.vol),
        "--out", args.out,
    ]
    if args.threads is not None:
        argv += ["--threads", str(args.threads)]
    code = cli_main(argv)
    if code != 0:
        raise SystemExit(code)

    with open(args.out, newline="") as handle:
        rows = list(csv.DictReader(handle))
    slopes = {}
    for method in sorted({row["method"] for row in rows}):
        cost = np.log([float(r["cost_units"]) for r in rows if r["method"] == method])
        rmse = np.log([float(r["achieved_rmse"]) for r in rows if r["method"] == method])
        slopes[method] = float(np.polyfit(rmse, cost, 1)[0])
    print(json.dumps({"csv": args.out, "slopes": slopes}, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
