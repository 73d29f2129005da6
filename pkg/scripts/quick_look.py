#!/usr/bin/env python3
"""Two-week S0-vs-S2 comparison: a fast feel for what compensation buys.

    python scripts/quick_look.py [--days 14] [--seed 42]
"""

import argparse
from dataclasses import replace

import numpy as np

from bemsim.config import default_config
from bemsim.metrics import metric_weights, ware
from bemsim.scenarios import run_all


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--days", type=int, default=14)
    ap.add_argument("--seed", type=int, default=42)
    args = ap.parse_args()
    world = replace(default_config(), seed=args.seed,
                    year_steps=args.days * 48)
    results = run_all(world, ("S0", "S2"))
    w = metric_weights(world.building)
    print(f"{args.days} days from January 1, seed {args.seed}")
    for sid, res in results.items():
        m = res.metrics
        daily = [float(np.mean(ware(res.eps_resid[d * 48:(d + 1) * 48], w)))
                 for d in range(args.days)]
        bars = "".join("#" if v > 0.03 else "+" if v > 0.01 else "."
                       for v in daily)
        print(f"{sid}: wmare {m['wmare_K'] * 1e3:6.2f}e-3 K   "
              f"rmse {m['rmse_tracking_K'] * 1e3:6.2f}e-3 K   per-day [{bars}]")
    print("legend: '.' < 10e-3 K, '+' < 30e-3 K, '#' above")


if __name__ == "__main__":
    main()
