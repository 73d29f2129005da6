#!/usr/bin/env python3
"""Run the full S0-S5 data-availability study and write all outputs.

Equivalent to `bemsim run --scenario all`, kept as a script entry point
for experiment workflows:

    python scripts/run_study.py --out out_study --jobs 2 [--seed 42]
"""

import argparse
import sys

from bemsim.cli import main as cli_main


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out_study")
    ap.add_argument("--config", default=None)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--jobs", type=int, default=2)
    ap.add_argument("--year-steps", type=int, default=None)
    args = ap.parse_args()
    argv = ["run", "--scenario", "all", "--out", args.out,
            "--jobs", str(args.jobs)]
    if args.config:
        argv += ["--config", args.config]
    if args.seed is not None:
        argv += ["--seed", str(args.seed)]
    if args.year_steps is not None:
        argv += ["--year-steps", str(args.year_steps)]
    return cli_main(argv)


if __name__ == "__main__":
    sys.exit(main())
