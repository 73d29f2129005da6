"""Command-line interface.

    bemsim run --scenario S0..S5|all [--config FILE] [--out DIR] [--seed N]
               [--year-steps N] [--data CSV] [--jobs N]
    bemsim metrics --log steps_S1.csv [--config FILE]
    bemsim gen-data [--config FILE] --out data.csv [--year-steps N]

Exit code 0 on success, nonzero with a message on stderr otherwise.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .config import default_config, load_config, save_config
from .datagen import generate_span, load_csv, write_csv
from .outputs import read_scenario_log, recompute_metrics, write_outputs
from .scenarios import SCENARIO_IDS, DependencyError, run_all


def _world(args):
    world = load_config(args.config) if args.config else default_config()
    if getattr(args, "seed", None) is not None:
        world = replace(world, seed=args.seed)
    if getattr(args, "year_steps", None) is not None:
        world = replace(world, year_steps=args.year_steps)
    return world


def _cmd_run(args) -> int:
    world = _world(args)
    sids = list(SCENARIO_IDS) if args.scenario == "all" else [args.scenario]
    data_frame = None
    if args.data:
        frame = load_csv(args.data, world.clock)
        need = world.year_steps + world.control.np_steps
        if frame.n < need:
            print(f"error: --data must cover {need} steps "
                  f"(year + horizon), got {frame.n}", file=sys.stderr)
            return 2
        data_frame = frame
    try:
        results = run_all(world, sids, jobs=args.jobs, data_frame=data_frame)
    except DependencyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    files = write_outputs(results, world, args.out)
    for sid, res in results.items():
        m = res.metrics
        print(f"{sid}: wmare={m['wmare_K']:.6f} K  wmre={m['wmre_K']:+.6f} K  "
              f"rmse={m['rmse_tracking_K']:.6f} K  "
              f"({res.runtime_s:.1f} s, {int(m['failsafe_steps'])} failsafe)")
    print(f"wrote {len(files)} files to {args.out}")
    return 0


def _cmd_metrics(args) -> int:
    world = _world(args)
    log = read_scenario_log(args.log)
    agg, monthly = recompute_metrics(log, world)
    for key, val in agg.items():
        print(f"{key}: {val:.9f}")
    print("month,wmare_K,wmre_K,rmse_tracking_K")
    for j, m in enumerate(monthly["month"]):
        print(f"{m},{monthly['wmare'][j]:.9f},{monthly['wmre'][j]:.9f},"
              f"{monthly['rmse'][j]:.9f}")
    return 0


def _cmd_gen_data(args) -> int:
    world = _world(args)
    clock = world.clock
    n = (args.year_steps or world.year_steps) + world.control.np_steps
    frame = generate_span(replace(world.gen, seed=world.seed_frame_study), clock,
                          n, start=clock.steps_per_year)
    write_csv(frame, clock, args.out)
    print(f"wrote {frame.n} steps to {args.out}")
    return 0


def _cmd_init_config(args) -> int:
    save_config(default_config(), args.out)
    print(f"wrote default configuration to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bemsim", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run scenarios and write outputs")
    run_p.add_argument("--scenario", required=True,
                       choices=list(SCENARIO_IDS) + ["all"])
    run_p.add_argument("--config", help="JSON configuration file")
    run_p.add_argument("--out", default="out", help="output directory")
    run_p.add_argument("--seed", type=int, help="override the base seed")
    run_p.add_argument("--year-steps", type=int, dest="year_steps",
                       help="shorten the study span (steps of ts hours)")
    run_p.add_argument("--data", help="study-year CSV instead of generated data")
    run_p.add_argument("--jobs", type=int, default=1,
                       help="parallel scenario workers")
    run_p.set_defaults(fn=_cmd_run)

    met_p = sub.add_parser("metrics", help="recompute metrics from a step log")
    met_p.add_argument("--log", required=True)
    met_p.add_argument("--config", help="JSON configuration file")
    met_p.set_defaults(fn=_cmd_metrics)

    gen_p = sub.add_parser("gen-data", help="write a synthetic data CSV")
    gen_p.add_argument("--config", help="JSON configuration file")
    gen_p.add_argument("--out", required=True)
    gen_p.add_argument("--seed", type=int, help="override the base seed")
    gen_p.add_argument("--year-steps", type=int, dest="year_steps")
    gen_p.set_defaults(fn=_cmd_gen_data)

    cfg_p = sub.add_parser("init-config", help="write the default config file")
    cfg_p.add_argument("--out", default="bemsim.json")
    cfg_p.set_defaults(fn=_cmd_init_config)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
