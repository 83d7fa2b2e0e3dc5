#!/usr/bin/env python3
"""Write the drive waveform of one parameter point of a config as CSV (f/2pi in MHz)."""
import argparse
import sys
from pathlib import Path

import pandas as pd

from analysis.errors import InvalidArgument
from analysis.logs import add_logging_args, setup_logging
from simulation.config import ExperimentConfig, load_config
from waveforms.schedules import sample_schedule


def dump_schedule(cfg: ExperimentConfig, point: int = 0, dt: float = 0.01,
                  hold_time: float | None = None) -> pd.DataFrame:
    points = cfg.schedule.delta_end
    if not 0 <= point < len(points):
        raise InvalidArgument(f"point {point} out of range 0..{len(points) - 1}")
    hold = max(cfg.hold_times) if hold_time is None else hold_time
    lattice = cfg.lattice.build()
    schedule = cfg.schedule.build(lattice, points[point], hold)
    return sample_schedule(schedule, dt)


def build_parser(ap: argparse.ArgumentParser | None = None) -> argparse.ArgumentParser:
    ap = ap or argparse.ArgumentParser(description="Dump a drive schedule as CSV.")
    ap.add_argument("config", help="experiment YAML")
    ap.add_argument("--point", type=int, default=0, help="index into schedule.delta_end")
    ap.add_argument("--dt", type=float, default=0.01, help="sample spacing (us)")
    ap.add_argument("--hold", type=float, default=None, help="hold time (us), default the longest")
    ap.add_argument("--out", default=None, help="CSV path (default stdout)")
    add_logging_args(ap)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level, args.log_format)
    table = dump_schedule(load_config(args.config), args.point, args.dt, args.hold)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        table.to_csv(out, index=False)
        print("Saved:", out)
    else:
        table.to_csv(sys.stdout, index=False)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
