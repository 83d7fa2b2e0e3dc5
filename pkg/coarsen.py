#!/usr/bin/env python3
"""
Command-line front end.

    python coarsen.py simulate configs/sweep_4x5.yaml
    python coarsen.py analyze runs/sweep_4x5 --plot
    python coarsen.py theory gaussian --preset disordered
    python coarsen.py schedule dump configs/sweep_4x5.yaml --point 0

Exit codes: 0 ok, 1 other failure, 2 invalid argument, 3 config, 4 snapshot/file I/O,
5 numerical failure.
"""
import logging
import sys

from analysis import analyze_snapshots, run_theory
from analysis.errors import CoarseningError
from simulation import simulate
from waveforms import dump_schedule

logger = logging.getLogger("coarsen")

USAGE = "usage: coarsen.py {simulate,analyze,theory,schedule dump} ..."


def dispatch(argv: list[str]) -> int:
    if not argv or argv[0] in ("-h", "--help"):
        print(USAGE)
        return 0 if argv else 2
    cmd, rest = argv[0], argv[1:]
    if cmd == "simulate":
        return simulate.main(rest)
    if cmd == "analyze":
        return analyze_snapshots.main(rest)
    if cmd == "theory":
        return run_theory.main(rest)
    if cmd == "schedule" and rest[:1] == ["dump"]:
        return dump_schedule.main(rest[1:])
    print(USAGE, file=sys.stderr)
    return 2


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        return dispatch(argv)
    except CoarseningError as e:
        logger.error(str(e), extra={"error": type(e).__name__, "exit_code": e.exit_code})
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except SystemExit as e:
        # argparse usage errors and --help inside a subcommand
        return e.code if isinstance(e.code, int) else 2


if __name__ == "__main__":
    raise SystemExit(main())
