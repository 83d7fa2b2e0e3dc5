#!/usr/bin/env python3
"""
Run an experiment config: for every parameter point, drive the engine through the protocol
and record snapshots plus observables at each hold time.

Run directory layout:
    <output>/snapshots/p00_hold_000.txt (+ .json sidecar)
    <output>/observables.csv
    <output>/manifest.json
"""
import argparse
import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from analysis import __version__
from analysis.logs import add_logging_args, setup_logging
from analysis.snapshot_io import SIGN_CONVENTION, SnapshotSet, write_snapshots
from simulation.config import ExperimentConfig, default_workers, load_config
from simulation.meanfield import (
    ProductState,
    meanfield_energy,
    meanfield_minimize,
    meanfield_observables,
    meanfield_sample,
    meanfield_trajectory,
)
from simulation.quantum import evolve_trajectory, ground_product_state, measure, sample_snapshots
from waveforms.schedules import evaluate, local_detunings, sweep_end_time

logger = logging.getLogger(__name__)

OBSERVABLE_COLUMNS = ["point", "delta_over_omega", "t_us", "hold_time_us", "m_s", "h_cl_mhz", "h_mhz"]


def snapshot_name(point: int, hold_index: int) -> str:
    return f"p{point:02d}_hold_{hold_index:03d}.txt"


def _meanfield_start(cfg: ExperimentConfig, lattice, schedule) -> ProductState:
    """All-ground product state, or the pinned mean-field minimum at the end of the sweep."""
    if cfg.schedule.protocol == "sweep_and_hold":
        return ProductState.from_occupations(lattice, np.zeros(lattice.n_sites))
    t_off = sweep_end_time(schedule)
    omega, delta, _ = evaluate(schedule, t_off)
    mask = np.asarray(schedule.local_pattern) > 0
    state = meanfield_minimize(lattice, omega, delta, pinned_sites=mask, per_site=True)
    state.time = t_off
    return state


def run_point(cfg: ExperimentConfig, point: int, delta_over_omega: float,
              seed_seq: np.random.SeedSequence) -> list[tuple[SnapshotSet, dict]]:
    """All hold times of one parameter point; returns (snapshots, observable row) per hold time."""
    lattice = cfg.lattice.build()
    holds = np.asarray(cfg.hold_times)
    schedule = cfg.schedule.build(lattice, delta_over_omega, float(holds.max()))
    t_hold0 = schedule.total_time - float(holds.max())
    times = t_hold0 + holds
    hold_seqs = seed_seq.spawn(len(holds))

    if cfg.engine == "exact":
        start = ground_product_state(lattice, cfg.site_cap)
        states = evolve_trajectory(start, schedule, times, cfg.tolerance)
    else:
        start = _meanfield_start(cfg, lattice, schedule)
        states = meanfield_trajectory(start, schedule, np.maximum(times, start.time), cfg.tolerance)

    base_meta = {
        "delta_over_omega": float(delta_over_omega),
        "omega_mhz": float(cfg.schedule.omega_mhz),
        "v_nn_mhz": float(cfg.lattice.v_nn_mhz),
        "v_nnn_mhz": lattice.coupling_at(2) / (2 * np.pi),
        "width": lattice.width,
        "height": lattice.height,
        "boundary": lattice.boundary,
        "cutoff": lattice.cutoff,
        "protocol": cfg.schedule.protocol,
        "engine": cfg.engine,
        "point": point,
        "seed": cfg.seed,
        "sign_convention": SIGN_CONVENTION,
    }
    center = cfg.schedule.layout.radial_center(lattice)
    if cfg.schedule.protocol != "sweep_and_hold":
        base_meta["layout"] = cfg.schedule.layout.kind
    if center is not None:
        base_meta["center"] = list(center)

    out = []
    for k, (t, hold, state) in enumerate(zip(times, holds, states)):
        om, de, _ = evaluate(schedule, float(t))
        local = local_detunings(schedule, float(t), lattice.n_sites)
        meta = dict(base_meta, hold_time_us=float(hold), t_us=float(t),
                    spawn_key=list(hold_seqs[k].spawn_key))
        rng = np.random.default_rng(hold_seqs[k])
        if cfg.engine == "exact":
            m_s = measure(state, "m_s")
            h_cl = measure(state, "H_cl", delta=de)
            h = measure(state, "H", omega=om, delta=de, local_deltas=local)
            snaps = sample_snapshots(state, cfg.shots, rng, meta)
        else:
            obs = meanfield_observables(state, de)
            m_s, h_cl = obs["m_s"], obs["H_cl"]
            h = meanfield_energy(state, om, de, local)
            snaps = meanfield_sample(state, cfg.shots, rng, meta)
        row = {
            "point": point,
            "delta_over_omega": float(delta_over_omega),
            "t_us": float(t),
            "hold_time_us": float(hold),
            "m_s": float(m_s),
            "h_cl_mhz": float(h_cl) / (2 * np.pi),
            "h_mhz": float(h) / (2 * np.pi),
        }
        out.append((snaps, row))
        logger.info("hold time done", extra={"point": point, "hold_time_us": float(hold), "m_s": float(m_s)})
    return out


def _run_point_args(args):
    return run_point(*args)


def cmd_simulate(cfg: ExperimentConfig, output: str | Path | None = None,
                 workers: int | None = None) -> Path:
    """Simulate every parameter point; outputs depend on the seed only, not on the worker count."""
    out_dir = Path(output or cfg.output)
    snap_dir = out_dir / "snapshots"
    snap_dir.mkdir(parents=True, exist_ok=True)
    workers = default_workers() if workers is None else max(int(workers), 1)

    points = list(cfg.schedule.delta_end)
    seqs = np.random.SeedSequence(cfg.seed).spawn(len(points))
    jobs = [(cfg, j, d, seqs[j]) for j, d in enumerate(points)]
    logger.info("simulate", extra={"points": len(points), "holds": len(cfg.hold_times),
                                   "engine": cfg.engine, "workers": workers})

    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_point_args, jobs))
    else:
        results = [run_point(*job) for job in jobs]

    files = []
    csv_path = out_dir / "observables.csv"
    with csv_path.open("w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=OBSERVABLE_COLUMNS)
        w.writeheader()
        for j, rows in enumerate(results):
            for k, (snaps, row) in enumerate(rows):
                files.append(str(write_snapshots(snap_dir / snapshot_name(j, k), snaps).relative_to(out_dir)))
                w.writerow(row)

    manifest = {
        "name": cfg.name,
        "config_sha256": cfg.sha256,
        "version": __version__,
        "seed": cfg.seed,
        "engine": cfg.engine,
        "protocol": cfg.schedule.protocol,
        "points": points,
        "hold_times_us": list(cfg.hold_times),
        "shots": cfg.shots,
        "snapshot_files": files,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out_dir


def build_parser(ap: argparse.ArgumentParser | None = None) -> argparse.ArgumentParser:
    ap = ap or argparse.ArgumentParser(description="Simulate a Rydberg-array coarsening experiment.")
    ap.add_argument("config", help="experiment YAML")
    ap.add_argument("--output", default=None, help="run directory (overrides the config)")
    ap.add_argument("--seed", type=int, default=None, help="override the config seed")
    ap.add_argument("--workers", type=int, default=None,
                    help="process-pool size (default: $COARSEN_WORKERS or 1)")
    add_logging_args(ap)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level, args.log_format)
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    out_dir = cmd_simulate(cfg, args.output, args.workers)
    print(f"points: {len(cfg.schedule.delta_end)}  hold times: {len(cfg.hold_times)}  shots: {cfg.shots}")
    print("Saved:", out_dir / "observables.csv")
    print("Saved:", out_dir / "manifest.json")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
