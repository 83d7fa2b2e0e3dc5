#!/usr/bin/env python3
"""
Snapshot analysis pipeline: post-selection, correlation length, domains, classical energy,
local-domain radius and wall positions for every snapshot file; growth fits and damped-oscillator
(Higgs-mode) fits of m_s(t) per point.

Usage:
    python -m analysis.analyze_snapshots runs/case --out runs/case/analysis --plot
"""
import argparse
import json
import logging
from dataclasses import fields, replace
from pathlib import Path

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from analysis.bootstrap import bootstrap
from analysis.correlations import connected_correlation, fit_correlation_length, structure_factor
from analysis.errors import InvalidArgument, NumericalFailure
from analysis.fits import fit_damped_oscillator, fit_powerlaw_plus_oscillation
from analysis.logs import add_logging_args, setup_logging
from analysis.snapshot_io import SnapshotSet, read_snapshots
from analysis.snapshots import (
    classical_energy,
    domain_statistics,
    first_crossing,
    fit_shrink_rate,
    postselect,
    radial_profile,
    staggered_map,
    wall_positions,
)
from simulation.config import AnalysisConfig, load_config
from simulation.lattice import build_lattice
from simulation.quantum import ground_state_and_gaps

logger = logging.getLogger(__name__)

SUBLATTICE = {"all": None, "even": 1, "odd": -1}
MIN_RADIAL_POINTS = 4
MIN_GROWTH_POINTS = 10
# exact gap for omega / gap_1 only up to this many sites (65536 amplitudes)
GAP_MAX_SITES = 16


def collect_inputs(inputs) -> list[Path]:
    """Snapshot files named directly, or every *.txt under a run directory (or its snapshots/)."""
    files = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            d = p / "snapshots" if (p / "snapshots").is_dir() else p
            files.extend(sorted(d.glob("*.txt")))
        else:
            files.append(p)
    if not files:
        raise InvalidArgument("no snapshot files found")
    return files


def _radius_statistic(center, sublattice):
    def stat(shots):
        prof = radial_profile(shots, center, sublattice)
        r = first_crossing(prof.distances, prof.values)
        return np.nan if r is None else r
    return stat


def analyze_file(path: Path, opts: AnalysisConfig, out_dir: Path, center=None, seed: int = 0) -> dict:
    """One snapshot file -> one summary row (plus per-file tables in out_dir)."""
    snaps = read_snapshots(path)
    meta = snaps.meta
    stem = path.stem
    row = {
        "file": path.name,
        "point": meta.get("point"),
        "delta_over_omega": meta.get("delta_over_omega", np.nan),
        "hold_time_us": meta.get("hold_time_us", np.nan),
        "n_shots_raw": snaps.n_shots,
        "omega_mhz": meta.get("omega_mhz", np.nan),
        "v_nn_mhz": meta.get("v_nn_mhz", np.nan),
        "width": snaps.width,
        "height": snaps.height,
        "boundary": meta.get("boundary", "open"),
        "cutoff": meta.get("cutoff", "third_nearest"),
    }

    if opts.postselect:
        snaps = postselect(snaps, opts.max_chain, opts.max_defects)
        row["retained_fraction"] = snaps.meta["retained_fraction"]
    else:
        row["retained_fraction"] = 1.0
    row["n_shots"] = snaps.n_shots
    if snaps.n_shots == 0:
        logger.warning("no shots survive post-selection", extra={"file": path.name})
        row["status"] = "empty"
        return row
    row["status"] = "ok"
    per_shot = staggered_map(snaps.shots).mean(axis=(1, 2))
    row["m_s"] = float(per_shot.mean())
    row["m_s_err"] = float(per_shot.std(ddof=1) / np.sqrt(per_shot.size)) if per_shot.size > 1 else np.nan

    if opts.correlations:
        row.update(_correlation_columns(snaps, out_dir, stem))
    if opts.domains:
        stats = domain_statistics(snaps, correct=True)
        row["mean_largest_domain"] = stats.mean_largest
        row["mean_second_domain"] = stats.mean_second_largest
        (out_dir / f"{stem}_domains.json").write_text(
            json.dumps({str(k): v for k, v in stats.distribution.items()}, indent=2, sort_keys=True) + "\n")
    if opts.energy:
        row.update(_energy_columns(snaps, path.name))
    if opts.radial:
        c = center if center is not None else meta.get("center")
        if c is None:
            logger.warning("radial analysis needs a center", extra={"file": path.name})
        else:
            row.update(_radial_columns(snaps, tuple(c), opts, out_dir, stem, seed))
    if opts.walls:
        walls = wall_positions(snaps, n_resamples=opts.bootstrap_resamples, seed=seed)
        pd.DataFrame(walls, columns=["row", "x", "std_error"]).to_csv(out_dir / f"{stem}_walls.csv", index=False)
    return row


def _correlation_columns(snaps: SnapshotSet, out_dir: Path, stem: str) -> dict:
    cols = {"xi": np.nan, "xi_err": np.nan, "b": np.nan, "s0": np.nan, "converged": False, "flags": ""}
    if snaps.n_shots < 2:
        cols["flags"] = "too_few_shots"
        return cols
    sf = structure_factor(connected_correlation(snaps))
    sf.to_frame().to_csv(out_dir / f"{stem}_sf.csv", index=False)
    if sf.k.size < MIN_RADIAL_POINTS:
        cols["flags"] = "too_few_modes"
        return cols
    fit = fit_correlation_length(sf)
    (out_dir / f"{stem}_fit.json").write_text(json.dumps(fit.to_dict(), indent=2, sort_keys=True) + "\n")
    if fit.flags:
        logger.warning("correlation-length fit flagged", extra={"file": stem, "flags": list(fit.flags),
                                                                "xi": fit["xi"]})
    cols.update(xi=fit["xi"], xi_err=fit.stderr("xi"), b=fit["b"], s0=fit["S0"],
                converged=fit.converged, flags=";".join(fit.flags))
    return cols


def _energy_columns(snaps: SnapshotSet, name: str) -> dict:
    meta = snaps.meta
    need = ("delta_over_omega", "omega_mhz", "v_nn_mhz", "v_nnn_mhz")
    if any(k not in meta for k in need) or min(snaps.height, snaps.width) < 3:
        logger.warning("energy budget skipped", extra={"file": name})
        return {}
    two_pi = 2 * np.pi
    delta = meta["delta_over_omega"] * meta["omega_mhz"] * two_pi
    budget = classical_energy(snaps, delta, meta["v_nn_mhz"] * two_pi, meta["v_nnn_mhz"] * two_pi)
    return {
        "e_total_mhz": budget.total / two_pi,
        "e_bulk_mhz": budget.bulk / two_pi,
        "e_wall_mhz": budget.wall / two_pi,
    }


def _radial_columns(snaps: SnapshotSet, center, opts: AnalysisConfig, out_dir: Path, stem: str,
                    seed: int) -> dict:
    sub = SUBLATTICE[opts.sublattice]
    prof = radial_profile(snaps, center, sub)
    pd.DataFrame(prof._asdict()).to_csv(out_dir / f"{stem}_radial.csv", index=False)
    r = first_crossing(prof.distances, prof.values)
    err = np.nan
    if r is not None and snaps.n_shots > 1:
        err = bootstrap(snaps.shots, _radius_statistic(center, sub), opts.bootstrap_resamples, seed).std_error
    return {"radius": np.nan if r is None else r, "radius_err": err}


def growth_table(summary: pd.DataFrame) -> pd.DataFrame:
    """Per parameter point: power-law fit of xi(t) and dr^2/dt."""
    rows = []
    for d, grp in summary.groupby("delta_over_omega", sort=True):
        grp = grp.sort_values("hold_time_us")
        row = {"delta_over_omega": d, "n_times": len(grp)}
        if "xi" in grp:
            ok = grp[grp["converged"].astype(bool)]
            if len(ok) >= MIN_GROWTH_POINTS:
                fit = fit_powerlaw_plus_oscillation(ok["hold_time_us"].to_numpy(), ok["xi"].to_numpy())
                row.update({f"xi_{k}": v for k, v in fit.params.items()})
                row["xi_fit_flags"] = ";".join(fit.flags)
        if "radius" in grp:
            res = grp[np.isfinite(grp["radius"])]
            if len(res) >= 2:
                slope, se = fit_shrink_rate(res["hold_time_us"], res["radius"])
                row.update(dr2_dt=slope, dr2_dt_err=se)
        rows.append(row)
    return pd.DataFrame(rows)


def _oscillation_columns(prefix: str, t, y, omega_rabi: float | None) -> dict:
    cols = {f"{prefix}_omega_mhz": np.nan, f"{prefix}_omega_err_mhz": np.nan,
            f"{prefix}_gamma_per_us": np.nan, f"{prefix}_gamma_err": np.nan,
            f"{prefix}_amplitude": np.nan, f"{prefix}_flags": ""}
    try:
        fit = fit_damped_oscillator(np.asarray(t, dtype=float), np.asarray(y, dtype=float),
                                    omega_rabi=omega_rabi)
    except InvalidArgument:
        cols[f"{prefix}_flags"] = "too_few_points"
        return cols
    cols[f"{prefix}_flags"] = ";".join(fit.flags)
    if fit.converged:
        two_pi = 2 * np.pi
        cols.update({f"{prefix}_omega_mhz": fit["omega"] / two_pi,
                     f"{prefix}_omega_err_mhz": fit.stderr("omega") / two_pi,
                     f"{prefix}_gamma_per_us": fit["gamma"],
                     f"{prefix}_gamma_err": fit.stderr("gamma"),
                     f"{prefix}_amplitude": fit["A"]})
    return cols


def _hold_gap(first: pd.Series, delta_over_omega: float) -> float:
    """gap_1 (rad/us) of the constant hold Hamiltonian, nan beyond GAP_MAX_SITES or without couplings."""
    omega_mhz, v_nn_mhz = first.get("omega_mhz", np.nan), first.get("v_nn_mhz", np.nan)
    width, height = int(first["width"]), int(first["height"])
    if width * height > GAP_MAX_SITES or not (np.isfinite(omega_mhz) and np.isfinite(v_nn_mhz)):
        return float("nan")
    two_pi = 2 * np.pi
    lat = build_lattice(width, height, v_nn=v_nn_mhz * two_pi, boundary=first["boundary"],
                        cutoff=first["cutoff"])
    om = omega_mhz * two_pi
    try:
        return ground_state_and_gaps(lat, om, delta_over_omega * om, n_states=2).gap_1
    except NumericalFailure as e:
        logger.warning("hold spectrum failed", extra={"delta_over_omega": delta_over_omega, "error": str(e)})
        return float("nan")


def oscillation_table(summary: pd.DataFrame, observables: pd.DataFrame | None = None) -> pd.DataFrame:
    """
    Per parameter point: damped-oscillator fit of the staggered magnetization against hold
    time (Higgs frequency and damping), the same fit on xi(t), their frequency ratio, and the
    oscillation frequency over the hold gap where the exact spectrum is in reach.

    m_s comes from observables (the engine's expectation values, one row per hold) when given
    for that point, otherwise from the shot means in summary. Fits skip one Rabi period.
    """
    rows = []
    for d, grp in summary.groupby("delta_over_omega", sort=True):
        grp = grp.sort_values("hold_time_us")
        first = grp.iloc[0]
        omega_mhz = first.get("omega_mhz", np.nan)
        omega_rabi = 2 * np.pi * omega_mhz if np.isfinite(omega_mhz) else None

        t, ms, source = grp["hold_time_us"].to_numpy(), grp["m_s"].to_numpy(), "snapshots"
        if observables is not None and len(observables):
            obs = observables[np.isclose(observables["delta_over_omega"], d)].sort_values("hold_time_us")
            if len(obs):
                t, ms, source = obs["hold_time_us"].to_numpy(), obs["m_s"].to_numpy(), "observables"

        row = {"delta_over_omega": d, "n_times": len(t), "source": source}
        row.update(_oscillation_columns("ms", t, ms, omega_rabi))
        if "xi" in grp:
            ok = grp[grp["converged"].astype(bool)]
            row.update(_oscillation_columns("xi", ok["hold_time_us"], ok["xi"], omega_rabi))
            row["ratio_xi_ms"] = row["xi_omega_mhz"] / row["ms_omega_mhz"]

        gap = _hold_gap(first, d)
        row["gap_1_mhz"] = gap / (2 * np.pi)
        row["omega_over_gap"] = 2 * np.pi * row["ms_omega_mhz"] / gap if gap > 0 else np.nan
        if row["ms_flags"]:
            logger.info("m_s oscillation fit flagged", extra={"delta_over_omega": d, "flags": row["ms_flags"]})
        rows.append(row)
    return pd.DataFrame(rows)


def _run_observables(inputs) -> pd.DataFrame | None:
    frames = [pd.read_csv(Path(p) / "observables.csv") for p in inputs
              if Path(p).is_dir() and (Path(p) / "observables.csv").exists()]
    return pd.concat(frames, ignore_index=True) if frames else None


def write_gnuplot(out_dir: Path, summary_csv: Path) -> Path:
    path = out_dir / "summary.gp"
    cols = list(pd.read_csv(summary_csv, nrows=0).columns)
    t = cols.index("hold_time_us") + 1
    xi = cols.index("xi") + 1 if "xi" in cols else None
    lines = [
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set xlabel 'hold time (us)'",
    ]
    if xi is not None:
        lines += ["set ylabel 'xi (sites)'",
                  f"plot '{summary_csv.name}' using {t}:{xi}:{xi + 1} with yerrorbars"]
    path.write_text("\n".join(lines) + "\n")
    return path


def write_plots(out_dir: Path, summary: pd.DataFrame) -> list[Path]:
    saved = []
    if "xi" in summary:
        plt.figure(figsize=(6, 4))
        for d, grp in summary.groupby("delta_over_omega"):
            grp = grp.sort_values("hold_time_us")
            plt.errorbar(grp["hold_time_us"], grp["xi"], yerr=grp["xi_err"], marker="o", label=f"D/O={d:g}")
        plt.xlabel("hold time (us)")
        plt.ylabel("xi (sites)")
        plt.grid(True)
        plt.legend()
        plt.tight_layout()
        p = out_dir / "xi_vs_hold.png"
        plt.savefig(p, dpi=150)
        plt.close()
        saved.append(p)
    if "radius" in summary and np.any(np.isfinite(summary["radius"])):
        plt.figure(figsize=(6, 4))
        for d, grp in summary.groupby("delta_over_omega"):
            grp = grp.sort_values("hold_time_us")
            plt.plot(grp["hold_time_us"], grp["radius"] ** 2, marker="o", label=f"D/O={d:g}")
        plt.xlabel("hold time (us)")
        plt.ylabel("r^2 (sites^2)")
        plt.grid(True)
        plt.legend()
        plt.tight_layout()
        p = out_dir / "r2_vs_hold.png"
        plt.savefig(p, dpi=150)
        plt.close()
        saved.append(p)
    return saved


def cmd_analyze(inputs, out_dir, opts: AnalysisConfig | None = None, center=None, seed: int = 0,
                plot: bool = False, gnuplot: bool = False) -> pd.DataFrame:
    opts = opts or AnalysisConfig()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [analyze_file(p, opts, out_dir, center, seed) for p in collect_inputs(inputs)]
    summary = pd.DataFrame(rows)
    summary_csv = out_dir / "summary.csv"
    summary.to_csv(summary_csv, index=False)

    if summary["status"].eq("ok").any():
        ok = summary[summary["status"] == "ok"]
        growth_table(ok).to_csv(out_dir / "growth.csv", index=False)
        oscillation_table(ok, _run_observables(inputs)).to_csv(out_dir / "oscillations.csv", index=False)
    if gnuplot:
        write_gnuplot(out_dir, summary_csv)
    if plot:
        write_plots(out_dir, summary)
    return summary


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description="Analyze Rydberg snapshot files.")
    ap.add_argument("inputs", nargs="+", help="snapshot files or run directories")
    ap.add_argument("--out", default=None, help="output directory (default <run>/analysis or results/)")
    ap.add_argument("--config", default=None, help="take analysis toggles from this experiment YAML")
    for name in ("postselect", "correlations", "domains", "energy", "radial", "walls"):
        ap.add_argument(f"--{name}", action=argparse.BooleanOptionalAction, default=None)
    ap.add_argument("--max-chain", type=int, default=None)
    ap.add_argument("--max-defects", type=int, default=None)
    ap.add_argument("--sublattice", choices=sorted(SUBLATTICE), default=None)
    ap.add_argument("--center", type=int, nargs=2, default=None, metavar=("X", "Y"))
    ap.add_argument("--resamples", type=int, default=None, help="bootstrap resamples")
    ap.add_argument("--seed", type=int, default=0, help="bootstrap seed")
    ap.add_argument("--plot", action="store_true", help="save PNG figures (matplotlib)")
    ap.add_argument("--gnuplot", action="store_true", help="write a companion gnuplot script")
    add_logging_args(ap)
    args = ap.parse_args(argv)
    setup_logging(args.log_level, args.log_format)

    opts = load_config(args.config).analysis if args.config else AnalysisConfig()
    overrides = {f.name: getattr(args, f.name) for f in fields(AnalysisConfig) if hasattr(args, f.name)}
    overrides["bootstrap_resamples"] = args.resamples
    opts = replace(opts, **{k: v for k, v in overrides.items() if v is not None})

    if args.out:
        out_dir = Path(args.out)
    elif len(args.inputs) == 1 and Path(args.inputs[0]).is_dir():
        out_dir = Path(args.inputs[0]) / "analysis"
    else:
        out_dir = Path("results")

    summary = cmd_analyze(args.inputs, out_dir, opts, args.center, args.seed, args.plot, args.gnuplot)
    ok = summary[summary["status"] == "ok"]
    print(f"files: {len(summary)}  ok: {len(ok)}  empty: {len(summary) - len(ok)}")
    if "xi" in ok:
        for _, r in ok.iterrows():
            print(f"hold={r['hold_time_us']:.3f} us  D/O={r['delta_over_omega']:.3f}  "
                  f"xi={r['xi']:.3f} +- {r['xi_err']:.3f}  kept={r['retained_fraction']:.3f}")
    print("Saved:", out_dir / "summary.csv")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
