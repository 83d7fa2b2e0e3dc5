#!/usr/bin/env python3
"""
Effective-theory tables.

    python -m analysis.run_theory landau --q 1 --lambda 0 --phi 0.1 --t-end 20
    python -m analysis.run_theory gaussian --preset disordered
    python -m analysis.run_theory kzm --tau 1 2 4 8
    python -m analysis.run_theory coarsening-rate --delta 1.6 2.1 3.1
    python -m analysis.run_theory scaling-F --x-s 4 --x 1 8 64
"""
import argparse
import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from analysis.errors import InvalidArgument
from analysis.logs import add_logging_args, setup_logging
from analysis.theory import (
    LANDAU_RATIO,
    PRESETS,
    WILSON_FISHER_RATIO,
    TheoryParams,
    coarsening_rate,
    gaussian_correlation_length,
    gaussian_evolve,
    kzm_scales,
    landau_evolve,
    landau_frequencies,
    oscillation_frequency,
    scaling_function_F,
)


def _landau(args) -> tuple[pd.DataFrame, dict]:
    traj = landau_evolve(args.q, args.lam, args.phi, args.dphi, args.t_end, args.tol, args.samples)
    table = pd.DataFrame({"t": traj.t, "phi": traj.phi, "dphi": traj.dphi})
    report = {"energy_drift": traj.energy_drift, "omega_measured": oscillation_frequency(traj.t, traj.phi)}
    if args.q != 0 and args.lam > 0:
        report["omega_small_amplitude"] = landau_frequencies(args.q, args.lam).omega
        # ordered/disordered frequency ratio at equal |q|: mean field vs 3D Ising
        report["ratio_landau"] = LANDAU_RATIO
        report["ratio_wilson_fisher"] = WILSON_FISHER_RATIO
    return table, report


def _gaussian(args) -> tuple[pd.DataFrame, dict]:
    preset = PRESETS[args.preset](args.modes, args.k_max)
    traj = gaussian_evolve(preset.state, preset.q, preset.lam, preset.t_end, args.tol, preset.n_samples)
    res = gaussian_correlation_length(traj, skip_time=args.skip, omega_rabi=args.omega_rabi)
    table = pd.DataFrame({"t": res.t, "phi": traj.phi, "xi_theory": res.xi})
    report = {
        "preset": args.preset,
        "q": preset.q,
        "lam": preset.lam,
        "k_max": float(preset.state.k[-1]),
        "omega_phi": res.phi_fit["omega"],
        "omega_xi": res.xi_fit["omega"],
        "ratio": res.ratio,
        "invariant_drift": traj.invariant_drift,
        "phi_fit": res.phi_fit.to_dict(),
        "xi_fit": res.xi_fit.to_dict(),
    }
    return table, report


def _kzm(args) -> tuple[pd.DataFrame, dict]:
    rows = []
    for tau in args.tau:
        p = TheoryParams(nu=args.nu, z=args.z, tau=tau, t0=args.t0, l0=args.l0)
        s = kzm_scales(p)
        rows.append({"tau": tau, "t_kz": s.t_kz, "xi_kz": s.xi_kz})
    nz = args.nu * args.z
    return pd.DataFrame(rows), {"t_exponent": nz / (nz + 1), "xi_exponent": args.nu / (nz + 1)}


def _coarsening(args) -> tuple[pd.DataFrame, dict]:
    p = TheoryParams(nu=args.nu, delta_c=args.delta_c)
    delta = np.asarray(args.delta if args.delta else np.linspace(args.delta_c + 0.1, args.delta_c + 3.0, 30))
    rate = coarsening_rate(delta, p, args.reference)
    table = pd.DataFrame({"delta_over_omega": delta, "delta_minus_delta_c": delta - p.delta_c,
                          "xi_sq_rate": rate.xi_sq_rate, "r_sq_rate": rate.r_sq_rate})
    return table, {"nu": p.nu, "reference": args.reference}


def _scaling_f(args) -> tuple[pd.DataFrame, dict]:
    p = TheoryParams(nu=args.nu, z=args.z, z_d=args.z_d, C=args.C, C_s=args.C_s)
    x = np.asarray(args.x if args.x else np.linspace(1.0, 10.0 * args.x_s, 100))
    f = scaling_function_F(x, args.x_s, p)
    return pd.DataFrame({"x": x, "F": np.atleast_1d(f)}), {"x_s": args.x_s}


def build_parser(ap: argparse.ArgumentParser | None = None) -> argparse.ArgumentParser:
    ap = ap or argparse.ArgumentParser(description="Effective-theory tables (CSV).")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=None, help="CSV path (default stdout)")
    add_logging_args(common)
    sub = ap.add_subparsers(dest="theory_cmd", required=True)

    p = sub.add_parser("landau", parents=[common], help="phi'' = -(q + lam phi^2) phi trajectory")
    p.add_argument("--q", type=float, default=1.0)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--phi", type=float, default=0.1)
    p.add_argument("--dphi", type=float, default=0.0)
    p.add_argument("--t-end", type=float, default=20.0)
    p.add_argument("--samples", type=int, default=401)
    p.add_argument("--tol", type=float, default=1e-9)
    p.set_defaults(func=_landau)

    p = sub.add_parser("gaussian", parents=[common], help="Gaussian fluctuation dynamics and xi(t)")
    p.add_argument("--preset", choices=sorted(PRESETS), default="disordered")
    p.add_argument("--modes", type=int, default=32)
    p.add_argument("--k-max", type=float, default=None,
                   help="top of the uniform k-grid (default: the preset window 0.3 sqrt|q|)")
    p.add_argument("--skip", type=float, default=None,
                   help="initial window skipped by the oscillator fits (default: one Rabi period)")
    p.add_argument("--omega-rabi", type=float, default=1.0, help="Rabi frequency in theory units")
    p.add_argument("--tol", type=float, default=1e-9)
    p.set_defaults(func=_gaussian)

    p = sub.add_parser("kzm", parents=[common], help="Kibble-Zurek time and length scales")
    p.add_argument("--tau", type=float, nargs="+", default=[1.0, 2.0, 4.0, 8.0])
    p.add_argument("--t0", type=float, default=1.0)
    p.add_argument("--l0", type=float, default=1.0)
    p.add_argument("--nu", type=float, default=0.629)
    p.add_argument("--z", type=float, default=1.0)
    p.set_defaults(func=_kzm)

    p = sub.add_parser("coarsening-rate", parents=[common], help="normalized d xi^2/dt and d r^2/dt vs Delta/Omega")
    p.add_argument("--delta", type=float, nargs="*", default=None, help="Delta/Omega values")
    p.add_argument("--delta-c", type=float, default=1.1)
    p.add_argument("--reference", type=float, default=1.0)
    p.add_argument("--nu", type=float, default=0.629)
    p.set_defaults(func=_coarsening)

    p = sub.add_parser("scaling-F", parents=[common], help="scaling function of the sweep-and-hold protocol")
    p.add_argument("--x-s", type=float, required=True)
    p.add_argument("--x", type=float, nargs="*", default=None)
    p.add_argument("--nu", type=float, default=0.629)
    p.add_argument("--z", type=float, default=1.0)
    p.add_argument("--z-d", type=float, default=2.0)
    p.add_argument("--C", type=float, default=2.0)
    p.add_argument("--C-s", dest="C_s", type=float, default=1.0)
    p.set_defaults(func=_scaling_f)
    return ap


def cmd_theory(args) -> tuple[pd.DataFrame, dict]:
    if getattr(args, "tol", 1.0) <= 0:
        raise InvalidArgument("--tol must be > 0")
    return args.func(args)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level, args.log_format)
    table, report = cmd_theory(args)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        table.to_csv(out, index=False)
        print(json.dumps(report, indent=2, sort_keys=True))
        print("Saved:", out)
    else:
        table.to_csv(sys.stdout, index=False)
        if args.theory_cmd == "gaussian":
            print(json.dumps(report, indent=2, sort_keys=True), file=sys.stderr)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
