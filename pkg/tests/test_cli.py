import io
import json

import numpy as np
import pandas as pd
import pytest

import coarsen
from analysis import analyze_snapshots, run_theory
from analysis.snapshot_io import SnapshotSet, read_snapshots, write_snapshots
from simulation import simulate
from simulation.config import AnalysisConfig, load_config
from simulation.lattice import build_lattice, parity_grid
from simulation.quantum import ground_state_and_gaps
from waveforms import dump_schedule

TINY = """\
name: tiny
lattice: {width: 2, height: 2, v_nn_mhz: 11.69}
schedule:
  protocol: sweep_and_hold
  omega_mhz: 4.0
  delta_end: [1.5, 2.5]
  sweep_rate: 0.477
hold_times_us: [0.0, 0.1]
engine: exact
shots: 40
seed: 5
"""

MEANFIELD = """\
name: mf
lattice: {width: 4, height: 4}
schedule:
  protocol: local_domain
  omega_mhz: 4.0
  delta_end: 2.5
  layout: {kind: square, center: [2, 2], half_size: 1}
hold_times_us: [0.0, 0.02]
engine: meanfield
shots: 10
seed: 1
"""


def af(height, width, order=1):
    return (parity_grid(height, width) * order == 1).astype(np.uint8)


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(TINY)
    return path


def test_simulate_writes_run_directory(tiny_config, tmp_path, capsys):
    out = tmp_path / "run"
    assert simulate.main([str(tiny_config), "--output", str(out), "--log-level", "WARNING"]) == 0
    assert "Saved:" in capsys.readouterr().out

    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["points"] == [1.5, 2.5]
    assert manifest["config_sha256"] == load_config(tiny_config).sha256
    assert len(manifest["snapshot_files"]) == 4

    first = out / "snapshots" / "p00_hold_000.txt"
    assert first.read_text().splitlines()[0] == "2 2 40"
    snaps = read_snapshots(first)
    assert snaps.meta["delta_over_omega"] == 1.5
    assert snaps.meta["engine"] == "exact"
    assert snaps.meta["v_nnn_mhz"] == pytest.approx(11.69 / 8)

    obs = pd.read_csv(out / "observables.csv")
    assert list(obs.columns) == simulate.OBSERVABLE_COLUMNS
    assert len(obs) == 4
    assert np.all(np.abs(obs["m_s"]) <= 1.0)
    np.testing.assert_allclose(np.diff(obs["t_us"].to_numpy()[:2]), 0.1)


@pytest.mark.parametrize("cutoff, v_nnn", [("nearest", 0.0), ("next_nearest", 11.69 / 8)])
def test_simulate_meta_follows_coupling_cutoff(tmp_path, cutoff, v_nnn):
    path = tmp_path / "cut.yaml"
    path.write_text(TINY.replace("v_nn_mhz: 11.69}", f"v_nn_mhz: 11.69, cutoff: {cutoff}}}"))
    out = simulate.cmd_simulate(load_config(path), tmp_path / "run", workers=1)
    meta = read_snapshots(out / "snapshots" / "p00_hold_000.txt").meta
    assert meta["v_nnn_mhz"] == pytest.approx(v_nnn, abs=1e-12)
    assert meta["cutoff"] == cutoff
    assert (meta["width"], meta["height"], meta["boundary"]) == (2, 2, "open")


def test_simulate_is_reproducible(tiny_config, tmp_path):
    cfg = load_config(tiny_config)
    a = simulate.cmd_simulate(cfg, tmp_path / "a", workers=1)
    b = simulate.cmd_simulate(cfg, tmp_path / "b", workers=1)
    c = simulate.cmd_simulate(cfg, tmp_path / "c", workers=2)
    for name in ("p00_hold_000.txt", "p01_hold_001.txt"):
        ref = (a / "snapshots" / name).read_bytes()
        assert (b / "snapshots" / name).read_bytes() == ref
        assert (c / "snapshots" / name).read_bytes() == ref
    assert (a / "observables.csv").read_text() == (c / "observables.csv").read_text()


def test_simulate_seed_override(tiny_config, tmp_path):
    simulate.main([str(tiny_config), "--output", str(tmp_path / "a"), "--seed", "6"])
    simulate.main([str(tiny_config), "--output", str(tmp_path / "b")])
    name = "snapshots/p01_hold_001.txt"
    assert json.loads((tmp_path / "a" / "manifest.json").read_text())["seed"] == 6
    assert (tmp_path / "a" / name).read_bytes() != (tmp_path / "b" / name).read_bytes()


def test_meanfield_local_domain_run(tmp_path):
    path = tmp_path / "mf.yaml"
    path.write_text(MEANFIELD)
    out = simulate.cmd_simulate(load_config(path), tmp_path / "mf")
    snaps = read_snapshots(out / "snapshots" / "p00_hold_000.txt")
    assert snaps.shots.shape == (10, 4, 4)
    assert snaps.meta["center"] == [2, 2]
    assert snaps.meta["layout"] == "square"
    assert snaps.meta["engine"] == "meanfield"


def test_analyze_run_directory(tiny_config, tmp_path, capsys):
    out = simulate.cmd_simulate(load_config(tiny_config), tmp_path / "run")
    assert analyze_snapshots.main([str(out), "--no-energy"]) == 0
    assert "files: 4" in capsys.readouterr().out

    summary = pd.read_csv(out / "analysis" / "summary.csv")
    assert len(summary) == 4
    assert set(summary["status"]) == {"ok"}
    # a 2x2 window has a single radial bin
    assert set(summary["flags"]) == {"too_few_modes"}
    assert (out / "analysis" / "growth.csv").exists()

    osc = pd.read_csv(out / "analysis" / "oscillations.csv")
    assert list(osc["delta_over_omega"]) == [1.5, 2.5]
    assert set(osc["source"]) == {"observables"}
    # two hold times cannot carry an oscillator fit
    assert set(osc["ms_flags"]) == {"too_few_points"}
    assert np.all(osc["gap_1_mhz"] > 0)


def _meta():
    return {"delta_over_omega": 2.0, "omega_mhz": 4.0, "v_nn_mhz": 11.69, "v_nnn_mhz": 11.69 / 8,
            "hold_time_us": 0.1, "point": 0}


def test_analyze_perfect_order(tmp_path):
    path = write_snapshots(tmp_path / "af.txt", SnapshotSet(6, 6, np.stack([af(6, 6)] * 5), _meta()))
    summary = analyze_snapshots.cmd_analyze([path], tmp_path / "out", gnuplot=True)
    row = summary.iloc[0]
    assert row["status"] == "ok"
    assert row["retained_fraction"] == 1.0
    assert row["flags"] == "resolution_ceiling"
    assert row["xi"] == 6.0
    assert row["mean_largest_domain"] == 36.0
    assert row["mean_second_domain"] == 0.0
    assert row["e_wall_mhz"] == 0.0
    assert (tmp_path / "out" / "af_sf.csv").exists()
    assert json.loads((tmp_path / "out" / "af_domains.json").read_text()) == {"36": 1.0}
    assert "yerrorbars" in (tmp_path / "out" / "summary.gp").read_text()


def test_analyze_discards_long_chains(tmp_path):
    bad = af(6, 6)
    bad[0, :5] = 1
    shots = np.stack([af(6, 6)] * 4 + [bad])
    path = write_snapshots(tmp_path / "mixed.txt", SnapshotSet(6, 6, shots, _meta()))
    opts = AnalysisConfig(correlations=False, energy=False)
    row = analyze_snapshots.cmd_analyze([path], tmp_path / "out", opts).iloc[0]
    assert row["n_shots_raw"] == 5
    assert row["n_shots"] == 4
    assert row["retained_fraction"] == pytest.approx(0.8)


def test_analyze_empty_after_postselection(tmp_path):
    path = write_snapshots(tmp_path / "full.txt", SnapshotSet(6, 6, np.ones((3, 6, 6)), _meta()))
    summary = analyze_snapshots.cmd_analyze([path], tmp_path / "out")
    assert summary.iloc[0]["status"] == "empty"
    assert summary.iloc[0]["retained_fraction"] == 0.0
    assert not (tmp_path / "out" / "growth.csv").exists()


def test_analyze_radial_uses_sidecar_center(tmp_path):
    shot = af(9, 9, -1)
    shot[2:7, 2:7] = af(9, 9, 1)[2:7, 2:7]
    meta = dict(_meta(), center=[4, 4])
    path = write_snapshots(tmp_path / "dom.txt", SnapshotSet(9, 9, np.stack([shot] * 3), meta))
    opts = AnalysisConfig(postselect=False, correlations=False, domains=False, energy=False,
                          radial=True, sublattice="even", bootstrap_resamples=20)
    row = analyze_snapshots.cmd_analyze([path], tmp_path / "out", opts).iloc[0]
    assert 2.0 < row["radius"] < 4.0
    assert row["radius_err"] == pytest.approx(0.0)
    assert (tmp_path / "out" / "dom_radial.csv").exists()


def damped_ms(t, f_mhz=1.7, gamma=0.4, amplitude=0.2, offset=0.5):
    return offset + amplitude * np.cos(2 * np.pi * f_mhz * t + 0.3) * np.exp(-gamma * t)


def _summary(holds, m_s, d=2.0):
    return pd.DataFrame({"delta_over_omega": d, "hold_time_us": holds, "m_s": m_s, "omega_mhz": 1.0,
                         "v_nn_mhz": 10.0, "width": 2, "height": 2, "boundary": "open",
                         "cutoff": "third_nearest", "status": "ok"})


def test_oscillation_table_recovers_damped_magnetization():
    holds = np.linspace(0.0, 3.0, 61)
    summary = pd.concat([_summary(holds, damped_ms(holds)), _summary(holds[:5], damped_ms(holds[:5]), d=3.0)])
    table = analyze_snapshots.oscillation_table(summary)
    row = table.iloc[0]
    assert row["source"] == "snapshots"
    assert row["ms_flags"] == ""
    assert row["ms_omega_mhz"] == pytest.approx(1.7, rel=1e-4)
    assert row["ms_gamma_per_us"] == pytest.approx(0.4, abs=1e-4)
    assert row["ms_amplitude"] == pytest.approx(0.2, rel=1e-3)

    two_pi = 2 * np.pi
    gap = ground_state_and_gaps(build_lattice(2, 2, v_nn=10.0 * two_pi), two_pi, 2.0 * two_pi, n_states=2).gap_1
    assert row["gap_1_mhz"] == pytest.approx(gap / two_pi)
    assert row["omega_over_gap"] == pytest.approx(two_pi * 1.7 / gap, rel=1e-4)

    short = table.iloc[1]
    assert short["ms_flags"] == "too_few_points"
    assert np.isnan(short["ms_omega_mhz"])


def test_oscillation_table_prefers_engine_observables():
    holds = np.linspace(0.0, 3.0, 61)
    observables = pd.DataFrame({"delta_over_omega": 2.0, "hold_time_us": holds,
                                "m_s": damped_ms(holds, f_mhz=1.2)})
    row = analyze_snapshots.oscillation_table(_summary(holds, damped_ms(holds)), observables).iloc[0]
    assert row["source"] == "observables"
    assert row["ms_omega_mhz"] == pytest.approx(1.2, rel=1e-4)


def test_analyze_writes_oscillations(tmp_path):
    run = tmp_path / "run" / "snapshots"
    run.mkdir(parents=True)
    n_shots = 400
    holds = np.linspace(0.0, 3.0, 31)
    for k, t in enumerate(holds):
        # shot mix of AF1 / AF2 whose mean staggered magnetization follows the damped signal
        n_af1 = int(round(n_shots * (1 + damped_ms(t, f_mhz=1.7, gamma=0.3, amplitude=0.5, offset=0.0)) / 2))
        shots = np.stack([af(2, 2, 1)] * n_af1 + [af(2, 2, -1)] * (n_shots - n_af1))
        meta = dict(_meta(), hold_time_us=float(t), omega_mhz=1.0)
        write_snapshots(run / f"p00_hold_{k:03d}.txt", SnapshotSet(2, 2, shots, meta))
    opts = AnalysisConfig(correlations=False, domains=False, energy=False)
    summary = analyze_snapshots.cmd_analyze([tmp_path / "run"], tmp_path / "out", opts)
    assert summary["m_s"].iloc[0] == pytest.approx(0.5 * np.cos(0.3), abs=0.01)

    osc = pd.read_csv(tmp_path / "out" / "oscillations.csv")
    assert len(osc) == 1
    assert osc["source"][0] == "snapshots"
    assert osc["n_times"][0] == 31
    assert osc["ms_omega_mhz"][0] == pytest.approx(1.7, rel=0.03)
    assert osc["ms_gamma_per_us"][0] == pytest.approx(0.3, abs=0.1)
    assert osc["omega_over_gap"][0] > 0


def _theory_table(capsys, argv):
    assert run_theory.main(argv + ["--log-level", "WARNING"]) == 0
    return pd.read_csv(io.StringIO(capsys.readouterr().out))


def test_theory_landau_harmonic(capsys):
    table = _theory_table(capsys, ["landau", "--q", "1", "--lambda", "0", "--phi", "0.1", "--t-end", "20"])
    assert list(table.columns) == ["t", "phi", "dphi"]
    np.testing.assert_allclose(table["phi"], 0.1 * np.cos(table["t"]), atol=1e-6)


def test_theory_coarsening_rate(capsys):
    table = _theory_table(capsys, ["coarsening-rate", "--delta", "1.6", "2.1", "3.1"])
    assert table["xi_sq_rate"].is_monotonic_decreasing
    assert table["xi_sq_rate"][1] == pytest.approx(1.0)


def test_theory_scaling_function(capsys):
    table = _theory_table(capsys, ["scaling-F", "--x-s", "4", "--x", "2", "4"])
    np.testing.assert_allclose(table["F"], [np.sqrt(2.0), 4 ** 0.1855], rtol=1e-9)


def test_theory_kzm_to_file(tmp_path, capsys):
    out = tmp_path / "kzm.csv"
    assert run_theory.main(["kzm", "--tau", "1", "8", "--out", str(out)]) == 0
    assert "Saved:" in capsys.readouterr().out
    table = pd.read_csv(out)
    assert table["xi_kz"][1] / table["xi_kz"][0] == pytest.approx(8 ** (0.629 / 1.629))


@pytest.mark.slow
def test_theory_gaussian_preset(capsys):
    table = _theory_table(capsys, ["gaussian", "--preset", "disordered", "--modes", "16"])
    assert list(table.columns) == ["t", "phi", "xi_theory"]
    assert np.all(table["xi_theory"] > 0)


@pytest.mark.slow
def test_theory_gaussian_k_window_option(tmp_path, capsys):
    out = tmp_path / "g.csv"
    argv = ["gaussian", "--preset", "disordered", "--modes", "8", "--out", str(out), "--log-level", "WARNING"]
    assert run_theory.main(argv + ["--k-max", "0.2"]) == 0
    report = json.loads(capsys.readouterr().out.split("Saved:")[0])
    assert report["k_max"] == pytest.approx(0.2)
    assert run_theory.main(argv) == 0
    report = json.loads(capsys.readouterr().out.split("Saved:")[0])
    assert report["k_max"] == pytest.approx(0.3)


def test_schedule_dump(tiny_config, capsys):
    assert dump_schedule.main([str(tiny_config), "--point", "0", "--dt", "0.01"]) == 0
    table = pd.read_csv(io.StringIO(capsys.readouterr().out))
    assert list(table.columns) == ["t_us", "omega_mhz", "delta_mhz", "local_mhz"]
    assert table["omega_mhz"].max() == pytest.approx(4.0)
    assert table["delta_mhz"].min() == pytest.approx(-16.0)
    assert table["delta_mhz"].max() == pytest.approx(6.0)


def test_exit_codes(tiny_config, tmp_path, capsys):
    assert coarsen.main([]) == 2
    assert coarsen.main(["--help"]) == 0
    assert coarsen.main(["bogus"]) == 2

    bad = tmp_path / "bad.yaml"
    bad.write_text(TINY.replace("shots: 40", "shots: -1"))
    assert coarsen.main(["simulate", str(bad)]) == 3
    assert coarsen.main(["analyze", str(tmp_path / "missing.txt"), "--out", str(tmp_path / "o")]) == 4
    assert coarsen.main(["theory", "landau", "--tol", "0"]) == 2
    assert coarsen.main(["schedule", "dump", str(tiny_config), "--point", "5"]) == 2
    assert "error:" in capsys.readouterr().err
