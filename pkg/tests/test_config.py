import hashlib
from pathlib import Path

import numpy as np
import pytest

from analysis.errors import ConfigError
from simulation.config import WORKERS_ENV, default_workers, load_config, parse_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

TINY = """\
name: tiny
lattice:
  width: 2
  height: 2
schedule:
  protocol: sweep_and_hold
  omega_mhz: 4.0
  delta_end: 2.5
hold_times_us: [0.0, 0.1]
"""


def test_defaults_and_units():
    cfg = parse_config(TINY)
    assert cfg.name == "tiny"
    assert cfg.engine == "exact"
    assert cfg.output == "runs/tiny"
    assert cfg.schedule.delta_end == (2.5,)
    assert cfg.schedule.omega == pytest.approx(2 * np.pi * 4.0)
    assert cfg.hold_times == (0.0, 0.1)
    assert cfg.analysis.max_chain == 4
    lat = cfg.lattice.build()
    assert lat.n_sites == 4
    assert lat.v_nn == pytest.approx(2 * np.pi * 11.69)


@pytest.mark.parametrize("name", ["sweep_4x5.yaml", "square_domain_16x16.yaml", "ordered_quench_4x4.yaml"])
def test_shipped_configs_load(name):
    path = CONFIGS / name
    cfg = load_config(path)
    assert cfg.sha256 == hashlib.sha256(path.read_text().encode()).hexdigest()
    lattice = cfg.lattice.build()
    sched = cfg.schedule.build(lattice, cfg.schedule.delta_end[0], max(cfg.hold_times))
    assert sched.total_time > max(cfg.hold_times)


def test_square_layout_center():
    cfg = load_config(CONFIGS / "square_domain_16x16.yaml")
    lattice = cfg.lattice.build()
    assert cfg.schedule.layout.radial_center(lattice) == (8, 8)
    target = cfg.schedule.layout.target_map(lattice)
    assert target[8, 8] == -1
    assert target[0, 0] == 1


def test_unknown_key_names_field_and_line():
    text = TINY.replace("  height: 2\n", "  height: 2\n  bogus: 1\n")
    with pytest.raises(ConfigError) as e:
        parse_config(text, "tiny.yaml")
    assert e.value.exit_code == 3
    assert e.value.path == "lattice"
    assert e.value.line == 3
    assert "bogus" in str(e.value)


def test_wrong_type_names_field_and_line():
    with pytest.raises(ConfigError) as e:
        parse_config(TINY + "shots: many\n")
    assert e.value.path == "shots"
    assert e.value.line == 10


def test_missing_required_section():
    with pytest.raises(ConfigError, match="hold_times_us"):
        parse_config("lattice: {width: 2, height: 2}\nschedule: {protocol: sweep_and_hold, "
                     "omega_mhz: 4, delta_end: 2}\n")


def test_yaml_syntax_error_has_a_line():
    with pytest.raises(ConfigError, match="invalid YAML") as e:
        parse_config("name: x\nlattice: {width: 2\n")
    assert e.value.line is not None
    with pytest.raises(ConfigError) as e:
        parse_config("- 1\n- 2\n")
    assert e.value.line == 1


def test_hold_times_must_increase():
    with pytest.raises(ConfigError) as e:
        parse_config(TINY.replace("[0.0, 0.1]", "[0.0, 0.2, 0.1]"))
    assert e.value.path == "hold_times_us"
    assert e.value.line == 9


def test_exact_engine_site_cap():
    big = TINY.replace("width: 2", "width: 5").replace("height: 2", "height: 5")
    with pytest.raises(ConfigError, match="at most 20 sites"):
        parse_config(big)
    assert parse_config(big + "engine: meanfield\n").engine == "meanfield"
    with pytest.raises(ConfigError, match="at most 6 sites"):
        parse_config(TINY.replace("width: 2", "width: 4") + "site_cap: 6\n")


def test_layout_center_off_lattice():
    text = TINY.replace("  delta_end: 2.5\n", "  delta_end: 2.5\n  layout: {kind: square, center: [2, 0]}\n")
    text = text.replace("sweep_and_hold", "local_domain")
    with pytest.raises(ConfigError, match="off the lattice") as e:
        parse_config(text)
    assert e.value.path == "schedule.layout.center"


def test_list_of_points():
    cfg = parse_config(TINY.replace("delta_end: 2.5", "delta_end: [1.5, 2.0, 3]"))
    assert cfg.schedule.delta_end == (1.5, 2.0, 3.0)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read config"):
        load_config(tmp_path / "nope.yaml")


def test_default_workers(monkeypatch):
    monkeypatch.delenv(WORKERS_ENV, raising=False)
    assert default_workers() == 1
    monkeypatch.setenv(WORKERS_ENV, "3")
    assert default_workers() == 3
    monkeypatch.setenv(WORKERS_ENV, "0")
    assert default_workers() == 1
    monkeypatch.setenv(WORKERS_ENV, "lots")
    with pytest.raises(ConfigError):
        default_workers()
