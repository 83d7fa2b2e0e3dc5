"""
Experiment configuration: YAML, validated against a JSON Schema, loaded into dataclasses.

Frequencies are quoted as f/2pi in MHz and converted to rad/us here; detunings are given
in units of Omega. Example:

    lattice: {width: 4, height: 5, v_nn_mhz: 11.69}
    schedule:
      protocol: sweep_and_hold
      omega_mhz: 6.0
      delta_end: 2.5            # Delta / Omega, or a list of points
    hold_times_us: [0.0, 0.5, 1.0]
    engine: exact
    shots: 1000
    seed: 7
"""
import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from jsonschema import Draft202012Validator
from jsonschema.exceptions import best_match

from analysis.errors import ConfigError
from simulation.lattice import CUTOFF_D2, Lattice, build_lattice
from simulation.quantum import MAX_SITES
from waveforms.schedules import (
    DEFAULT_PIN_RATIO,
    DEFAULT_QUENCH_RAMP,
    DEFAULT_RAMP_TIME,
    DELTA_C_RATIO,
    ORDERED_QUENCH_HIGH,
    DriveSchedule,
    linear_sweep_and_hold,
    local_domain_protocol,
    ordered_phase_quench,
    square_domain_order,
    uniform_order,
    zigzag_wall_order,
)

PROTOCOLS = ("sweep_and_hold", "local_domain", "ordered_quench")
ENGINES = ("exact", "meanfield")
LAYOUTS = ("uniform", "square", "zigzag")
WORKERS_ENV = "COARSEN_WORKERS"

_NUMBER = {"type": "number"}
_ORDER = {"enum": ["AF1", "AF2"]}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["lattice", "schedule", "hold_times_us"],
    "properties": {
        "name": {"type": "string"},
        "lattice": {
            "type": "object",
            "additionalProperties": False,
            "required": ["width", "height"],
            "properties": {
                "width": {"type": "integer", "minimum": 1},
                "height": {"type": "integer", "minimum": 1},
                "spacing_a": {"type": "number", "exclusiveMinimum": 0},
                "v_nn_mhz": {"type": "number", "exclusiveMinimum": 0},
                "boundary": {"enum": ["open", "periodic"]},
                "cutoff": {"enum": sorted(CUTOFF_D2)},
            },
        },
        "schedule": {
            "type": "object",
            "additionalProperties": False,
            "required": ["protocol", "omega_mhz", "delta_end"],
            "properties": {
                "protocol": {"enum": list(PROTOCOLS)},
                "omega_mhz": {"type": "number", "exclusiveMinimum": 0},
                "delta_start": _NUMBER,
                "delta_end": {"oneOf": [_NUMBER, {"type": "array", "items": _NUMBER, "minItems": 1}]},
                "delta_high": _NUMBER,
                "sweep_rate": {"type": "number", "exclusiveMinimum": 0},
                "ramp_time_us": {"type": "number", "minimum": 0},
                "quench_ramp_us": {"type": "number", "minimum": 0},
                "local_amplitude": {"type": "number", "maximum": 0},
                "layout": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"enum": list(LAYOUTS)},
                        "order": _ORDER,
                        "inside": _ORDER,
                        "outside": _ORDER,
                        "center": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
                        "half_size": {"type": "integer", "minimum": 0},
                        "column": {"type": "integer", "minimum": 0},
                        "amplitude": {"type": "integer"},
                        "period": {"type": "integer", "minimum": 2},
                    },
                },
            },
        },
        "hold_times_us": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "engine": {"enum": list(ENGINES)},
        "shots": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "output": {"type": "string"},
        "site_cap": {"type": "integer", "minimum": 1, "maximum": MAX_SITES},
        "tolerance": {"type": "number", "exclusiveMinimum": 0},
        "analysis": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "postselect": {"type": "boolean"},
                "max_chain": {"type": "integer", "minimum": 1},
                "max_defects": {"type": "integer", "minimum": 0},
                "correlations": {"type": "boolean"},
                "domains": {"type": "boolean"},
                "energy": {"type": "boolean"},
                "radial": {"type": "boolean"},
                "walls": {"type": "boolean"},
                "sublattice": {"enum": ["all", "even", "odd"]},
                "bootstrap_resamples": {"type": "integer", "minimum": 1},
            },
        },
    },
}

_VALIDATOR = Draft202012Validator(CONFIG_SCHEMA)


def _mhz(f: float) -> float:
    return 2 * np.pi * f


@dataclass(frozen=True)
class LatticeConfig:
    width: int
    height: int
    spacing_a: float = 1.0
    v_nn_mhz: float = 11.69
    boundary: str = "open"
    cutoff: str = "third_nearest"

    def build(self) -> Lattice:
        return build_lattice(self.width, self.height, self.spacing_a, _mhz(self.v_nn_mhz),
                             self.boundary, self.cutoff)


@dataclass(frozen=True)
class LayoutConfig:
    kind: str = "uniform"
    order: str = "AF1"
    inside: str = "AF2"
    outside: str = "AF1"
    center: tuple[int, int] | None = None
    half_size: int = 2
    column: int | None = None
    amplitude: int = 1
    period: int = 2

    def target_map(self, lattice: Lattice) -> np.ndarray:
        sign = {"AF1": 1, "AF2": -1}
        if self.kind == "uniform":
            return uniform_order(lattice, sign[self.order])
        if self.kind == "square":
            center = self.center or (lattice.width // 2, lattice.height // 2)
            return square_domain_order(lattice, tuple(center), self.half_size,
                                       sign[self.inside], sign[self.outside])
        column = lattice.width // 2 - 1 if self.column is None else self.column
        return zigzag_wall_order(lattice, column, self.amplitude, self.period, sign[self.outside])

    def radial_center(self, lattice: Lattice) -> tuple[int, int] | None:
        if self.kind != "square":
            return None
        return tuple(self.center) if self.center else (lattice.width // 2, lattice.height // 2)


@dataclass(frozen=True)
class ScheduleConfig:
    protocol: str
    omega_mhz: float
    delta_end: tuple[float, ...]          # Delta / Omega, one entry per parameter point
    delta_start: float = -4.0
    delta_high: float = ORDERED_QUENCH_HIGH
    sweep_rate: float = 3.0 / (2 * np.pi)
    ramp_time_us: float = DEFAULT_RAMP_TIME
    quench_ramp_us: float = DEFAULT_QUENCH_RAMP
    local_amplitude: float = DEFAULT_PIN_RATIO
    layout: LayoutConfig = field(default_factory=LayoutConfig)

    @property
    def omega(self) -> float:
        return _mhz(self.omega_mhz)

    def build(self, lattice: Lattice, delta_over_omega: float, hold_time: float) -> DriveSchedule:
        om = self.omega
        if self.protocol == "sweep_and_hold":
            return linear_sweep_and_hold(om, self.delta_start * om, delta_over_omega * om,
                                         self.sweep_rate, hold_time, self.ramp_time_us)
        if self.protocol == "local_domain":
            return local_domain_protocol(lattice, om, delta_over_omega * om, self.layout.target_map(lattice),
                                         self.sweep_rate, hold_time, self.delta_start * om,
                                         self.local_amplitude * om, self.quench_ramp_us, self.ramp_time_us)
        return ordered_phase_quench(om, self.delta_high * om, delta_over_omega * om, lattice,
                                    self.sweep_rate, hold_time, self.delta_start * om,
                                    self.local_amplitude * om, self.quench_ramp_us, self.ramp_time_us,
                                    DELTA_C_RATIO * om)


@dataclass(frozen=True)
class AnalysisConfig:
    postselect: bool = True
    max_chain: int = 4
    max_defects: int = 4
    correlations: bool = True
    domains: bool = True
    energy: bool = True
    radial: bool = False
    walls: bool = False
    sublattice: str = "all"
    bootstrap_resamples: int = 200


@dataclass(frozen=True)
class ExperimentConfig:
    lattice: LatticeConfig
    schedule: ScheduleConfig
    hold_times: tuple[float, ...]
    engine: str = "exact"
    shots: int = 1000
    seed: int = 0
    output: str = "runs/default"
    site_cap: int = MAX_SITES
    tolerance: float = 1e-9
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    name: str = "experiment"
    sha256: str = ""


def _node_line(root, path) -> int | None:
    """1-based line of the YAML node at `path` (or its nearest existing parent)."""
    node = root
    line = node.start_mark.line + 1 if node is not None else None
    for key in path:
        if isinstance(node, yaml.MappingNode):
            nxt = next((v for k, v in node.value if k.value == str(key)), None)
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            nxt = node.value[key]
        else:
            nxt = None
        if nxt is None:
            break
        node = nxt
        line = node.start_mark.line + 1
    return line


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
        root = yaml.compose(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"{source}: invalid YAML: {getattr(e, 'problem', None) or e}", line=line) from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping", line=1)

    err = best_match(_VALIDATOR.iter_errors(data))
    if err is not None:
        path = list(err.absolute_path)
        dotted = ".".join(str(p) for p in path) or "<root>"
        raise ConfigError(f"{source}: {err.message}", path=dotted, line=_node_line(root, path))

    lat = LatticeConfig(**data["lattice"])
    sch = dict(data["schedule"])
    de = sch.pop("delta_end")
    layout = LayoutConfig(**{k: (tuple(v) if k == "center" else v) for k, v in sch.pop("layout", {}).items()})
    sch = ScheduleConfig(delta_end=tuple(float(x) for x in np.atleast_1d(de)), layout=layout, **sch)
    holds = tuple(float(h) for h in data["hold_times_us"])
    if any(b <= a for a, b in zip(holds[:-1], holds[1:])):
        raise ConfigError(f"{source}: hold times must be strictly increasing", path="hold_times_us",
                          line=_node_line(root, ["hold_times_us"]))

    cfg = ExperimentConfig(
        lattice=lat,
        schedule=sch,
        hold_times=holds,
        engine=data.get("engine", "exact"),
        shots=int(data.get("shots", 1000)),
        seed=int(data.get("seed", 0)),
        output=data.get("output", f"runs/{data.get('name', 'experiment')}"),
        site_cap=int(data.get("site_cap", MAX_SITES)),
        tolerance=float(data.get("tolerance", 1e-9)),
        analysis=AnalysisConfig(**data.get("analysis", {})),
        name=data.get("name", "experiment"),
        sha256=hashlib.sha256(text.encode()).hexdigest(),
    )

    n = lat.width * lat.height
    if cfg.engine == "exact" and n > cfg.site_cap:
        raise ConfigError(f"{source}: exact engine supports at most {cfg.site_cap} sites, lattice has {n}",
                          path="lattice", line=_node_line(root, ["lattice"]))
    if sch.layout.kind == "square" and sch.layout.center is not None:
        cx, cy = sch.layout.center
        if not (0 <= cx < lat.width and 0 <= cy < lat.height):
            raise ConfigError(f"{source}: layout center {sch.layout.center} is off the lattice",
                              path="schedule.layout.center",
                              line=_node_line(root, ["schedule", "layout", "center"]))
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from e
    return parse_config(text, str(path))


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(int(raw), 1)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
