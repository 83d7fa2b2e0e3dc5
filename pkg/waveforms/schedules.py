"""
Drive waveforms Omega(t), Delta(t) and the local detuning delta_i(t) = alpha_i * delta(t).

All schedules are piecewise linear. Angular frequencies in rad/us, times in us.
A step quench is two adjacent segments whose end/start values differ.
"""
import logging
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from analysis.errors import ConfigError, InvalidArgument
from simulation.lattice import Lattice, SiteIndex, nearest_neighbor_pairs, site_parity

logger = logging.getLogger(__name__)

DEFAULT_RAMP_TIME = 0.2        # Omega turn-on, us
DEFAULT_QUENCH_RAMP = 0.05     # local detuning switch-off, us
DEFAULT_PIN_RATIO = -4.0       # delta / Omega
DELTA_C_RATIO = 1.1            # Delta_c / Omega of the square-lattice checkerboard transition
ORDERED_QUENCH_HIGH = 3.3      # Delta / Omega deep in the ordered phase

_T_EPS = 1e-12


@dataclass(frozen=True)
class Segment:
    t_start: float
    t_end: float
    omega_start: float
    omega_end: float
    delta_start: float
    delta_end: float
    local_start: float = 0.0
    local_end: float = 0.0

    def values(self, t: float) -> tuple[float, float, float]:
        frac = (t - self.t_start) / (self.t_end - self.t_start)
        frac = min(max(frac, 0.0), 1.0)
        return (
            self.omega_start + frac * (self.omega_end - self.omega_start),
            self.delta_start + frac * (self.delta_end - self.delta_start),
            self.local_start + frac * (self.local_end - self.local_start),
        )

    def split(self, t: float) -> tuple["Segment", "Segment"]:
        om, de, lo = self.values(t)
        return (replace(self, t_end=t, omega_end=om, delta_end=de, local_end=lo),
                replace(self, t_start=t, omega_start=om, delta_start=de, local_start=lo))


@dataclass(frozen=True)
class DriveSchedule:
    segments: tuple[Segment, ...]
    local_pattern: np.ndarray | None = field(default=None, compare=False, repr=False)
    tag: str = ""

    def __post_init__(self):
        segs = self.segments
        if len(segs) == 0:
            raise InvalidArgument("schedule needs at least one segment")
        if abs(segs[0].t_start) > _T_EPS:
            raise InvalidArgument(f"first segment must start at t=0, got {segs[0].t_start}")
        for a, b in zip(segs[:-1], segs[1:]):
            if abs(a.t_end - b.t_start) > 1e-9:
                raise InvalidArgument(f"segments not contiguous at t={a.t_end} / {b.t_start}")
        for s in segs:
            if not s.t_end > s.t_start:
                raise InvalidArgument(f"segment [{s.t_start}, {s.t_end}] has no duration")
            if s.omega_start < 0 or s.omega_end < 0:
                raise InvalidArgument("Omega(t) must be >= 0")
            if s.local_start > 0 or s.local_end > 0:
                raise InvalidArgument("local amplitude delta(t) must be <= 0")
        if self.local_pattern is not None and np.any(np.asarray(self.local_pattern) < 0):
            raise InvalidArgument("local weights alpha_i must be >= 0")

    @property
    def total_time(self) -> float:
        return self.segments[-1].t_end

    def segment_at(self, t: float) -> Segment:
        """Right-continuous lookup: at a breakpoint the later segment wins."""
        if t < -_T_EPS or t > self.total_time + 1e-9:
            raise InvalidArgument(f"t={t} outside schedule [0, {self.total_time}]")
        starts = np.array([s.t_start for s in self.segments])
        k = int(np.searchsorted(starts, t, side="right")) - 1
        return self.segments[min(max(k, 0), len(self.segments) - 1)]


def evaluate(schedule: DriveSchedule, t: float) -> tuple[float, float, float]:
    """(Omega, Delta, delta) at time t."""
    return schedule.segment_at(t).values(t)


def local_detunings(schedule: DriveSchedule, t: float, n_sites: int | None = None) -> np.ndarray:
    """Per-site delta_i(t) = alpha_i * delta(t), linear index order."""
    _, _, amp = evaluate(schedule, t)
    if schedule.local_pattern is None:
        return np.zeros(n_sites or 0)
    return np.asarray(schedule.local_pattern, dtype=np.float64) * amp


def breakpoints(schedule: DriveSchedule) -> np.ndarray:
    return np.array([s.t_start for s in schedule.segments] + [schedule.total_time])


def _const(t0, t1, omega, delta, local=0.0) -> Segment:
    return Segment(t0, t1, omega, omega, delta, delta, local, local)


def linear_sweep_and_hold(omega: float, delta_start: float, delta_end: float, sweep_rate: float,
                          hold_time: float, ramp_time: float = DEFAULT_RAMP_TIME) -> DriveSchedule:
    """
    Omega ramp at fixed delta_start, linear Delta sweep, then hold.
    sweep_rate is dimensionless: (Delta_end - Delta_start) / (Omega^2 T_sweep).
    """
    if not delta_start < 0 < delta_end:
        raise InvalidArgument(f"need delta_start < 0 < delta_end, got {delta_start}, {delta_end}")
    if not sweep_rate > 0:
        raise InvalidArgument(f"sweep_rate must be > 0, got {sweep_rate}")
    if not omega > 0:
        raise InvalidArgument(f"omega must be > 0, got {omega}")
    if hold_time < 0 or ramp_time < 0:
        raise InvalidArgument("hold_time and ramp_time must be >= 0")

    t_sweep = (delta_end - delta_start) / (omega**2 * sweep_rate)
    segs = []
    t = 0.0
    if ramp_time > 0:
        segs.append(Segment(0.0, ramp_time, 0.0, omega, delta_start, delta_start))
        t = ramp_time
    segs.append(Segment(t, t + t_sweep, omega, omega, delta_start, delta_end))
    t += t_sweep
    if hold_time > 0:
        segs.append(_const(t, t + hold_time, omega, delta_end))
    return DriveSchedule(tuple(segs), tag="sweep_and_hold")


def sweep_end_time(schedule: DriveSchedule) -> float:
    """End of the last segment over which Delta changes continuously (before any hold)."""
    t_end = 0.0
    for s in schedule.segments:
        if s.delta_end != s.delta_start:
            t_end = s.t_end
    return t_end


# ---------------------------------------------------------------- target layouts
# A target map holds +1 (AF1) or -1 (AF2) per site, laid out [y, x].

def uniform_order(lattice: Lattice, order: int = 1) -> np.ndarray:
    return np.full(lattice.shape, int(np.sign(order)) or 1, dtype=np.int8)


def square_domain_order(lattice: Lattice, center: tuple[int, int], half_size: int,
                        inside: int = -1, outside: int = 1) -> np.ndarray:
    """Square domain |x-cx|, |y-cy| <= half_size with ordering `inside` in an `outside` backdrop."""
    cx, cy = center
    lattice.site(cx, cy)
    yy, xx = np.indices(lattice.shape)
    m = (np.abs(xx - cx) <= half_size) & (np.abs(yy - cy) <= half_size)
    return np.where(m, inside, outside).astype(np.int8)


def zigzag_wall_order(lattice: Lattice, column: int, amplitude: int = 1, period: int = 2,
                      left: int = 1) -> np.ndarray:
    """Wall between `column` and `column+1`, shifted right by `amplitude` on alternate row blocks."""
    half = max(period // 2, 1)
    yy, xx = np.indices(lattice.shape)
    offset = np.where((yy // half) % 2 == 1, amplitude, 0)
    return np.where(xx <= column + offset, left, -left).astype(np.int8)


@dataclass(frozen=True)
class PinPattern:
    pinned_sites: frozenset[SiteIndex]
    alpha: np.ndarray = field(compare=False, repr=False)   # per linear index, 0 for unpinned

    @property
    def mask(self) -> np.ndarray:
        return self.alpha > 0


def pin_pattern(lattice: Lattice, target_order_map) -> PinPattern:
    """
    Pin every site that is a ground-state atom in the target ordering.
    alpha_i is proportional to 1 / (target-Rydberg nearest neighbours), max weight 1.
    """
    if target_order_map is None:
        raise InvalidArgument("empty target map")
    if isinstance(target_order_map, str):
        key = target_order_map.upper()
        if key not in ("AF1", "AF2"):
            raise InvalidArgument(f"unknown target ordering {target_order_map!r}")
        target_order_map = uniform_order(lattice, 1 if key == "AF1" else -1)

    order = np.asarray(target_order_map)
    if order.size == 0:
        raise InvalidArgument("empty target map")
    if order.shape != lattice.shape:
        raise InvalidArgument(f"target map shape {order.shape} != lattice {lattice.shape}")
    if not np.all(np.isin(order, (-1, 1))):
        raise InvalidArgument("target map entries must be +1 (AF1) or -1 (AF2)")

    target_n = ((site_parity(lattice) * order) == 1).reshape(-1)
    pinned = ~target_n

    # count target-Rydberg nearest neighbours of every site
    pairs = nearest_neighbor_pairs(lattice)
    n_ryd = np.zeros(lattice.n_sites, dtype=np.int64)
    np.add.at(n_ryd, pairs[:, 0], target_n[pairs[:, 1]])
    np.add.at(n_ryd, pairs[:, 1], target_n[pairs[:, 0]])

    alpha = np.where(pinned, 1.0 / np.maximum(n_ryd, 1), 0.0)
    if alpha.max() > 0:
        alpha = alpha / alpha.max()

    sites = frozenset(lattice.site_from_linear(int(i)) for i in np.flatnonzero(pinned))
    return PinPattern(sites, alpha)


def with_local_pattern(schedule: DriveSchedule, pattern: PinPattern | np.ndarray,
                       amplitude: float) -> DriveSchedule:
    """Attach alpha weights and a constant pinning amplitude delta(t) = amplitude."""
    if amplitude > 0:
        raise InvalidArgument(f"pinning amplitude must be <= 0, got {amplitude}")
    alpha = pattern.alpha if isinstance(pattern, PinPattern) else np.asarray(pattern, dtype=np.float64)
    segs = tuple(replace(s, local_start=amplitude, local_end=amplitude) for s in schedule.segments)
    return DriveSchedule(segs, alpha, schedule.tag)


def local_quench_off(schedule: DriveSchedule, t_off: float, ramp_duration: float) -> DriveSchedule:
    """delta(t) ramps linearly from its value just before t_off to 0 over ramp_duration, 0 after."""
    T = schedule.total_time
    if t_off < 0 or ramp_duration < 0 or t_off + ramp_duration > T + 1e-9:
        raise InvalidArgument(f"quench window [{t_off}, {t_off + ramp_duration}] outside [0, {T}]")

    after = [s for s in schedule.segments if s.t_end > t_off]
    if all(s.local_start == 0 and s.local_end == 0 for s in after):
        return schedule

    # left limit of delta at t_off
    if t_off <= _T_EPS:
        d0 = schedule.segments[0].local_start
    else:
        d0 = schedule.segment_at(t_off - 1e-12).values(t_off)[2]
    t_zero = t_off + ramp_duration

    cuts = sorted({t_off, t_zero} | {s.t_start for s in schedule.segments} | {T})
    cuts = [c for c in cuts if c <= T + 1e-9]
    segs = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b - a <= _T_EPS:
            continue
        src = schedule.segment_at(0.5 * (a + b))
        om_a, de_a, lo_a = src.values(a)
        om_b, de_b, lo_b = src.values(b)
        if b <= t_off + _T_EPS:
            pass
        elif a >= t_zero - _T_EPS:
            lo_a = lo_b = 0.0
        else:
            lo_a = d0 * (1.0 - (a - t_off) / ramp_duration)
            lo_b = d0 * (1.0 - (b - t_off) / ramp_duration)
        segs.append(Segment(a, b, om_a, om_b, de_a, de_b, lo_a, lo_b))
    return DriveSchedule(tuple(segs), schedule.local_pattern, schedule.tag)


def local_domain_protocol(lattice: Lattice, omega: float, delta_end: float, target_order_map,
                          sweep_rate: float, hold_time: float, delta_start: float | None = None,
                          local_amplitude: float | None = None,
                          quench_ramp: float = DEFAULT_QUENCH_RAMP,
                          ramp_time: float = DEFAULT_RAMP_TIME) -> DriveSchedule:
    """Pinned sweep into the ordered phase, local detuning quenched off, then hold."""
    delta_start = -4.0 * omega if delta_start is None else delta_start
    local_amplitude = DEFAULT_PIN_RATIO * omega if local_amplitude is None else local_amplitude

    base = linear_sweep_and_hold(omega, delta_start, delta_end, sweep_rate,
                                 quench_ramp + hold_time, ramp_time)
    t_off = sweep_end_time(base)
    pinned = with_local_pattern(base, pin_pattern(lattice, target_order_map), local_amplitude)
    out = local_quench_off(pinned, t_off, quench_ramp)
    return replace(out, tag="local_domain")


def ordered_phase_quench(omega: float, delta_high: float, delta_final: float,
                         lattice: Lattice | None = None, sweep_rate: float = 3.0 / (2 * np.pi),
                         hold_time: float = 1.0, delta_start: float | None = None,
                         local_amplitude: float | None = None,
                         quench_ramp: float = DEFAULT_QUENCH_RAMP,
                         ramp_time: float = DEFAULT_RAMP_TIME,
                         delta_c: float | None = None) -> DriveSchedule:
    """
    Sweep to delta_high with one sublattice pinned, switch the pin off at constant Delta,
    then step Delta down to delta_final and hold.
    """
    if lattice is None:
        raise ConfigError("ordered_quench needs a lattice to build the AF1 pin pattern", path="lattice")
    delta_c = DELTA_C_RATIO * omega if delta_c is None else delta_c
    if delta_final > delta_high:
        raise InvalidArgument(f"delta_final ({delta_final}) must not exceed delta_high ({delta_high})")
    if delta_high <= delta_c:
        raise InvalidArgument(f"delta_high ({delta_high}) must lie above Delta_c ({delta_c})")
    if delta_final <= delta_c:
        logger.warning("delta_final at or below Delta_c, quench leaves the ordered phase",
                       extra={"delta_final": delta_final, "delta_c": delta_c})

    delta_start = -4.0 * omega if delta_start is None else delta_start
    local_amplitude = DEFAULT_PIN_RATIO * omega if local_amplitude is None else local_amplitude

    base = linear_sweep_and_hold(omega, delta_start, delta_high, sweep_rate, quench_ramp, ramp_time)
    t_off = sweep_end_time(base)
    base = with_local_pattern(base, pin_pattern(lattice, "AF1"), local_amplitude)
    base = local_quench_off(base, t_off, quench_ramp)

    t = base.total_time
    last = _const(t, t + hold_time, omega, delta_final) if hold_time > 0 else None
    segs = base.segments + ((last,) if last is not None else ())
    return DriveSchedule(segs, base.local_pattern, "ordered_quench")


def sample_schedule(schedule: DriveSchedule, dt: float) -> pd.DataFrame:
    """Samples on a dt grid (plus breakpoints), frequencies as f/2pi in MHz."""
    if not dt > 0:
        raise InvalidArgument("dt must be > 0")
    T = schedule.total_time
    t = np.union1d(np.arange(0.0, T, dt), breakpoints(schedule))
    vals = np.array([evaluate(schedule, ti) for ti in t])
    return pd.DataFrame({
        "t_us": t,
        "omega_mhz": vals[:, 0] / (2 * np.pi),
        "delta_mhz": vals[:, 1] / (2 * np.pi),
        "local_mhz": vals[:, 2] / (2 * np.pi),
    })
