"""
Single-shot analysis: staggered maps, spin-flip correction, domains, the coarse-graining
kernel, bulk/wall classical energy, post-selection and local-domain geometry.

Shots are uint8 arrays laid out [y, x]; stacks are (n_shots, height, width).
"""
import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from analysis.bootstrap import bootstrap
from analysis.errors import InvalidArgument
from analysis.snapshot_io import SnapshotSet
from simulation.lattice import parity_grid

logger = logging.getLogger(__name__)

# nearest + next-nearest neighbourhood used by the spin-flip rule
_NBR8 = np.array([[1, 1, 1],
                  [1, 0, 1],
                  [1, 1, 1]], dtype=np.int32)

# coarse-graining kernel W: nearest neighbours only
W_KERNEL = np.array([[0, 1, 0],
                     [1, 0, 1],
                     [0, 1, 0]], dtype=np.int32)


def _kernel_for(arr: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    return kernel if arr.ndim == 2 else kernel[None]


def _shots(obj) -> np.ndarray:
    if isinstance(obj, SnapshotSet):
        return obj.shots
    return np.asarray(obj, dtype=np.uint8)


def staggered_map(snapshot) -> np.ndarray:
    """(-1)^(x+y) (2n - 1); works on one shot or a stack."""
    n = np.asarray(snapshot)
    p = parity_grid(*n.shape[-2:])
    return (p * (2 * n.astype(np.int8) - 1)).astype(np.int8)


def spin_flip_correct(snapshot) -> np.ndarray:
    """
    Flip every site whose staggered sign differs from all of its existing nearest and
    next-nearest neighbours, unless one of those neighbours is isolated as well.
    One simultaneous pass over the uncorrected input; applying it twice changes nothing.
    """
    n = np.asarray(snapshot).astype(np.uint8)
    m = staggered_map(n)
    k = _kernel_for(n, _NBR8)
    pos = ndimage.convolve((m > 0).astype(np.int32), k, mode="constant", cval=0)
    neg = ndimage.convolve((m < 0).astype(np.int32), k, mode="constant", cval=0)
    total = pos + neg
    like = np.where(m > 0, pos, neg)
    isolated = (like == 0) & (total > 0)
    # adjacent isolated sites (e.g. an all-ground 1xN strip) would swap into each other
    clustered = ndimage.convolve(isolated.astype(np.int32), k, mode="constant", cval=0)
    flip = isolated & (clustered == 0)
    return np.where(flip, 1 - n, n).astype(np.uint8)


@dataclass
class DomainLabeling:
    labels: np.ndarray                    # 1..K, every site labelled
    order: np.ndarray                     # +1 (AF1) / -1 (AF2) per domain, index k-1
    areas: np.ndarray                     # atoms per domain, index k-1

    @property
    def n_domains(self) -> int:
        return int(self.areas.size)


def label_domains(snapshot_corrected) -> DomainLabeling:
    """Connected regions of constant staggered sign under 4-connectivity."""
    m = staggered_map(np.asarray(snapshot_corrected))
    if m.ndim != 2:
        raise InvalidArgument("label_domains takes a single shot")
    labels = np.zeros(m.shape, dtype=np.int32)
    orders = []
    n_total = 0
    for sign in (1, -1):
        lab, k = ndimage.label(m == sign)
        labels[lab > 0] = lab[lab > 0] + n_total
        orders.extend([sign] * k)
        n_total += k
    areas = np.bincount(labels.ravel(), minlength=n_total + 1)[1:]
    return DomainLabeling(labels, np.array(orders, dtype=np.int8), areas)


@dataclass
class DomainStatistics:
    distribution: dict[int, float]        # area -> probability that an atom sits in such a domain
    mean_largest: float
    mean_second_largest: float


def domain_statistics(snapshot_set, correct: bool = True) -> DomainStatistics:
    """Area-weighted domain-size distribution and mean largest / second-largest domain."""
    shots = _shots(snapshot_set)
    if shots.ndim == 2:
        shots = shots[None]
    if shots.shape[0] == 0:
        raise InvalidArgument("domain_statistics needs at least one shot")

    weights: dict[int, int] = {}
    largest, second = [], []
    for shot in shots:
        if correct:
            shot = spin_flip_correct(shot)
        areas = np.sort(label_domains(shot).areas)[::-1]
        for a in areas:
            weights[int(a)] = weights.get(int(a), 0) + int(a)
        largest.append(areas[0])
        second.append(areas[1] if areas.size > 1 else 0)

    total = sum(weights.values())
    dist = {a: w / total for a, w in sorted(weights.items())}
    return DomainStatistics(dist, float(np.mean(largest)), float(np.mean(second)))


def coarse_grain(snapshot) -> np.ndarray:
    """C = n convolved with W (sum of the 4 nearest-neighbour occupations), zero padded."""
    n = np.asarray(snapshot).astype(np.int32)
    return ndimage.convolve(n, _kernel_for(n, W_KERNEL), mode="constant", cval=0)


def classify_boundary(snapshot, coarse=None) -> np.ndarray:
    """True where (n=1 and C!=0) or (n=0 and C!=4)."""
    n = np.asarray(snapshot)
    c = coarse_grain(n) if coarse is None else np.asarray(coarse)
    return ((n == 1) & (c != 0)) | ((n == 0) & (c != 4))


@dataclass
class EnergyBudget:
    """Shot-averaged classical energy, rad/us. total == bulk + wall."""
    total: float
    bulk: float
    wall: float
    per_shot: np.ndarray = field(repr=False)   # (n_shots, 3): total, bulk, wall


def _site_energies(interior: np.ndarray, delta: float, v_nn: float, v_nnn: float) -> np.ndarray:
    """Single-site term plus half of every incident nn / nnn pair term, per interior site."""
    n = interior.astype(np.float64)
    e = -delta * (n - 1.0)

    def pair(a_sl, b_sl, v):
        p = 0.5 * v * n[a_sl] * n[b_sl]
        e[a_sl] += p
        e[b_sl] += p

    pair((slice(None), slice(None, -1)), (slice(None), slice(1, None)), v_nn)      # horizontal
    pair((slice(None, -1), slice(None)), (slice(1, None), slice(None)), v_nn)      # vertical
    pair((slice(None, -1), slice(None, -1)), (slice(1, None), slice(1, None)), v_nnn)
    pair((slice(None, -1), slice(1, None)), (slice(1, None), slice(None, -1)), v_nnn)
    return e


def classical_energy(snapshot_set, delta: float, v_nn: float, v_nnn: float,
                     correct: bool = True) -> EnergyBudget:
    """
    H_cl = -Delta sum (n_i - 1) + V_nn sum_nn n n + V_nnn sum_nnn n n over the interior
    (outermost layer excluded), computed on the raw shots. The bulk/wall split uses the
    boundary mask of the spin-flip-corrected shot.
    """
    shots = _shots(snapshot_set)
    if shots.ndim == 2:
        shots = shots[None]
    h, w = shots.shape[-2:]
    if h < 3 or w < 3:
        raise InvalidArgument(f"classical_energy needs at least 3x3 sites, got {w}x{h}")
    if shots.shape[0] == 0:
        raise InvalidArgument("classical_energy needs at least one shot")

    rows = np.empty((shots.shape[0], 3))
    for k, shot in enumerate(shots):
        ref = spin_flip_correct(shot) if correct else shot
        mask = classify_boundary(ref)[1:-1, 1:-1]
        e = _site_energies(shot[1:-1, 1:-1], delta, v_nn, v_nnn)
        wall = float(e[mask].sum())
        bulk = float(e[~mask].sum())
        rows[k] = (bulk + wall, bulk, wall)

    mean = rows.mean(axis=0)
    return EnergyBudget(float(mean[1] + mean[2]), float(mean[1]), float(mean[2]), rows)


def longest_run(snapshot) -> np.ndarray:
    """Longest horizontal or vertical run of 1s, per shot."""
    n = np.asarray(snapshot).astype(np.int32)
    single = n.ndim == 2
    if single:
        n = n[None]
    best = np.zeros(n.shape[0], dtype=np.int32)
    for axis in (1, 2):
        run = np.zeros(np.delete(n.shape, axis), dtype=np.int32)
        for k in range(n.shape[axis]):
            run = (run + 1) * np.take(n, k, axis=axis)
            best = np.maximum(best, run.max(axis=1))
    return best[0] if single else best


def postselect(snapshot_set: SnapshotSet, max_chain: int = 4, max_defects: int = 4) -> SnapshotSet:
    """
    Drop shots with a run of more than max_chain Rydberg atoms in a row or column, or with
    more than max_defects defects (meta["defects"], one count per shot, if present).
    """
    n = snapshot_set.n_shots
    keep = np.ones(n, dtype=bool)
    if n:
        keep &= longest_run(snapshot_set.shots) <= max_chain
        defects = snapshot_set.meta.get("defects")
        if defects is not None:
            defects = np.asarray(defects)
            if defects.shape != (n,):
                raise InvalidArgument(f"meta['defects'] has {defects.size} entries for {n} shots")
            keep &= defects <= max_defects

    frac = float(keep.mean()) if n else 0.0
    updates = {"retained_fraction": frac, "n_discarded": int(n - keep.sum())}
    if snapshot_set.meta.get("defects") is not None:
        updates["defects"] = np.asarray(snapshot_set.meta["defects"])[keep].tolist()
    logger.debug("postselect", extra={"n_shots": n, "retained": int(keep.sum())})
    return snapshot_set.subset(keep, **updates)


# ------------------------------------------------------------------ local-domain geometry

class RadialProfile(NamedTuple):
    distances: np.ndarray
    values: np.ndarray
    counts: np.ndarray


def radial_average(m_map: np.ndarray, center: tuple[int, int],
                   sublattice_filter: int | None = None) -> RadialProfile:
    """Average a [y, x] map over sites at each Manhattan distance from center."""
    m_map = np.asarray(m_map, dtype=np.float64)
    h, w = m_map.shape
    cx, cy = center
    if not (0 <= cx < w and 0 <= cy < h):
        raise InvalidArgument(f"center {center} is off the {w}x{h} lattice")
    yy, xx = np.indices((h, w))
    d = np.abs(xx - cx) + np.abs(yy - cy)
    sel = np.ones((h, w), dtype=bool)
    if sublattice_filter is not None:
        sel = parity_grid(h, w) == sublattice_filter
    counts = np.bincount(d[sel], minlength=d.max() + 1)
    sums = np.bincount(d[sel], weights=m_map[sel], minlength=d.max() + 1)
    have = counts > 0
    dist = np.flatnonzero(have)
    return RadialProfile(dist, sums[have] / counts[have], counts[have])


def radial_profile(snapshot_set, center: tuple[int, int],
                   sublattice_filter: int | None = None) -> RadialProfile:
    """Shot-averaged staggered magnetization at each Manhattan distance from center."""
    shots = _shots(snapshot_set)
    if shots.ndim == 2:
        shots = shots[None]
    if shots.shape[0] == 0:
        raise InvalidArgument("radial_profile needs at least one shot")
    return radial_average(staggered_map(shots).mean(axis=0), center, sublattice_filter)


def _crossings(values: np.ndarray) -> list[int]:
    """Indices k where the sign changes between k and k+1."""
    v = np.asarray(values, dtype=np.float64)
    out = []
    for k in range(v.size - 1):
        if v[k] == 0:
            continue
        if v[k] * v[k + 1] < 0:
            out.append(k)
        elif v[k + 1] == 0:
            # exact zero at k+1 counts only if the sign flips after it
            nxt = v[k + 2:][v[k + 2:] != 0]
            if nxt.size and nxt[0] * v[k] < 0:
                out.append(k)
    return out


def count_zero_crossings(values) -> int:
    return len(_crossings(values))


def first_crossing(x, values) -> float | None:
    """Linearly interpolated position of the first sign change, or None."""
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    idx = _crossings(v)
    if not idx:
        return None
    k = idx[0]
    return float(x[k] + v[k] / (v[k] - v[k + 1]) * (x[k + 1] - x[k]))


def domain_radius(profile) -> float | None:
    """
    Manhattan distance where the radial profile first crosses zero moving outward.
    None when it never changes sign; a warning is logged for more than one crossing.
    """
    if isinstance(profile, RadialProfile):
        d, v = profile.distances, profile.values
    else:
        d, v = profile
    n_cross = count_zero_crossings(v)
    if n_cross > 1:
        logger.warning("radial profile crosses zero more than once, using the first crossing",
                       extra={"n_crossings": n_cross})
    return first_crossing(d, v)


def fit_shrink_rate(hold_times, radii) -> tuple[float, float]:
    """Linear fit of r^2 against hold time; returns (dr^2/dt, standard error). None radii are skipped."""
    pts = [(float(t), float(r)) for t, r in zip(hold_times, radii) if r is not None and np.isfinite(r)]
    if len(pts) < 2:
        raise InvalidArgument("need at least two resolved radii to fit dr^2/dt")
    t, r = np.array(pts).T
    y = r**2
    slope, intercept = np.polyfit(t, y, 1)
    if len(t) <= 2:
        return float(slope), float("nan")
    resid = y - (slope * t + intercept)
    s2 = np.sum(resid**2) / (len(t) - 2)
    se = np.sqrt(s2 / np.sum((t - t.mean()) ** 2))
    return float(slope), float(se)


class WallPosition(NamedTuple):
    row: int
    x: float | None
    std_error: float | None


def wall_positions(snapshot_set, rows=None, n_resamples: int = 200, seed=0) -> list[WallPosition]:
    """Per-row zero crossing of the shot-averaged staggered magnetization along x."""
    shots = _shots(snapshot_set)
    if shots.ndim == 2:
        shots = shots[None]
    if shots.shape[0] == 0:
        raise InvalidArgument("wall_positions needs at least one shot")
    m = staggered_map(shots).astype(np.float64)
    h, w = m.shape[-2:]
    xs = np.arange(w, dtype=np.float64)
    rows = range(h) if rows is None else rows

    def crossing(row_maps):
        x = first_crossing(xs, row_maps.mean(axis=0))
        return np.nan if x is None else x

    out = []
    for y in rows:
        if not 0 <= y < h:
            raise InvalidArgument(f"row {y} outside 0..{h - 1}")
        row_maps = m[:, y, :]
        x = first_crossing(xs, row_maps.mean(axis=0))
        if x is None:
            out.append(WallPosition(int(y), None, None))
            continue
        err = bootstrap(row_maps, crossing, n_resamples, seed).std_error if shots.shape[0] > 1 else 0.0
        out.append(WallPosition(int(y), x, float(err)))
    return out
