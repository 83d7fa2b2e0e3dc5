"""
Square-lattice geometry and van der Waals coupling table.

Conventions used everywhere in the repo:
  - site (x, y) has linear index i = x + width*y, which is also bit i of a basis state
  - site arrays are laid out [y, x] (row-major), so arr.reshape(-1)[i] is site i
  - parity p = (-1)^(x+y); AF1 puts Rydberg atoms on p = +1
"""
import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from analysis.errors import InvalidArgument

logger = logging.getLogger(__name__)

BOUNDARIES = ("open", "periodic")

# squared distance (units of a^2) kept by each cutoff
CUTOFF_D2 = {
    "nearest": 1,
    "next_nearest": 2,
    "third_nearest": 4,
}


class SiteIndex(NamedTuple):
    x: int
    y: int
    linear: int


@dataclass(frozen=True)
class Lattice:
    """Immutable lattice; couplings[i, j] = V_ij in rad/us, zero on the diagonal."""
    width: int
    height: int
    spacing_a: float
    v_nn: float
    boundary: str = "open"
    cutoff: str = "third_nearest"
    couplings: np.ndarray = field(default=None, compare=False, repr=False)
    distance_sq: np.ndarray = field(default=None, compare=False, repr=False)

    @property
    def n_sites(self) -> int:
        return self.width * self.height

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def coupling_at(self, d2: int) -> float:
        """V at squared distance d2 as it enters the coupling table: zero beyond the cutoff."""
        if not 0 < d2 <= CUTOFF_D2[self.cutoff]:
            return 0.0
        return float(self.v_nn / d2**3)

    def site(self, x: int, y: int) -> SiteIndex:
        if not (0 <= x < self.width and 0 <= y < self.height):
            raise InvalidArgument(f"site ({x}, {y}) is off the {self.width}x{self.height} lattice")
        return SiteIndex(int(x), int(y), int(x + self.width * y))

    def site_from_linear(self, i: int) -> SiteIndex:
        if not 0 <= i < self.n_sites:
            raise InvalidArgument(f"linear index {i} out of range")
        return SiteIndex(int(i % self.width), int(i // self.width), int(i))


def _pair_distance_sq(width: int, height: int, boundary: str) -> np.ndarray:
    ys, xs = np.divmod(np.arange(width * height), width)
    dx = np.abs(xs[:, None] - xs[None, :])
    dy = np.abs(ys[:, None] - ys[None, :])
    if boundary == "periodic":
        # minimum image
        dx = np.minimum(dx, width - dx)
        dy = np.minimum(dy, height - dy)
    return dx**2 + dy**2


def build_lattice(width: int, height: int, spacing_a: float = 1.0, v_nn: float = 2 * np.pi * 11.69,
                  boundary: str = "open", cutoff: str = "third_nearest") -> Lattice:
    """
    Build a width x height square lattice with V(d) = V_nn (a/d)^6 inside the cutoff.
    v_nn is an angular frequency (rad/us).
    """
    if int(width) != width or int(height) != height or width < 1 or height < 1:
        raise InvalidArgument(f"lattice dimensions must be positive integers, got {width}x{height}")
    if not spacing_a > 0:
        raise InvalidArgument(f"spacing_a must be > 0, got {spacing_a}")
    if not v_nn > 0:
        raise InvalidArgument(f"v_nn must be > 0, got {v_nn}")
    if boundary not in BOUNDARIES:
        raise InvalidArgument(f"unknown boundary {boundary!r}, expected one of {BOUNDARIES}")
    if cutoff not in CUTOFF_D2:
        raise InvalidArgument(f"unknown cutoff {cutoff!r}, expected one of {tuple(CUTOFF_D2)}")

    width, height = int(width), int(height)
    d2 = _pair_distance_sq(width, height, boundary)

    keep = (d2 > 0) & (d2 <= CUTOFF_D2[cutoff])
    couplings = np.zeros(d2.shape, dtype=np.float64)
    couplings[keep] = v_nn / d2[keep].astype(np.float64) ** 3

    couplings.setflags(write=False)
    d2.setflags(write=False)
    lat = Lattice(width, height, float(spacing_a), float(v_nn), boundary, cutoff, couplings, d2)
    logger.debug("built lattice", extra={"width": width, "height": height, "boundary": boundary,
                                         "cutoff": cutoff, "n_pairs": int(np.count_nonzero(keep) // 2)})
    return lat


def v_at_distance(v_nn: float, d: float) -> float:
    """V_nn (a/d)^6 with d in lattice units."""
    return float(v_nn / d**6)


def blockade_radius(v_nn: float, omega: float, spacing_a: float = 1.0) -> float:
    """R_b / a = (V_nn / Omega)^(1/6)."""
    if not (v_nn > 0 and omega > 0 and spacing_a > 0):
        raise InvalidArgument("v_nn, omega and spacing_a must all be > 0")
    return float((v_nn / omega) ** (1.0 / 6.0))


def _as_xy(site) -> tuple[int, int]:
    if isinstance(site, SiteIndex):
        return site.x, site.y
    x, y = site
    return int(x), int(y)


def manhattan_distance(site_a, site_b, lattice: Lattice | None = None) -> int:
    """|dx| + |dy| without wraparound. Sites are SiteIndex or (x, y) tuples."""
    (xa, ya), (xb, yb) = _as_xy(site_a), _as_xy(site_b)
    if min(xa, ya, xb, yb) < 0:
        raise InvalidArgument("negative site coordinate")
    if lattice is not None:
        lattice.site(xa, ya)
        lattice.site(xb, yb)
    return abs(xa - xb) + abs(ya - yb)


def parity_grid(height: int, width: int) -> np.ndarray:
    yy, xx = np.indices((height, width))
    return np.where((xx + yy) % 2 == 0, 1, -1).astype(np.int8)


def site_parity(lattice: Lattice) -> np.ndarray:
    """(-1)^(x+y) laid out [y, x]."""
    return parity_grid(lattice.height, lattice.width)


def pairs_within(lattice: Lattice, max_d2: int, min_d2: int = 1) -> np.ndarray:
    """(n_pairs, 2) array of i < j with min_d2 <= d^2 <= max_d2."""
    d2 = lattice.distance_sq
    i, j = np.nonzero(np.triu((d2 >= min_d2) & (d2 <= max_d2), k=1))
    return np.stack([i, j], axis=1)


def nearest_neighbor_pairs(lattice: Lattice) -> np.ndarray:
    return pairs_within(lattice, 1)


def coupled_pairs(lattice: Lattice) -> tuple[np.ndarray, np.ndarray]:
    """Pairs with nonzero V_ij and their couplings."""
    i, j = np.nonzero(np.triu(lattice.couplings, k=1))
    return np.stack([i, j], axis=1), lattice.couplings[i, j]
