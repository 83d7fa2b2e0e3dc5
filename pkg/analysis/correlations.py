"""
Connected staggered correlations, structure factors and correlation-length fits.

Displacement maps are laid out [dy, dx] with the zero displacement at the centre
(index (height-1, width-1)); k-space arrays use numpy's unshifted FFT order.
"""
import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import pandas as pd

from analysis.errors import InvalidArgument
from analysis.fits import FitResult, run_least_squares
from analysis.snapshot_io import SnapshotSet
from analysis.snapshots import staggered_map
from simulation.lattice import parity_grid

logger = logging.getLogger(__name__)

SF_EXPONENT = 1.5        # S0 / (1 + xi^2 k^2)^(3/2)
OZ_EXPONENT = 1.0        # Ornstein-Zernike form, for comparison
LOG_XI_BOUNDS = (np.log(1e-4), np.log(1e4))


@dataclass
class CorrelationMap:
    G: np.ndarray                       # (2H-1, 2W-1)
    counts: np.ndarray                  # site pairs per displacement
    width: int
    height: int
    n_shots: int

    @property
    def dx(self) -> np.ndarray:
        return np.arange(-(self.width - 1), self.width)

    @property
    def dy(self) -> np.ndarray:
        return np.arange(-(self.height - 1), self.height)

    def at(self, dx: int, dy: int) -> float:
        if abs(dx) >= self.width or abs(dy) >= self.height:
            raise InvalidArgument(f"displacement ({dx}, {dy}) outside the {self.width}x{self.height} window")
        return float(self.G[dy + self.height - 1, dx + self.width - 1])

    @property
    def variance(self) -> float:
        return self.at(0, 0)


@dataclass
class StructureFactor:
    k: np.ndarray                       # radial bin centres (mean |k| of the modes in the bin)
    s: np.ndarray
    n_modes: np.ndarray
    s2d: np.ndarray | None = field(default=None, repr=False)
    kx: np.ndarray | None = field(default=None, repr=False)
    ky: np.ndarray | None = field(default=None, repr=False)
    size: int | None = None             # max(width, height) of the source window

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"k": self.k, "s": self.s, "n_modes": self.n_modes})


def _autocorr(stack: np.ndarray, s: tuple[int, int], chunk: int) -> np.ndarray:
    """Shot-averaged linear autocorrelation of each [y, x] frame, unshifted."""
    acc = None
    for start in range(0, stack.shape[0], chunk):
        F = np.fft.rfft2(stack[start:start + chunk], s=s)
        part = np.sum(F.real**2 + F.imag**2, axis=0)
        acc = part if acc is None else acc + part
    return np.fft.irfft2(acc / stack.shape[0], s=s)


def connected_correlation(snapshot_set: SnapshotSet, chunk: int = 1024) -> CorrelationMap:
    """
    G(r) = mean over site pairs (i, i+r) of <Z_i Z_i+r> - <Z_i><Z_i+r>, Z the staggered spin,
    each pair weighted equally. Autocorrelations are computed on a zero-padded FFT grid.
    """
    if snapshot_set.n_shots < 2:
        raise InvalidArgument(f"connected correlation needs >= 2 shots, got {snapshot_set.n_shots}")
    H, W = snapshot_set.height, snapshot_set.width
    s = (2 * H - 1, 2 * W - 1)

    z = staggered_map(snapshot_set.shots).astype(np.float64)
    mu = z.mean(axis=0)
    a = _autocorr(z, s, chunk)
    b = _autocorr(mu[None], s, 1)
    counts = np.rint(_autocorr(np.ones((1, H, W)), s, 1)).astype(np.int64)

    G = np.fft.fftshift((a - b) / np.maximum(counts, 1))
    counts = np.fft.fftshift(counts)
    G = 0.5 * (G + G[::-1, ::-1])
    return CorrelationMap(G, counts, W, H, snapshot_set.n_shots)


def _radial_bins(s2d: np.ndarray, kx: np.ndarray, ky: np.ndarray, size: int):
    kk = np.hypot(*np.meshgrid(kx, ky, indexing="xy"))
    dk = 2 * np.pi / size
    k_top = np.pi * np.sqrt(2.0)
    edges = dk * np.arange(int(np.ceil(k_top / dk - 1e-12)) + 1)
    edges[-1] = max(edges[-1], k_top)

    sel = (kk > 0) & (kk <= k_top + 1e-12)
    kv, sv = kk[sel], s2d[sel]
    idx = np.clip(np.searchsorted(edges, kv, side="left") - 1, 0, edges.size - 2)
    n = np.bincount(idx, minlength=edges.size - 1)
    ksum = np.bincount(idx, weights=kv, minlength=edges.size - 1)
    ssum = np.bincount(idx, weights=sv, minlength=edges.size - 1)
    keep = n > 0
    return ksum[keep] / n[keep], ssum[keep] / n[keep], n[keep]


def structure_factor(corr_map: CorrelationMap) -> StructureFactor:
    """
    S(k) = sum_r G(r) exp(-i k.r) over the displacement window, and its radial average
    over bins of width 2 pi / max(width, height), every mode in a bin weighted equally.
    """
    G = np.asarray(corr_map.G, dtype=np.float64)
    s2d = np.fft.fft2(np.fft.ifftshift(G)).real
    ny, nx = G.shape
    kx = 2 * np.pi * np.fft.fftfreq(nx)
    ky = 2 * np.pi * np.fft.fftfreq(ny)
    size = max(corr_map.width, corr_map.height)
    k, s, n = _radial_bins(s2d, kx, ky, size)
    return StructureFactor(k, s, n, s2d, kx, ky, size)


def sum_rule_residual(sf: StructureFactor, corr_map: CorrelationMap) -> float:
    """mean_k S2d(k) - G(0)."""
    return float(np.mean(sf.s2d) - corr_map.variance)


def sf_model(k, s0, xi, exponent: float = SF_EXPONENT):
    k = np.asarray(k, dtype=np.float64)
    return s0 / (1.0 + (xi * k) ** 2) ** exponent


def _initial_xi(k: np.ndarray, y: np.ndarray, s0: float, exponent: float) -> float:
    target = s0 / 2.0**exponent
    below = np.flatnonzero(y <= target)
    if below.size == 0 or below[0] == 0:
        return 1.0
    j = below[0]
    k_half = np.interp(target, [y[j], y[j - 1]], [k[j], k[j - 1]])
    return 1.0 / k_half if k_half > 0 else 1.0


def fit_correlation_length(sf: StructureFactor, exponent: float = SF_EXPONENT) -> FitResult:
    """
    Fit S(k) = S0 / (1 + xi^2 k^2)^exponent in (S0, log xi); b = pi S0 / xi^2.
    Data are normalized by max|S| before fitting, so the result scales exactly with S.
    """
    names = ("xi", "S0", "b")
    k = np.asarray(sf.k, dtype=np.float64)
    s = np.asarray(sf.s, dtype=np.float64)
    ok = np.isfinite(k) & np.isfinite(s)
    k, s = k[ok], s[ok]
    if k.size < 4:
        raise InvalidArgument(f"correlation-length fit needs >= 4 radial points, got {k.size}")
    size = float(sf.size) if sf.size else float(np.pi / k.min())

    scale = float(np.max(np.abs(s)))
    if scale <= 1e-10:
        logger.warning("structure factor vanishes; correlation length at resolution ceiling")
        return FitResult({"xi": size, "S0": 0.0, "b": 0.0}, np.full((3, 3), np.nan), 0.0, False,
                         k.size, ("resolution_ceiling",), "structure factor is identically zero")
    y = s / scale

    s0_init = max(float(y[0]), float(y.max()), 1e-6)
    xi_init = float(np.clip(_initial_xi(k, y, s0_init, exponent), 1e-3, 1e3))

    def resid(p):
        return sf_model(k, p[0], np.exp(p[1]), exponent) - y

    res = run_least_squares(resid, [s0_init, np.log(xi_init)],
                            bounds=([0.0, LOG_XI_BOUNDS[0]], [np.inf, LOG_XI_BOUNDS[1]]))
    s0n, log_xi = res.x
    xi = float(np.exp(log_xi))
    s0 = float(s0n * scale)
    b = float(np.pi * s0 / xi**2)

    dof = k.size - 2
    s2 = 2.0 * res.cost / dof if dof > 0 else 0.0
    cov_n = np.linalg.pinv(res.jac.T @ res.jac) * s2
    J = np.array([[0.0, xi],
                  [scale, 0.0],
                  [np.pi * scale / xi**2, -2.0 * b]])
    cov = J @ cov_n @ J.T
    cov = 0.5 * (cov + cov.T)

    flags = []
    at_bound = bool(np.any(np.isclose(log_xi, LOG_XI_BOUNDS, atol=1e-9)))
    if xi < 1.0 / k.max():
        flags.append("below_resolution")
    if xi > size:
        flags.append("resolution_ceiling")
    converged = bool(res.status > 0) and not at_bound
    if not converged:
        flags.append("not_converged")
    if flags:
        logger.debug("correlation-length fit flagged", extra={"xi": xi, "flags": flags})

    return FitResult(dict(zip(names, (xi, s0, b))), cov, float(np.sqrt(2 * res.cost) * scale),
                     converged, int(k.size), tuple(flags), res.message)


class CollapseResult(NamedTuple):
    table: pd.DataFrame
    spread: float


def scaling_collapse(slices, rescale_b: bool = True) -> CollapseResult:
    """
    slices: iterable of (t, StructureFactor, xi, b). Emits (k xi, S / (b xi^2)) per slice
    (S / xi^2 with rescale_b=False). spread is the mean over a common k xi grid of the
    variance across slices, the grid being the first slice's points inside the overlap.
    """
    slices = list(slices)
    if len(slices) < 3:
        raise InvalidArgument(f"scaling collapse needs >= 3 time slices, got {len(slices)}")

    frames, curves = [], []
    for t, sf, xi, b in slices:
        if not (np.isfinite(xi) and xi > 0) or (rescale_b and not (np.isfinite(b) and b > 0)):
            raise InvalidArgument(f"slice t={t} has no valid fit (xi={xi}, b={b})")
        k = np.asarray(sf.k, dtype=np.float64)
        s = np.asarray(sf.s, dtype=np.float64)
        x = k * xi
        y = s / (b * xi**2) if rescale_b else s / xi**2
        frames.append(pd.DataFrame({"t": t, "k": k, "k_xi": x, "s": s, "s_scaled": y}))
        curves.append((x, y))

    lo = max(float(x.min()) for x, _ in curves)
    hi = min(float(x.max()) for x, _ in curves)
    table = pd.concat(frames, ignore_index=True)
    if not lo < hi:
        logger.warning("scaling collapse: slices share no k*xi range")
        return CollapseResult(table, float("nan"))

    x0 = curves[0][0]
    grid = x0[(x0 >= lo) & (x0 <= hi)]
    if grid.size < 2:
        grid = np.linspace(lo, hi, 16)
    ys = np.array([np.interp(grid, x, y) for x, y in curves])
    return CollapseResult(table, float(np.mean(np.var(ys, axis=0))))


def synthetic_exponential_snapshots(width: int, height: int, xi: float, n_shots: int,
                                    seed=None, meta: dict | None = None) -> SnapshotSet:
    """
    Shots whose staggered spins have <Z_i Z_j> = exp(-|r_ij| / xi) and <Z_i> = 0.

    Each shot throws an isotropic Poisson line process with density 1/(4 xi) over a disk
    covering the array; Z is the product of the line-side signs times a random global sign.
    """
    if xi <= 0:
        raise InvalidArgument(f"xi must be > 0, got {xi}")
    if n_shots < 1:
        raise InvalidArgument("n_shots must be >= 1")
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:height, 0:width].astype(np.float64)
    x -= 0.5 * (width - 1)
    y -= 0.5 * (height - 1)
    radius = float(np.hypot(x, y).max()) + 1.0
    mean_lines = 2 * np.pi * radius / (4.0 * xi)
    parity = parity_grid(height, width)

    shots = np.empty((n_shots, height, width), dtype=np.uint8)
    for i in range(n_shots):
        m = rng.poisson(mean_lines)
        p = rng.uniform(-radius, radius, m)
        th = rng.uniform(0.0, np.pi, m)
        side = x[None] * np.cos(th)[:, None, None] + y[None] * np.sin(th)[:, None, None] - p[:, None, None]
        z = np.prod(np.where(side >= 0, 1, -1), axis=0) * (1 if rng.random() < 0.5 else -1)
        shots[i] = (1 + parity * z) // 2
    info = {"synthetic_xi": float(xi)}
    info.update(meta or {})
    return SnapshotSet(width, height, shots, info)
