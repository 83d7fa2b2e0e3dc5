"""
Product-state (mean-field) engine for experiment-size lattices.

Each site carries a Bloch vector s = (s_x, s_y, s_z) with n = (1 + s_z)/2 (s_z = +1 is |r>).
Energy of the product ansatz:

    E_MF = sum_i [(Omega/2) s_x,i - (Delta + delta_i)(1 + s_z,i)/2] + sum_{i<j} V_ij n_i n_j

Dynamics ds_i/dt = B_i x s_i with B_i = 2 dE_MF/ds_i = (Omega, 0, -(Delta+delta_i) + sum_j V_ij n_j),
which is exact for a single site. Large-lattice results are qualitative.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import minimize

from analysis.errors import IntegrationFailure, InvalidArgument, OptimizerFailure
from analysis.snapshot_io import SnapshotSet
from simulation.lattice import Lattice, SiteIndex, site_parity
from waveforms.schedules import DriveSchedule, breakpoints

logger = logging.getLogger(__name__)

GRAD_TOL_PER_SITE = 1e-8


@dataclass
class ProductState:
    bloch: np.ndarray                      # (N, 3), linear site order
    lattice: Lattice = field(repr=False)
    time: float = 0.0

    def __post_init__(self):
        self.bloch = np.asarray(self.bloch, dtype=np.float64)
        if self.bloch.shape != (self.lattice.n_sites, 3):
            raise InvalidArgument(f"bloch array shape {self.bloch.shape} != ({self.lattice.n_sites}, 3)")
        norms = np.linalg.norm(self.bloch, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise InvalidArgument("Bloch vectors must have unit norm")

    @property
    def occupations(self) -> np.ndarray:
        return 0.5 * (1.0 + self.bloch[:, 2])

    @classmethod
    def from_angles(cls, lattice: Lattice, theta: np.ndarray, time: float = 0.0) -> "ProductState":
        """s = (sin theta, 0, cos theta); theta = pi is |g>."""
        theta = np.asarray(theta, dtype=np.float64)
        return cls(np.stack([np.sin(theta), np.zeros_like(theta), np.cos(theta)], axis=1), lattice, time)

    @classmethod
    def from_occupations(cls, lattice: Lattice, occupations, time: float = 0.0) -> "ProductState":
        n = np.asarray(occupations, dtype=np.float64).reshape(-1)
        bloch = np.zeros((n.size, 3))
        bloch[:, 2] = 2.0 * n - 1.0
        return cls(bloch, lattice, time)


def _local(lattice: Lattice, local_deltas) -> np.ndarray:
    if local_deltas is None:
        return np.zeros(lattice.n_sites)
    local = np.asarray(local_deltas, dtype=np.float64).reshape(-1)
    if local.size == 0:
        return np.zeros(lattice.n_sites)
    if local.size != lattice.n_sites:
        raise InvalidArgument(f"{local.size} local detunings for {lattice.n_sites} sites")
    return local


def meanfield_energy(state: ProductState, omega: float, delta: float, local_deltas=None) -> float:
    s = state.bloch
    n = 0.5 * (1.0 + s[:, 2])
    local = _local(state.lattice, local_deltas)
    single = 0.5 * omega * s[:, 0] - (delta + local) * n
    return float(single.sum() + 0.5 * n @ state.lattice.couplings @ n)


def meanfield_observables(state: ProductState, delta: float) -> dict:
    """m_s and <H_cl> of the product state."""
    lat = state.lattice
    n = state.occupations
    p = site_parity(lat).reshape(-1)
    return {
        "m_s": float(np.mean(p * (2.0 * n - 1.0))),
        "H_cl": float(-delta * np.sum(n - 1.0) + 0.5 * n @ lat.couplings @ n),
    }


def staggered_expectation(state: ProductState) -> np.ndarray:
    """p_i <2 n_i - 1> laid out [y, x]."""
    lat = state.lattice
    return site_parity(lat) * state.bloch[:, 2].reshape(lat.shape)


# ------------------------------------------------------------------ minimization

def _energy_and_site_grad(theta, lattice, omega, delta, local):
    c, s = np.cos(theta), np.sin(theta)
    n = 0.5 * (1.0 + c)
    vn = lattice.couplings @ n
    e = np.sum(0.5 * omega * s - (delta + local) * n) + 0.5 * n @ vn
    # dE/dtheta_i = (Omega/2) cos - h_i sin, h_i = dE/ds_z,i
    h = -0.5 * (delta + local) + 0.5 * vn
    return float(e), 0.5 * omega * c - h * s


def _pinned_mask(lattice: Lattice, pinned_sites) -> np.ndarray:
    mask = np.zeros(lattice.n_sites, dtype=bool)
    if pinned_sites is None:
        return mask
    if isinstance(pinned_sites, np.ndarray) and pinned_sites.dtype == bool:
        return pinned_sites.reshape(-1).copy()
    for site in pinned_sites:
        i = site.linear if isinstance(site, SiteIndex) else int(site)
        mask[i] = True
    return mask


def meanfield_minimize(lattice: Lattice, omega: float, delta: float, pinned_sites=None,
                       local_deltas=None, per_site: bool = False) -> ProductState:
    """
    Minimize E_MF with pinned sites held at |g>. Unpinned sites share one Bloch angle per
    sublattice (checkerboard ansatz); per_site=True relaxes every unpinned site afterwards.
    """
    local = _local(lattice, local_deltas)
    pinned = _pinned_mask(lattice, pinned_sites)
    free = ~pinned
    even = (site_parity(lattice).reshape(-1) == 1)
    groups = [free & even, free & ~even]

    def expand(params):
        theta = np.full(lattice.n_sites, np.pi)
        theta[groups[0]] = params[0]
        theta[groups[1]] = params[1]
        return theta

    def fun(params):
        e, g = _energy_and_site_grad(expand(params), lattice, omega, delta, local)
        return e, np.array([g[groups[0]].sum(), g[groups[1]].sum()])

    best = None
    starts = np.linspace(0.0, 2 * np.pi, 4, endpoint=False) + 0.3
    for a in starts:
        for b in starts:
            res = minimize(fun, np.array([a, b]), jac=True, method="BFGS", options={"gtol": 1e-10})
            if best is None or res.fun < best.fun:
                best = res
    x = _newton_polish(fun, best.x)
    e_min, grad = fun(x)
    theta = expand(x)
    n_free = max(int(free.sum()), 1)

    if per_site and np.any(free):
        def fun_site(params):
            th = np.full(lattice.n_sites, np.pi)
            th[free] = params
            e, g = _energy_and_site_grad(th, lattice, omega, delta, local)
            return e, g[free]

        res = minimize(fun_site, theta[free], jac=True, method="BFGS", options={"gtol": 1e-10})
        theta[free] = res.x
        e_min, grad = fun_site(res.x)

    gnorm = float(np.linalg.norm(grad))
    if not np.isfinite(gnorm) or gnorm / n_free > GRAD_TOL_PER_SITE:
        raise OptimizerFailure(f"mean-field minimization stopped with |grad|/site = {gnorm / n_free:.3e}")

    state = ProductState.from_angles(lattice, theta)
    state.bloch[pinned] = (0.0, 0.0, -1.0)
    logger.debug("mean-field minimum", extra={"energy": float(e_min), "grad_per_site": gnorm / n_free,
                                              "n_pinned": int(pinned.sum())})
    return state


def _newton_polish(fun, x, n_iter: int = 6, eps: float = 1e-6):
    """A few Newton steps with a finite-difference Hessian of the analytic gradient."""
    x = np.array(x, dtype=np.float64)
    for _ in range(n_iter):
        e, g = fun(x)
        if np.linalg.norm(g) < 1e-13:
            break
        hess = np.empty((x.size, x.size))
        for k in range(x.size):
            dx = np.zeros_like(x)
            dx[k] = eps
            hess[:, k] = (fun(x + dx)[1] - fun(x - dx)[1]) / (2 * eps)
        hess = 0.5 * (hess + hess.T)
        step = np.linalg.lstsq(hess, g, rcond=None)[0]
        if not np.all(np.isfinite(step)):
            break
        e_new, g_new = fun(x - step)
        if e_new > e + 1e-12 * max(abs(e), 1.0) or np.linalg.norm(g_new) >= np.linalg.norm(g):
            break
        x = x - step
    return x


# ------------------------------------------------------------------ dynamics

def meanfield_evolve(state: ProductState, schedule: DriveSchedule, t0: float, t1: float,
                     tolerance: float = 1e-9) -> ProductState:
    """Integrate ds_i/dt = B_i x s_i with DOP853, restarting at schedule breakpoints."""
    if not t0 < t1:
        raise InvalidArgument(f"need t0 < t1, got {t0}, {t1}")
    if t0 < 0 or t1 > schedule.total_time + 1e-9:
        raise InvalidArgument(f"[{t0}, {t1}] outside schedule [0, {schedule.total_time}]")

    lat = state.lattice
    n = lat.n_sites
    v = lat.couplings
    alpha = _local(lat, schedule.local_pattern)

    bp = breakpoints(schedule)
    edges = np.concatenate([[t0], bp[(bp > t0 + 1e-12) & (bp < t1 - 1e-12)], [t1]])
    y = state.bloch.reshape(-1).copy()

    for a, b in zip(edges[:-1], edges[1:]):
        seg = schedule.segment_at(0.5 * (a + b))

        def rhs(t, y, seg=seg):
            om, de, lo = seg.values(t)
            s = y.reshape(n, 3)
            bz = -(de + lo * alpha) + v @ (0.5 * (1.0 + s[:, 2]))
            field_ = np.zeros_like(s)
            field_[:, 0] = om
            field_[:, 2] = bz
            return np.cross(field_, s).reshape(-1)

        sol = solve_ivp(rhs, (a, b), y, method="DOP853", t_eval=[b], rtol=tolerance, atol=tolerance)
        if sol.status != 0 or sol.y.shape[1] == 0:
            raise IntegrationFailure(sol.message, t_reached=float(sol.t[-1]) if sol.t.size else a,
                                     nfev=int(sol.nfev))
        s = sol.y[:, -1].reshape(n, 3)
        s /= np.linalg.norm(s, axis=1, keepdims=True)
        y = s.reshape(-1)

    return ProductState(y.reshape(n, 3), lat, float(t1))


def meanfield_trajectory(state: ProductState, schedule: DriveSchedule, times,
                         tolerance: float = 1e-9) -> list[ProductState]:
    times = np.asarray(times, dtype=np.float64)
    if np.any(np.diff(times) < 0) or (times.size and times[0] < state.time - 1e-12):
        raise InvalidArgument("times must be sorted and not before the state's time")
    out = []
    cur = state
    for t in times:
        if t > cur.time + 1e-12:
            cur = meanfield_evolve(cur, schedule, cur.time, float(t), tolerance)
        out.append(cur)
    return out


def meanfield_sample(state: ProductState, n_shots: int, seed=None, meta: dict | None = None) -> SnapshotSet:
    """Independent Bernoulli draw per site with p_i = (1 + s_z,i)/2. Ignores quantum correlations."""
    if n_shots < 1:
        raise InvalidArgument("n_shots must be >= 1")
    lat = state.lattice
    rng = np.random.default_rng(seed)
    p = np.clip(state.occupations, 0.0, 1.0)
    shots = (rng.random((n_shots, lat.n_sites)) < p).astype(np.uint8)
    return SnapshotSet(lat.width, lat.height, shots.reshape(n_shots, lat.height, lat.width), dict(meta or {}))
