"""
Exact state-vector engine for

    H(t) = (Omega/2) sum_i X_i - sum_i (Delta + delta_i) n_i + sum_{i<j} V_ij n_i n_j

on lattices of up to MAX_SITES sites. Bit i of a basis index is the occupation of linear site i.
The Hamiltonian is applied matrix-free: the diagonal from cached tables, X_i by reversing
axis 1 of psi.reshape(2**(N-1-i), 2, 2**i).
"""
import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import pandas as pd
from scipy.integrate import solve_ivp
from scipy.linalg import eigh
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

from analysis.errors import EigensolverFailure, IntegrationFailure, InvalidArgument
from analysis.snapshot_io import SnapshotSet
from simulation.lattice import Lattice, coupled_pairs, nearest_neighbor_pairs, site_parity
from waveforms.schedules import DriveSchedule, breakpoints

logger = logging.getLogger(__name__)

MAX_SITES = 20
DENSE_MAX_DIM = 256
OBSERVABLES = ("n", "m_s", "m_s2", "H_cl", "H", "zz")


@dataclass
class QuantumState:
    amplitudes: np.ndarray
    lattice: Lattice = field(repr=False)
    time: float = 0.0
    site_cap: int = field(default=MAX_SITES, repr=False)

    def __post_init__(self):
        n = self.lattice.n_sites
        if n > self.site_cap:
            raise InvalidArgument(f"{n} sites exceeds the exact-engine cap of {self.site_cap}")
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.complex128)
        if self.amplitudes.shape != (2**n,):
            raise InvalidArgument(f"state vector length {self.amplitudes.shape} != 2^{n}")

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    @property
    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


@dataclass
class SpectrumResult:
    energies: np.ndarray
    gap_1: float
    gap_2: float | None
    states: np.ndarray | None = field(default=None, repr=False)


@dataclass(frozen=True)
class _Tables:
    bits: np.ndarray       # (N, dim) uint8 occupations
    nsum: np.ndarray       # (dim,) Rydberg count
    int_diag: np.ndarray   # (dim,) sum_{i<j} V_ij n_i n_j
    stagger: np.ndarray    # (dim,) m_s per basis state


@lru_cache(maxsize=8)
def _basis_tables(lattice: Lattice) -> _Tables:
    n = lattice.n_sites
    idx = np.arange(2**n, dtype=np.int64)
    bits = ((idx[None, :] >> np.arange(n, dtype=np.int64)[:, None]) & 1).astype(np.uint8)
    nsum = bits.sum(axis=0, dtype=np.int64).astype(np.float64)

    int_diag = np.zeros(2**n, dtype=np.float64)
    pairs, v = coupled_pairs(lattice)
    for (i, j), vij in zip(pairs, v):
        int_diag += vij * (bits[i] & bits[j])

    p = site_parity(lattice).reshape(-1).astype(np.float64)
    stagger = (p @ (2.0 * bits - 1.0)) / n
    for arr in (bits, nsum, int_diag, stagger):
        arr.setflags(write=False)
    return _Tables(bits, nsum, int_diag, stagger)


def _check_local(lattice: Lattice, local_deltas) -> np.ndarray | None:
    if local_deltas is None:
        return None
    local = np.asarray(local_deltas, dtype=np.float64).reshape(-1)
    if local.size == 0:
        return None
    if local.size != lattice.n_sites:
        raise InvalidArgument(f"{local.size} local detunings for {lattice.n_sites} sites")
    return local


def _diagonal(lattice: Lattice, delta: float, local_deltas=None) -> np.ndarray:
    tab = _basis_tables(lattice)
    diag = tab.int_diag - delta * tab.nsum
    local = _check_local(lattice, local_deltas)
    if local is not None and np.any(local):
        diag = diag - local @ tab.bits
    return diag


def _apply(psi: np.ndarray, n: int, omega: float, diag: np.ndarray) -> np.ndarray:
    out = diag * psi
    if omega != 0.0:
        half = 0.5 * omega
        for i in range(n):
            out += half * psi.reshape(2 ** (n - 1 - i), 2, 2**i)[:, ::-1, :].reshape(-1)
    return out


def apply_hamiltonian(state: QuantumState, omega: float, delta: float,
                      local_deltas=None) -> QuantumState:
    """Unnormalized H|psi>."""
    if state.amplitudes.shape != (2**state.lattice.n_sites,):
        raise InvalidArgument("state does not match its lattice")
    diag = _diagonal(state.lattice, delta, local_deltas)
    out = _apply(state.amplitudes, state.lattice.n_sites, omega, diag)
    return QuantumState(out, state.lattice, state.time, state.site_cap)


def dense_hamiltonian(lattice: Lattice, omega: float, delta: float, local_deltas=None) -> np.ndarray:
    """Dense real matrix, for small N and as a test oracle."""
    n = lattice.n_sites
    dim = 2**n
    h = np.diag(_diagonal(lattice, delta, local_deltas))
    idx = np.arange(dim)
    for i in range(n):
        h[idx ^ (1 << i), idx] += 0.5 * omega
    return h


def basis_state(lattice: Lattice, occupations, site_cap: int = MAX_SITES) -> QuantumState:
    occ = np.asarray(occupations).reshape(-1)
    if occ.size != lattice.n_sites or not np.all(np.isin(occ, (0, 1))):
        raise InvalidArgument("occupations must be 0/1 per site")
    psi = np.zeros(2**lattice.n_sites, dtype=np.complex128)
    psi[int(np.sum(occ.astype(np.int64) << np.arange(occ.size)))] = 1.0
    return QuantumState(psi, lattice, 0.0, site_cap)


def ground_product_state(lattice: Lattice, site_cap: int = MAX_SITES) -> QuantumState:
    return basis_state(lattice, np.zeros(lattice.n_sites, dtype=np.int8), site_cap)


def checkerboard_state(lattice: Lattice, order: int = 1, site_cap: int = MAX_SITES) -> QuantumState:
    """AF1 (order=+1) or AF2 (order=-1) product state."""
    occ = (site_parity(lattice) * order == 1).astype(np.int8)
    return basis_state(lattice, occ, site_cap)


def evolve(state: QuantumState, schedule: DriveSchedule, t0: float, t1: float,
           tolerance: float = 1e-9) -> QuantumState:
    """
    Solve i d|psi>/dt = H(t)|psi> from t0 to t1 with DOP853.
    Integration restarts at every schedule breakpoint and the state is renormalized there.
    """
    if not t0 < t1:
        raise InvalidArgument(f"need t0 < t1, got {t0}, {t1}")
    if not tolerance > 0:
        raise InvalidArgument("tolerance must be > 0")
    if t0 < 0 or t1 > schedule.total_time + 1e-9:
        raise InvalidArgument(f"[{t0}, {t1}] outside schedule [0, {schedule.total_time}]")

    lat = state.lattice
    n = lat.n_sites
    dim = 2**n
    tab = _basis_tables(lat)
    alpha = _check_local(lat, schedule.local_pattern)
    alpha_occ = alpha @ tab.bits if alpha is not None and np.any(alpha) else None

    bp = breakpoints(schedule)
    edges = np.concatenate([[t0], bp[(bp > t0 + 1e-12) & (bp < t1 - 1e-12)], [t1]])
    psi = state.amplitudes.copy()
    atol = tolerance / np.sqrt(dim)

    for a, b in zip(edges[:-1], edges[1:]):
        seg = schedule.segment_at(0.5 * (a + b))

        def rhs(t, y, seg=seg):
            om, de, lo = seg.values(t)
            diag = tab.int_diag - de * tab.nsum
            if alpha_occ is not None and lo != 0.0:
                diag = diag - lo * alpha_occ
            return -1j * _apply(y, n, om, diag)

        sol = solve_ivp(rhs, (a, b), psi, method="DOP853", t_eval=[b],
                        rtol=tolerance, atol=atol)
        if sol.status != 0 or sol.y.shape[1] == 0:
            raise IntegrationFailure(sol.message, t_reached=float(sol.t[-1]) if sol.t.size else a,
                                     nfev=int(sol.nfev))
        psi = sol.y[:, -1]
        norm = np.linalg.norm(psi)
        if abs(norm - 1.0) > 1e-6:
            logger.warning("norm drift before renormalization", extra={"t": float(b), "drift": float(norm - 1.0)})
        psi = psi / norm
        logger.debug("segment integrated", extra={"t_start": float(a), "t_end": float(b), "nfev": int(sol.nfev)})

    return QuantumState(psi, lat, float(t1), state.site_cap)


def evolve_trajectory(state: QuantumState, schedule: DriveSchedule, times,
                      tolerance: float = 1e-9) -> list[QuantumState]:
    """States at each requested time (sorted, >= state.time)."""
    times = np.asarray(times, dtype=np.float64)
    if np.any(np.diff(times) < 0) or (times.size and times[0] < state.time - 1e-12):
        raise InvalidArgument("times must be sorted and not before the state's time")
    out = []
    cur = state
    for t in times:
        if t > cur.time + 1e-12:
            cur = evolve(cur, schedule, cur.time, float(t), tolerance)
        out.append(cur)
    return out


def _norm_estimate(lattice: Lattice, omega: float, diag: np.ndarray) -> float:
    return 0.5 * abs(omega) * lattice.n_sites + float(np.max(np.abs(diag)))


def ground_state_and_gaps(lattice: Lattice, omega: float, delta: float, n_states: int = 3,
                          local_deltas=None, return_states: bool = False,
                          site_cap: int = MAX_SITES, maxiter: int | None = None) -> SpectrumResult:
    """
    Lowest n_states eigenpairs. Krylov (eigsh on the matrix-free action) above DENSE_MAX_DIM,
    dense eigh below. Residuals are checked against 1e-8 of a norm estimate.
    """
    n = lattice.n_sites
    if n > site_cap:
        raise InvalidArgument(f"{n} sites exceeds the exact-engine cap of {site_cap}")
    dim = 2**n
    if n_states < 2:
        raise InvalidArgument("n_states must be >= 2")
    n_states = min(n_states, dim)

    diag = _diagonal(lattice, delta, local_deltas)
    h_norm = _norm_estimate(lattice, omega, diag)

    if dim <= DENSE_MAX_DIM or n_states >= dim - 1:
        vals, vecs = eigh(dense_hamiltonian(lattice, omega, delta, local_deltas))
        vals, vecs = vals[:n_states], vecs[:, :n_states]
    else:
        op = LinearOperator((dim, dim), matvec=lambda v: _apply(v.reshape(-1), n, omega, diag),
                            dtype=np.float64)
        maxiter = maxiter or 50 * dim
        ncv = min(dim, max(2 * n_states + 1, 24))
        try:
            vals, vecs = eigsh(op, k=n_states, which="SA", ncv=ncv, maxiter=maxiter)
        except ArpackNoConvergence as e:
            raise EigensolverFailure("eigsh did not converge", iterations=maxiter) from e
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]

        for k in range(n_states):
            v = vecs[:, k]
            resid = np.linalg.norm(_apply(v, n, omega, diag) - vals[k] * v)
            if resid > 1e-8 * h_norm:
                raise EigensolverFailure(f"residual {resid:.3e} exceeds 1e-8 * |H| for state {k}",
                                         iterations=maxiter)

    gap_1 = float(max(vals[1] - vals[0], 0.0))
    gap_2 = float(max(vals[2] - vals[0], 0.0)) if n_states >= 3 else None
    return SpectrumResult(np.asarray(vals), gap_1, gap_2, vecs if return_states else None)


def spectrum_scan(lattice: Lattice, omega: float, delta_over_omega, n_states: int = 3) -> pd.DataFrame:
    """Rows (delta_over_omega, E0, gap_1, gap_2) in units of Omega."""
    rows = []
    for r in np.asarray(delta_over_omega, dtype=np.float64):
        res = ground_state_and_gaps(lattice, omega, r * omega, n_states)
        rows.append({
            "delta_over_omega": r,
            "e0": res.energies[0] / omega,
            "gap_1": res.gap_1 / omega,
            "gap_2": np.nan if res.gap_2 is None else res.gap_2 / omega,
        })
    return pd.DataFrame(rows)


def measure(state: QuantumState, observable: str, *, site: int | None = None,
            sites: tuple[int, int] | None = None, omega: float | None = None,
            delta: float | None = None, local_deltas=None) -> float:
    """
    Expectation values:
      n      occupation of `site`
      m_s    staggered magnetization (1/N) sum_i p_i (2 n_i - 1)
      m_s2   <m_s^2>
      H_cl   diagonal energy -Delta sum (n_i - 1) + sum V n n  (needs delta)
      H      full <H> (needs omega, delta, optional local_deltas)
      zz     connected <Z_i Z_j> - <Z_i><Z_j> of staggered spins for `sites`
    """
    lat = state.lattice
    tab = _basis_tables(lat)
    prob = state.probabilities
    prob = prob / prob.sum()

    if observable == "n":
        if site is None or not 0 <= site < lat.n_sites:
            raise InvalidArgument("observable 'n' needs a valid site index")
        return float(prob @ tab.bits[site])
    if observable == "m_s":
        return float(prob @ tab.stagger)
    if observable == "m_s2":
        return float(prob @ tab.stagger**2)
    if observable == "H_cl":
        if delta is None:
            raise InvalidArgument("observable 'H_cl' needs delta")
        return float(prob @ (-delta * (tab.nsum - lat.n_sites) + tab.int_diag))
    if observable == "H":
        if omega is None or delta is None:
            raise InvalidArgument("observable 'H' needs omega and delta")
        hpsi = _apply(state.amplitudes, lat.n_sites, omega, _diagonal(lat, delta, local_deltas))
        return float(np.real(np.vdot(state.amplitudes, hpsi)) / np.vdot(state.amplitudes, state.amplitudes).real)
    if observable == "zz":
        if sites is None:
            raise InvalidArgument("observable 'zz' needs a pair of sites")
        i, j = sites
        p = site_parity(lat).reshape(-1)
        zi = p[i] * (2.0 * tab.bits[i] - 1.0)
        zj = p[j] * (2.0 * tab.bits[j] - 1.0)
        return float(prob @ (zi * zj) - (prob @ zi) * (prob @ zj))
    raise InvalidArgument(f"unknown observable {observable!r}, expected one of {OBSERVABLES}")


def nn_double_occupancy(state: QuantumState) -> float:
    """<n_i n_j> averaged over nearest-neighbour pairs."""
    tab = _basis_tables(state.lattice)
    pairs = nearest_neighbor_pairs(state.lattice)
    if len(pairs) == 0:
        return 0.0
    prob = state.probabilities
    both = np.zeros_like(prob)
    for i, j in pairs:
        both += tab.bits[i] & tab.bits[j]
    return float(prob @ both / len(pairs))


def sample_snapshots(state: QuantumState, n_shots: int, seed=None, meta: dict | None = None) -> SnapshotSet:
    """Projective readout: i.i.d. basis-state draws from |psi|^2."""
    if n_shots < 1:
        raise InvalidArgument("n_shots must be >= 1")
    lat = state.lattice
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(state.probabilities)
    u = rng.random(n_shots) * cdf[-1]
    idx = np.minimum(np.searchsorted(cdf, u, side="right"), cdf.size - 1)
    bits = ((idx[:, None] >> np.arange(lat.n_sites)) & 1).astype(np.uint8)
    shots = bits.reshape(n_shots, lat.height, lat.width)
    return SnapshotSet(lat.width, lat.height, shots, dict(meta or {}))
