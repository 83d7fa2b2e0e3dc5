"""
Effective-theory layer: Landau order-parameter dynamics, Gaussian fluctuations around the
condensate, Kibble-Zurek scales and coarsening growth/scaling laws.

Units are those of the theory (mass parameter q, quartic coupling lam); the detuning map
q = q_scale (Delta_c - Delta) / Omega is a free calibration.
"""
import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.integrate import quad, solve_ivp

from analysis.correlations import StructureFactor, fit_correlation_length
from analysis.errors import IntegrationFailure, InvalidArgument
from analysis.fits import FitResult, fit_damped_oscillator

logger = logging.getLogger(__name__)

# omega(-|q|) / omega(|q|): ordered over disordered Landau frequency at equal distance from q = 0
WILSON_FISHER_RATIO = 1.9
LANDAU_RATIO = float(np.sqrt(2.0))

# nu and z of the (2+1)D Ising transition; z_d curvature-driven coarsening; z_bar critical coarsening
NU = 0.629
Z = 1.0
Z_D = 2.0
Z_BAR = 2.16

# preset k-window in units of sqrt|q|
PRESET_K_SCALE = 0.3


@dataclass(frozen=True)
class TheoryParams:
    q: float = 1.0
    lam: float = 1.0
    nu: float = NU
    z: float = Z
    z_d: float = Z_D
    z_bar: float = Z_BAR
    tau: float = 1.0
    t0: float = 1.0
    l0: float = 1.0
    C: float = 2.0
    C_s: float = 1.0
    delta_c: float = 1.1          # Delta_c / Omega
    q_scale: float = 1.0

    def __post_init__(self):
        if not self.lam > 0:
            raise InvalidArgument(f"lam must be > 0, got {self.lam}")
        for name in ("nu", "z", "z_d", "z_bar"):
            if not getattr(self, name) > 0:
                raise InvalidArgument(f"{name} must be > 0, got {getattr(self, name)}")
        if not self.C > self.C_s:
            raise InvalidArgument(f"need C > C_s, got C={self.C}, C_s={self.C_s}")

    def q_from_detuning(self, delta_over_omega: float) -> float:
        return self.q_scale * (self.delta_c - delta_over_omega)


# ------------------------------------------------------------------ Landau dynamics

class LandauTrajectory(NamedTuple):
    t: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray
    energy_drift: float           # max |E(t) - E(0)| / |E(0)|


def landau_energy(phi, dphi, q: float, lam: float):
    return 0.5 * dphi**2 + 0.5 * q * phi**2 + 0.25 * lam * phi**4


def landau_evolve(q: float, lam: float, phi_init: float, dphi_init: float, t_end: float,
                  tol: float = 1e-10, n_samples: int = 2001) -> LandauTrajectory:
    """phi'' = -(q + lam phi^2) phi from t = 0 to t_end, sampled on a uniform grid."""
    if not tol > 0:
        raise InvalidArgument(f"tol must be > 0, got {tol}")
    if not t_end > 0:
        raise InvalidArgument(f"t_end must be > 0, got {t_end}")
    if lam < 0:
        raise InvalidArgument(f"lam must be >= 0, got {lam}")

    def rhs(t, y):
        return [y[1], -(q + lam * y[0] ** 2) * y[0]]

    t_eval = np.linspace(0.0, t_end, n_samples)
    rtol = max(tol * 1e-2, 1e-13)
    sol = solve_ivp(rhs, (0.0, t_end), [phi_init, dphi_init], method="DOP853", t_eval=t_eval,
                    rtol=rtol, atol=rtol * max(abs(phi_init), abs(dphi_init), 1e-12))
    if sol.status != 0:
        raise IntegrationFailure(sol.message, t_reached=float(sol.t[-1]) if sol.t.size else 0.0,
                                 nfev=int(sol.nfev))

    phi, dphi = sol.y
    e = landau_energy(phi, dphi, q, lam)
    e0 = e[0]
    drift = float(np.max(np.abs(e - e0)) / (abs(e0) if e0 != 0 else 1.0))
    if drift > tol:
        logger.warning("Landau energy drift above tolerance", extra={"drift": drift, "tol": tol})
    return LandauTrajectory(sol.t, phi, dphi, drift)


def landau_period(q: float, lam: float, amplitude: float) -> float:
    """Period of the orbit released at rest from phi = amplitude about phi = 0 (quadrature)."""
    a2 = amplitude**2

    def integrand(u):
        return 1.0 / np.sqrt(q + 0.5 * lam * a2 * (1.0 + np.sin(u) ** 2))

    if q + 0.5 * lam * a2 <= 0:
        raise InvalidArgument("orbit does not enclose phi = 0 for these parameters")
    val, _ = quad(integrand, 0.0, 0.5 * np.pi, epsabs=1e-14, epsrel=1e-13)
    return 4.0 * val


def oscillation_frequency(t, y) -> float:
    """
    Angular frequency from the spacing of upward crossings of the mid level, located by
    linear interpolation. nan with fewer than two crossings.
    """
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    level = 0.5 * (y.max() + y.min())
    d = y - level
    up = np.flatnonzero((d[:-1] < 0) & (d[1:] >= 0))
    if up.size < 2:
        return float("nan")
    tc = t[up] - d[up] * (t[up + 1] - t[up]) / (d[up + 1] - d[up])
    return float(2 * np.pi * (tc.size - 1) / (tc[-1] - tc[0]))


class LandauFrequencies(NamedTuple):
    omega: float
    phi0: float                   # |phi0|; the ordered minima are +/- phi0
    phase: str                    # disordered, ordered or critical
    critical: bool


def landau_frequencies(q: float, lam: float = 1.0) -> LandauFrequencies:
    """Small-oscillation frequency about the stable minimum: sqrt(q) or sqrt(2|q|)."""
    if not lam > 0:
        raise InvalidArgument(f"lam must be > 0, got {lam}")
    if q > 0:
        return LandauFrequencies(float(np.sqrt(q)), 0.0, "disordered", False)
    if q < 0:
        return LandauFrequencies(float(np.sqrt(2 * abs(q))), float(np.sqrt(-q / lam)), "ordered", False)
    logger.warning("q = 0 is the critical point; no harmonic frequency")
    return LandauFrequencies(0.0, 0.0, "critical", True)


# ------------------------------------------------------------------ Gaussian fluctuations

@dataclass
class GaussianState:
    k: np.ndarray
    dff: np.ndarray
    dfp: np.ndarray
    dpp: np.ndarray
    phi: float = 0.0
    dphi: float = 0.0
    time: float = 0.0

    def __post_init__(self):
        self.k = np.atleast_1d(np.asarray(self.k, dtype=np.float64))
        shape = self.k.shape
        for name in ("dff", "dfp", "dpp"):
            arr = np.broadcast_to(np.asarray(getattr(self, name), dtype=np.float64), shape).copy()
            setattr(self, name, arr)
        if np.any(self.dff < 0) or np.any(self.dpp < 0):
            raise InvalidArgument("D_phiphi and D_pipi must be >= 0")
        if np.any(self.invariant < -1e-12 * np.maximum(self.dff * self.dpp, 1.0)):
            raise InvalidArgument("Gaussian state violates D_phiphi D_pipi >= D_phipi^2")

    @property
    def invariant(self) -> np.ndarray:
        return self.dff * self.dpp - self.dfp**2


def gaussian_initial_state(k_grid, mass_sq: float, phi: float = 0.0, dphi: float = 0.0) -> GaussianState:
    """Vacuum of free modes with omega_k^2 = k^2 + mass_sq: D_phiphi = 1/(2 omega), D_pipi = omega/2."""
    k = np.asarray(k_grid, dtype=np.float64)
    w2 = k**2 + mass_sq
    if np.any(w2 <= 0):
        raise InvalidArgument("k^2 + mass_sq must be > 0 on the whole grid")
    w = np.sqrt(w2)
    return GaussianState(k, 0.5 / w, np.zeros_like(k), 0.5 * w, phi, dphi)


def default_k_grid(n_modes: int = 32, k_max: float = np.pi) -> np.ndarray:
    """Uniform grid over (0, k_max]."""
    if n_modes < 1 or not k_max > 0:
        raise InvalidArgument(f"need n_modes >= 1 and k_max > 0, got {n_modes}, {k_max}")
    return k_max * np.arange(1, n_modes + 1) / n_modes


def long_wavelength_k_max(q: float, scale: float = PRESET_K_SCALE) -> float:
    """Window scale sqrt|q| (the inverse mass length); scale itself at q = 0."""
    return scale * np.sqrt(abs(q)) if q != 0 else scale


@dataclass
class GaussianTrajectory:
    t: np.ndarray
    k: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray
    dff: np.ndarray               # (n_t, n_k)
    dfp: np.ndarray
    dpp: np.ndarray
    q: float
    lam: float
    invariant_drift: float = field(default=0.0)

    def state(self, i: int) -> GaussianState:
        return GaussianState(self.k, self.dff[i], self.dfp[i], self.dpp[i],
                             float(self.phi[i]), float(self.dphi[i]), float(self.t[i]))


def gaussian_evolve(state: GaussianState, q: float, lam: float, t_end: float, tol: float = 1e-9,
                    n_samples: int = 801) -> GaussianTrajectory:
    """
    Co-evolve the condensate (phi'' = -(q + lam phi^2) phi) and the equal-time two-point
    functions of every mode with mass m_k^2 = k^2 + q + 3 lam phi^2:
        D_ff' = 2 D_fp,  D_fp' = D_pp - m_k^2 D_ff,  D_pp' = -2 m_k^2 D_fp.
    """
    if not tol > 0:
        raise InvalidArgument(f"tol must be > 0, got {tol}")
    if not t_end > 0:
        raise InvalidArgument(f"t_end must be > 0, got {t_end}")
    if lam < 0:
        raise InvalidArgument(f"lam must be >= 0, got {lam}")
    k2 = state.k**2
    nk = k2.size

    def rhs(t, y):
        phi, pi = y[0], y[1]
        dff, dfp, dpp = y[2:2 + nk], y[2 + nk:2 + 2 * nk], y[2 + 2 * nk:]
        m2 = k2 + q + 3.0 * lam * phi**2
        return np.concatenate([[pi, -(q + lam * phi**2) * phi],
                               2.0 * dfp, dpp - m2 * dff, -2.0 * m2 * dfp])

    y0 = np.concatenate([[state.phi, state.dphi], state.dff, state.dfp, state.dpp])
    t_eval = state.time + np.linspace(0.0, t_end, n_samples)
    rtol = max(tol * 1e-2, 1e-13)
    sol = solve_ivp(rhs, (state.time, state.time + t_end), y0, method="DOP853", t_eval=t_eval,
                    rtol=rtol, atol=rtol * max(float(np.abs(y0).max()), 1e-12))
    if sol.status != 0:
        raise IntegrationFailure(sol.message, t_reached=float(sol.t[-1]) if sol.t.size else state.time,
                                 nfev=int(sol.nfev))

    y = sol.y.T
    dff, dfp, dpp = y[:, 2:2 + nk], y[:, 2 + nk:2 + 2 * nk], y[:, 2 + 2 * nk:]
    inv = dff * dpp - dfp**2
    drift = float(np.max(np.abs(inv - inv[0]) / np.maximum(np.abs(inv[0]), 1e-300))) if np.any(inv[0]) else 0.0
    return GaussianTrajectory(sol.t, state.k.copy(), y[:, 0], y[:, 1], dff, dfp, dpp, q, lam, drift)


class GaussianPreset(NamedTuple):
    state: GaussianState
    q: float
    lam: float
    t_end: float
    n_samples: int


def disordered_preset(n_modes: int = 32, k_max: float | None = None) -> GaussianPreset:
    """Quench q = 0.1 -> 1 with a small condensate kick; D starts in the q = 0.1 vacuum."""
    q, q_i = 1.0, 0.1
    k = default_k_grid(n_modes, long_wavelength_k_max(q) if k_max is None else k_max)
    return GaussianPreset(gaussian_initial_state(k, q_i, phi=0.01), q, 1.0, 40.0, 801)


def ordered_preset(n_modes: int = 32, k_max: float | None = None) -> GaussianPreset:
    """Condensate displaced from phi0 = 1 at q = -1; D starts in the vacuum of the initial mass."""
    q, lam, phi = -1.0, 1.0, 1.05
    k = default_k_grid(n_modes, long_wavelength_k_max(q) if k_max is None else k_max)
    return GaussianPreset(gaussian_initial_state(k, q + 3 * lam * phi**2, phi=phi), q, lam, 40.0, 801)


PRESETS = {"disordered": disordered_preset, "ordered": ordered_preset}


class GaussianCorrelationResult(NamedTuple):
    t: np.ndarray
    xi: np.ndarray
    xi_fit: FitResult
    phi_fit: FitResult
    ratio: float                  # omega_xi / omega_phi


def gaussian_correlation_length(trajectory: GaussianTrajectory, exponent: float = 1.5,
                                skip_time: float | None = None,
                                omega_rabi: float = 1.0) -> GaussianCorrelationResult:
    """
    Fit xi(t) from D_phiphi(k, t) treated as a structure factor, then fit damped oscillators
    to xi(t) and phi(t). ratio is nan unless both oscillator fits converged.
    Time is in units of 1/omega_rabi; the fits skip one Rabi period unless skip_time is given.
    """
    if trajectory.k.size < 4:
        raise InvalidArgument(f"need >= 4 k-modes, got {trajectory.k.size}")
    n_modes = np.ones_like(trajectory.k, dtype=np.int64)
    xi = np.array([
        fit_correlation_length(StructureFactor(trajectory.k, row, n_modes), exponent)["xi"]
        for row in trajectory.dff
    ])
    xi_fit = fit_damped_oscillator(trajectory.t, xi, skip_time, omega_rabi)
    phi_fit = fit_damped_oscillator(trajectory.t, trajectory.phi, skip_time, omega_rabi)
    ratio = float("nan")
    if xi_fit.converged and phi_fit.converged:
        ratio = xi_fit["omega"] / phi_fit["omega"]
    else:
        logger.info("frequency ratio undefined", extra={"xi_flags": list(xi_fit.flags),
                                                        "phi_flags": list(phi_fit.flags)})
    return GaussianCorrelationResult(trajectory.t, xi, xi_fit, phi_fit, float(ratio))


# ------------------------------------------------------------------ scaling laws

class KZScales(NamedTuple):
    t_kz: float
    xi_kz: float


def kzm_scales(params: TheoryParams) -> KZScales:
    """t_KZ = t0 (tau/t0)^(nu z/(nu z+1)), xi_KZ = l0 (tau/t0)^(nu/(nu z+1)); unit prefactors."""
    if not (params.tau > 0 and params.t0 > 0 and params.l0 > 0):
        raise InvalidArgument("tau, t0 and l0 must be > 0")
    r = params.tau / params.t0
    nz = params.nu * params.z
    return KZScales(params.t0 * r ** (nz / (nz + 1)), params.l0 * r ** (params.nu / (nz + 1)))


class CoarseningRate(NamedTuple):
    xi_sq_rate: float | np.ndarray       # d xi^2 / dt, normalized
    r_sq_rate: float | np.ndarray        # d r^2 / dt of a shrinking domain


def coarsening_rate(delta_over_omega, params: TheoryParams, reference: float = 1.0) -> CoarseningRate:
    """v = ((Delta - Delta_c) / reference)^(-nu), normalized to 1 at Delta - Delta_c = reference."""
    x = np.asarray(delta_over_omega, dtype=np.float64) - params.delta_c
    if np.any(x <= 0):
        raise InvalidArgument(f"Delta/Omega must exceed Delta_c/Omega = {params.delta_c}")
    v = (x / reference) ** (-params.nu)
    if v.ndim == 0:
        v = float(v)
    return CoarseningRate(v, -v)


def noncritical_growth_rate(xi, delta_over_omega, params: TheoryParams):
    """d xi / dt = v / (2 xi) for xi^2 growing at rate v."""
    xi = np.asarray(xi, dtype=np.float64)
    if np.any(xi <= 0):
        raise InvalidArgument("xi must be > 0")
    out = coarsening_rate(delta_over_omega, params).xi_sq_rate / (2.0 * xi)
    return float(out) if np.ndim(out) == 0 else out


def classical_critical_growth(t, params: TheoryParams):
    """xi ~ t^(1/z_bar) for critical coarsening of the 2D classical Ising model."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0):
        raise InvalidArgument("t must be >= 0")
    out = t ** (1.0 / params.z_bar)
    return float(out) if out.ndim == 0 else out


def scaling_function_F(x, x_s: float, params: TheoryParams):
    """
    x < x_s:  x^(1/z_d)
    x >= x_s: x_s^(-nu + nu z / z_d) (C x - C_s x_s)^(1/z_d)
    """
    if not x_s > 1:
        raise InvalidArgument(f"x_s must be > 1 (noncritical regime), got {x_s}")
    x = np.asarray(x, dtype=np.float64)
    if np.any(x <= 0):
        raise InvalidArgument("x must be > 0")
    p = params
    held = x_s ** (-p.nu + p.nu * p.z / p.z_d) * np.maximum(p.C * x - p.C_s * x_s, 0.0) ** (1.0 / p.z_d)
    out = np.where(x < x_s, x ** (1.0 / p.z_d), held)
    return float(out) if out.ndim == 0 else out
