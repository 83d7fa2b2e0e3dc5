"""
Least-squares fitters for time series.

All fits go through scipy.optimize.least_squares (trust-region reflective, x_scale="jac").
A fit that cannot be seeded or does not converge comes back with converged=False and a
flag; it never raises into a pipeline.
"""
import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import least_squares

from analysis.errors import InvalidArgument

logger = logging.getLogger(__name__)

FTOL = 1e-10
XTOL = 1e-12
GTOL = 1e-12
PEAK_FLOOR_RATIO = 5.0
ZERO_PAD = 8


@dataclass
class FitResult:
    params: dict[str, float]
    covariance: np.ndarray = field(repr=False)
    residual_norm: float
    converged: bool
    n_points: int
    flags: tuple[str, ...] = ()
    message: str = ""

    def __getitem__(self, name: str) -> float:
        return self.params[name]

    def stderr(self, name: str) -> float:
        k = list(self.params).index(name)
        v = self.covariance[k, k]
        return float(np.sqrt(v)) if np.isfinite(v) and v >= 0 else float("nan")

    def to_dict(self) -> dict:
        return {
            "params": {k: float(v) for k, v in self.params.items()},
            "stderr": {k: self.stderr(k) for k in self.params},
            "covariance": np.asarray(self.covariance, dtype=float).tolist(),
            "residual_norm": float(self.residual_norm),
            "converged": bool(self.converged),
            "n_points": int(self.n_points),
            "flags": list(self.flags),
            "message": self.message,
        }


def unconverged(names, n_points: int, flag: str, message: str = "", **known) -> FitResult:
    params = {k: float(known.get(k, np.nan)) for k in names}
    cov = np.full((len(names), len(names)), np.nan)
    return FitResult(params, cov, float("nan"), False, n_points, (flag,), message)


def covariance_from_jac(jac: np.ndarray, cost: float, n_points: int) -> np.ndarray:
    """pinv(J^T J) * s^2 with s^2 = sum(resid^2) / (m - p)."""
    p = jac.shape[1]
    dof = n_points - p
    s2 = 2.0 * cost / dof if dof > 0 else 0.0
    cov = np.linalg.pinv(jac.T @ jac) * s2
    return 0.5 * (cov + cov.T)


def run_least_squares(resid, x0, **kw):
    kw.setdefault("method", "trf")
    kw.setdefault("x_scale", "jac")
    kw.setdefault("ftol", FTOL)
    kw.setdefault("xtol", XTOL)
    kw.setdefault("gtol", GTOL)
    return least_squares(resid, np.asarray(x0, dtype=np.float64), **kw)


# ------------------------------------------------------------------ spectral seeding

class SpectralPeak(NamedTuple):
    omega: float        # rad per unit time
    amplitude: float
    phase: float        # theta in A cos(omega t + theta)
    peak_to_floor: float


def spectral_peak(t, y, pad: int = ZERO_PAD) -> SpectralPeak | None:
    """
    Strongest non-DC line of the mean-subtracted series from a zero-padded FFT, with
    parabolic refinement. Assumes uniform sampling. None if the series is flat.
    """
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = y.size
    if n < 4:
        return None
    dt = float(np.median(np.diff(t)))
    y0 = y - y.mean()
    if not np.any(y0):
        return None

    nfft = pad * int(2 ** np.ceil(np.log2(n)))
    X = np.fft.rfft(y0, nfft)
    w = 2 * np.pi * np.fft.rfftfreq(nfft, d=dt)
    P = np.abs(X)
    k = int(np.argmax(P[1:])) + 1

    w_pk = w[k]
    if 1 <= k < P.size - 1:
        den = P[k - 1] - 2 * P[k] + P[k + 1]
        if den != 0:
            w_pk = w[k] + 0.5 * (P[k - 1] - P[k + 1]) / den * (w[1] - w[0])

    floor = float(np.median(P[1:]))
    ratio = float(P[k] / floor) if floor > 0 else np.inf
    amp = 2.0 * P[k] / n
    phase = float(np.angle(X[k]) - w[k] * t[0])
    return SpectralPeak(float(w_pk), float(amp), phase, ratio)


def _wrap(theta: float) -> float:
    return float((theta + np.pi) % (2 * np.pi) - np.pi)


# ------------------------------------------------------------------ damped oscillator

DAMPED_NAMES = ("phi0", "A", "omega", "gamma", "theta0")


def damped_oscillator(t, phi0, A, omega, gamma, theta0):
    t = np.asarray(t, dtype=np.float64)
    return phi0 + A * np.cos(omega * t + theta0) * np.exp(-gamma * t)


def fit_damped_oscillator(t, y, skip_time: float | None = None,
                          omega_rabi: float | None = None) -> FitResult:
    """
    phi0 + A cos(omega t + theta0) exp(-gamma t). Seeded from the spectral peak of the
    mean-subtracted data (gamma = 0, phi0 = mean); skip_time drops an initial transient.
    With skip_time None the window skipped is one Rabi period 2pi/omega_rabi (none without omega_rabi).
    """
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if t.shape != y.shape:
        raise InvalidArgument("t and y must have the same shape")
    if t.size < 8:
        raise InvalidArgument(f"damped-oscillator fit needs >= 8 samples, got {t.size}")
    if skip_time is None:
        if omega_rabi is not None and not omega_rabi > 0:
            raise InvalidArgument(f"omega_rabi must be > 0, got {omega_rabi}")
        skip_time = 2 * np.pi / omega_rabi if omega_rabi is not None else 0.0
    keep = t >= t[0] + skip_time
    t, y = t[keep], y[keep]
    if t.size < 8:
        raise InvalidArgument(f"damped-oscillator fit needs >= 8 samples, got {t.size}")

    mean = float(np.mean(y))
    if np.ptp(y) <= 1e-12 * max(1.0, abs(mean)):
        return unconverged(DAMPED_NAMES, t.size, "constant", "series is constant", phi0=mean, A=0.0)

    peak = spectral_peak(t, y)
    if peak is None or peak.peak_to_floor < PEAK_FLOOR_RATIO:
        return unconverged(DAMPED_NAMES, t.size, "no_peak", "no spectral peak above the noise floor",
                           phi0=mean)

    flags = []
    if peak.omega * (t[-1] - t[0]) < 2 * np.pi:
        flags.append("short_window")

    def resid(p):
        return damped_oscillator(t, *p) - y

    best = None
    for dphi in (0.0, 0.5 * np.pi, np.pi, 1.5 * np.pi):
        res = run_least_squares(resid, [mean, peak.amplitude, peak.omega, 0.0, peak.phase + dphi])
        if best is None or res.cost < best.cost:
            best = res

    p = best.x.copy()
    cov = covariance_from_jac(best.jac, best.cost, t.size)
    sign = np.ones(5)
    if p[1] < 0:
        p[1] = -p[1]
        p[4] += np.pi
        sign[1] = -1
    if p[2] < 0:
        p[2] = -p[2]
        p[4] = -p[4]
        sign[2] = sign[4] = -1
    p[4] = _wrap(p[4])
    cov = cov * np.outer(sign, sign)

    converged = bool(best.status > 0)
    if not converged:
        flags.append("not_converged")
    return FitResult(dict(zip(DAMPED_NAMES, map(float, p))), cov, float(np.sqrt(2 * best.cost)),
                     converged, t.size, tuple(flags), best.message)


# ------------------------------------------------------------------ power law + oscillation

POWERLAW_NAMES = ("c0", "c1", "alpha", "c", "omega", "phi")


def powerlaw_plus_oscillation(t, c0, c1, alpha, c, omega, phi):
    t = np.asarray(t, dtype=np.float64)
    base = np.maximum(c0 + c1 * t, 1e-300)
    return base**alpha + c * np.cos(omega * t + phi)


def fit_powerlaw_plus_oscillation(t, y) -> FitResult:
    """
    (c0 + c1 t)^alpha + c cos(omega t + phi). Power law seeded at alpha = 1/2 from a line
    through y^2; the oscillation is seeded from the spectrum of the power-law residual.
    """
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if t.shape != y.shape:
        raise InvalidArgument("t and y must have the same shape")
    if t.size < 10:
        raise InvalidArgument(f"power-law fit needs >= 10 samples, got {t.size}")

    c1, c0 = np.polyfit(t, y**2, 1)
    floor = 1e-6 * max(float(np.max(y**2)), 1e-12)
    c0 = max(c0, floor - min(c1 * t.min(), c1 * t.max()))

    def resid_pl(p):
        return powerlaw_plus_oscillation(t, p[0], p[1], p[2], 0.0, 0.0, 0.0) - y

    pl = run_least_squares(resid_pl, [c0, c1, 0.5])
    c0, c1, alpha = pl.x
    r = y - powerlaw_plus_oscillation(t, c0, c1, alpha, 0.0, 0.0, 0.0)

    peak = spectral_peak(t, r)
    scale = max(float(np.ptp(y)), 1e-300)
    if peak is None or peak.amplitude < 1e-8 * scale or peak.peak_to_floor < PEAK_FLOOR_RATIO:
        cov = np.full((6, 6), np.nan)
        cov[:3, :3] = covariance_from_jac(pl.jac, pl.cost, t.size)
        params = dict(zip(POWERLAW_NAMES, (float(c0), float(c1), float(alpha), 0.0, np.nan, np.nan)))
        return FitResult(params, cov, float(np.sqrt(2 * pl.cost)), bool(pl.status > 0), t.size,
                         ("no_oscillation",), pl.message)

    def resid(p):
        return powerlaw_plus_oscillation(t, *p) - y

    best = None
    for dphi in (0.0, 0.5 * np.pi, np.pi, 1.5 * np.pi):
        res = run_least_squares(resid, [c0, c1, alpha, peak.amplitude, peak.omega, peak.phase + dphi])
        if best is None or res.cost < best.cost:
            best = res

    p = best.x.copy()
    cov = covariance_from_jac(best.jac, best.cost, t.size)
    sign = np.ones(6)
    if p[3] < 0:
        p[3] = -p[3]
        p[5] += np.pi
        sign[3] = -1
    if p[4] < 0:
        p[4] = -p[4]
        p[5] = -p[5]
        sign[4] = sign[5] = -1
    p[5] = _wrap(p[5])
    cov = cov * np.outer(sign, sign)

    converged = bool(best.status > 0)
    return FitResult(dict(zip(POWERLAW_NAMES, map(float, p))), cov, float(np.sqrt(2 * best.cost)),
                     converged, t.size, () if converged else ("not_converged",), best.message)
