import numpy as np
import pytest

from analysis.errors import InvalidArgument
from analysis.fits import (
    covariance_from_jac,
    damped_oscillator,
    fit_damped_oscillator,
    fit_powerlaw_plus_oscillation,
    powerlaw_plus_oscillation,
    spectral_peak,
)
from analysis.theory import landau_evolve, oscillation_frequency

TRUE_DAMPED = {"phi0": 0.3, "A": 0.4, "omega": 2 * np.pi * 1.5, "gamma": 0.5, "theta0": 0.7}


def test_spectral_peak_finds_the_line():
    t = np.linspace(0, 20, 1001)
    peak = spectral_peak(t, 1.0 + 0.2 * np.cos(3.0 * t))
    assert peak.omega == pytest.approx(3.0, rel=5e-3)
    assert peak.peak_to_floor > 5
    assert spectral_peak(t, np.ones_like(t)) is None
    assert spectral_peak(t[:3], t[:3]) is None


def test_damped_oscillator_exact_recovery():
    t = np.linspace(0, 8, 801)
    res = fit_damped_oscillator(t, damped_oscillator(t, **TRUE_DAMPED))
    assert res.converged
    assert res.flags == ()
    for name, value in TRUE_DAMPED.items():
        assert res[name] == pytest.approx(value, abs=1e-6)
    assert res.residual_norm < 1e-8


def test_damped_oscillator_canonical_signs():
    t = np.linspace(0, 8, 801)
    y = damped_oscillator(t, 0.0, -0.5, -4.0, 0.2, 0.3)
    res = fit_damped_oscillator(t, y)
    assert res["A"] > 0 and res["omega"] > 0
    assert res["omega"] == pytest.approx(4.0, abs=1e-6)
    np.testing.assert_allclose(damped_oscillator(t, *res.params.values()), y, atol=1e-7)


def test_damped_oscillator_noise_gives_error_bars():
    t = np.linspace(0, 8, 801)
    y = damped_oscillator(t, **TRUE_DAMPED) + np.random.default_rng(1).normal(0, 0.01, t.size)
    res = fit_damped_oscillator(t, y)
    assert res.converged
    assert res["omega"] == pytest.approx(TRUE_DAMPED["omega"], abs=5 * res.stderr("omega"))
    assert 0 < res.stderr("omega") < 0.05
    d = res.to_dict()
    assert set(d) >= {"params", "stderr", "covariance", "converged", "flags"}


def test_constant_series_is_flagged():
    t = np.linspace(0, 1, 50)
    res = fit_damped_oscillator(t, np.full(50, 0.25))
    assert not res.converged
    assert res.flags == ("constant",)
    assert res["phi0"] == 0.25
    assert res["A"] == 0.0
    assert np.isnan(res["omega"])


def test_skip_time_and_input_checks():
    t = np.linspace(0, 8, 801)
    y = damped_oscillator(t, **TRUE_DAMPED)
    res = fit_damped_oscillator(t, y, skip_time=1.0)
    assert res.n_points == np.count_nonzero(t >= 1.0)
    assert res["gamma"] == pytest.approx(0.5, abs=1e-6)
    with pytest.raises(InvalidArgument):
        fit_damped_oscillator(t[:5], y[:5])
    with pytest.raises(InvalidArgument):
        fit_damped_oscillator(t, y[:-1])


def test_default_skip_is_one_rabi_period():
    t = np.linspace(0, 8, 801)
    y = damped_oscillator(t, **TRUE_DAMPED)
    res = fit_damped_oscillator(t, y, omega_rabi=2 * np.pi)
    assert res.n_points == np.count_nonzero(t >= 1.0)
    assert res["omega"] == pytest.approx(TRUE_DAMPED["omega"], rel=1e-6)
    assert fit_damped_oscillator(t, y).n_points == t.size
    assert fit_damped_oscillator(t, y, skip_time=0.0, omega_rabi=2 * np.pi).n_points == t.size
    with pytest.raises(InvalidArgument):
        fit_damped_oscillator(t, y, omega_rabi=0.0)


def test_landau_trajectory_frequency():
    traj = landau_evolve(1.0, 0.1, 0.05, 0.0, 60.0, tol=1e-10, n_samples=1201)
    res = fit_damped_oscillator(traj.t, traj.phi)
    assert res.converged
    # anharmonic shift 3 lam A^2 / 8 is ~1e-4 here
    assert res["omega"] == pytest.approx(1.0, rel=0.02)
    assert res["omega"] == pytest.approx(oscillation_frequency(traj.t, traj.phi), rel=1e-3)


def test_pure_power_law():
    t = np.linspace(0, 20, 201)
    res = fit_powerlaw_plus_oscillation(t, np.sqrt(1 + 2 * t))
    assert res.flags == ("no_oscillation",)
    assert res["c"] == 0.0
    assert np.isnan(res["omega"])
    assert res["alpha"] == pytest.approx(0.5, abs=1e-4)


def test_linear_growth_of_xi_squared():
    t = np.linspace(0, 5, 60)
    xi = np.sqrt(1.5**2 + 0.8 * t)
    res = fit_powerlaw_plus_oscillation(t, xi)
    assert res["alpha"] == pytest.approx(0.5, abs=1e-4)
    assert res["c1"] / res["c0"] == pytest.approx(0.8 / 1.5**2, rel=1e-3)


def test_power_law_with_oscillation():
    true = {"c0": 1.0, "c1": 2.0, "alpha": 0.5, "c": 0.1, "omega": 3.0, "phi": 0.4}
    t = np.linspace(0, 20, 401)
    res = fit_powerlaw_plus_oscillation(t, powerlaw_plus_oscillation(t, *true.values()))
    assert res.converged
    for name, value in true.items():
        assert res[name] == pytest.approx(value, rel=0.05)


def test_power_law_needs_ten_samples():
    with pytest.raises(InvalidArgument):
        fit_powerlaw_plus_oscillation(np.arange(9.0), np.arange(9.0))


def test_covariance_of_a_mean():
    # one parameter, J = 1: variance of the mean is s^2 / n
    r = np.array([1.0, -1.0, 2.0, -2.0])
    cov = covariance_from_jac(np.ones((4, 1)), 0.5 * np.sum(r**2), 4)
    assert cov[0, 0] == pytest.approx(np.sum(r**2) / 3 / 4)
