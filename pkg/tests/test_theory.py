import logging

import numpy as np
import pytest

from analysis.errors import InvalidArgument
from analysis.theory import (
    LANDAU_RATIO,
    GaussianState,
    TheoryParams,
    classical_critical_growth,
    coarsening_rate,
    default_k_grid,
    disordered_preset,
    gaussian_correlation_length,
    gaussian_evolve,
    gaussian_initial_state,
    kzm_scales,
    landau_evolve,
    landau_frequencies,
    landau_period,
    noncritical_growth_rate,
    oscillation_frequency,
    ordered_preset,
    scaling_function_F,
)


def test_harmonic_limit():
    traj = landau_evolve(1.0, 0.0, 0.1, 0.0, 20.0, tol=1e-10, n_samples=401)
    np.testing.assert_allclose(traj.phi, 0.1 * np.cos(traj.t), atol=1e-9)
    assert traj.energy_drift < 1e-10


def test_period_matches_quadrature():
    traj = landau_evolve(1.0, 1.0, 0.5, 0.0, 60.0, tol=1e-10, n_samples=30001)
    period = landau_period(1.0, 1.0, 0.5)
    assert 2 * np.pi / oscillation_frequency(traj.t, traj.phi) == pytest.approx(period, rel=1e-4)
    assert landau_period(4.0, 0.0, 1.0) == pytest.approx(np.pi)


@pytest.mark.parametrize("q,phi_init,expected", [
    (1.0, 1e-3, 1.0),
    (-1.0, 1.0 + 1e-3, np.sqrt(2.0)),
    (-4.0, 2.0 + 1e-3, 2 * np.sqrt(2.0)),
])
def test_small_amplitude_frequencies(q, phi_init, expected):
    traj = landau_evolve(q, 1.0, phi_init, 0.0, 60.0, tol=1e-10, n_samples=12001)
    assert oscillation_frequency(traj.t, traj.phi) == pytest.approx(expected, rel=1e-3)
    assert landau_frequencies(q).omega == pytest.approx(expected)


def test_landau_frequencies(caplog):
    assert landau_frequencies(4.0) == (2.0, 0.0, "disordered", False)
    ordered = landau_frequencies(-4.0, 1.0)
    assert ordered.omega == pytest.approx(2 * np.sqrt(2))
    assert ordered.phi0 == pytest.approx(2.0)
    assert ordered.omega / landau_frequencies(4.0).omega == pytest.approx(LANDAU_RATIO)
    with caplog.at_level(logging.WARNING, logger="analysis.theory"):
        crit = landau_frequencies(0.0)
    assert crit.critical and crit.phase == "critical"
    assert "critical point" in caplog.text
    with pytest.raises(InvalidArgument):
        landau_frequencies(1.0, 0.0)


def test_time_reversal():
    fwd = landau_evolve(-1.0, 1.0, 1.3, 0.2, 7.0, tol=1e-10)
    back = landau_evolve(-1.0, 1.0, fwd.phi[-1], -fwd.dphi[-1], 7.0, tol=1e-10)
    assert back.phi[-1] == pytest.approx(1.3, abs=1e-9)
    assert -back.dphi[-1] == pytest.approx(0.2, abs=1e-9)


@pytest.mark.parametrize("kwargs", [{"tol": 0.0}, {"t_end": 0.0}])
def test_landau_rejects(kwargs):
    args = {"q": 1.0, "lam": 1.0, "phi_init": 0.1, "dphi_init": 0.0, "t_end": 1.0}
    args.update(kwargs)
    with pytest.raises(InvalidArgument):
        landau_evolve(**args)


def test_gaussian_mode_cos_squared():
    state = GaussianState(np.array([0.0]), 1.0, 0.0, 0.0)
    traj = gaussian_evolve(state, 1.0, 0.0, 10.0, tol=1e-10, n_samples=501)
    np.testing.assert_allclose(traj.dff[:, 0], np.cos(traj.t) ** 2, atol=1e-8)
    assert oscillation_frequency(traj.t, traj.dff[:, 0]) == pytest.approx(2.0, rel=1e-3)


def test_gaussian_static_fixed_point():
    k = default_k_grid(8, 0.3)
    state = gaussian_initial_state(k, 1.0)
    traj = gaussian_evolve(state, 1.0, 1.0, 10.0, n_samples=101)
    np.testing.assert_allclose(traj.dff, np.broadcast_to(state.dff, traj.dff.shape), rtol=1e-9)
    np.testing.assert_allclose(traj.dfp, 0.0, atol=1e-10)
    assert traj.invariant_drift < 1e-9


def test_k_grid_defaults_and_preset_window():
    k = default_k_grid()
    assert k.size == 32
    assert k[0] == pytest.approx(np.pi / 32)
    assert k[-1] == pytest.approx(np.pi)
    np.testing.assert_allclose(np.diff(k), np.pi / 32)
    assert disordered_preset(8).state.k[-1] == pytest.approx(0.3)
    assert ordered_preset(8).state.k[-1] == pytest.approx(0.3)
    assert disordered_preset(8, k_max=np.pi).state.k[-1] == pytest.approx(np.pi)
    with pytest.raises(InvalidArgument):
        default_k_grid(0)
    with pytest.raises(InvalidArgument):
        default_k_grid(8, 0.0)


def test_gaussian_invariant_and_positivity():
    preset = disordered_preset(16)
    traj = gaussian_evolve(preset.state, preset.q, preset.lam, 20.0, n_samples=201)
    assert traj.invariant_drift < 1e-6
    assert np.all(traj.dff > 0) and np.all(traj.dpp > 0)
    s = traj.state(100)
    assert s.time == pytest.approx(traj.t[100])
    np.testing.assert_allclose(s.invariant, 0.25, rtol=1e-6)


def test_gaussian_state_validation():
    with pytest.raises(InvalidArgument):
        GaussianState(np.array([0.1]), -1.0, 0.0, 1.0)
    with pytest.raises(InvalidArgument):
        GaussianState(np.array([0.1]), 1.0, 2.0, 1.0)
    with pytest.raises(InvalidArgument):
        gaussian_initial_state(np.array([0.0, 0.1]), -1.0)


def test_static_input_flags_the_frequency():
    k = default_k_grid(8, 0.3)
    traj = gaussian_evolve(gaussian_initial_state(k, 1.0), 1.0, 1.0, 10.0, n_samples=101)
    res = gaussian_correlation_length(traj)
    assert np.isnan(res.ratio)
    assert not res.phi_fit.converged
    np.testing.assert_allclose(res.xi, res.xi[0], rtol=1e-6)


@pytest.mark.slow
def test_disordered_frequency_doubling():
    p = disordered_preset()
    res = gaussian_correlation_length(gaussian_evolve(p.state, p.q, p.lam, p.t_end, n_samples=p.n_samples))
    assert res.ratio == pytest.approx(2.0, rel=0.05)


@pytest.mark.slow
def test_ordered_driven_ratio():
    p = ordered_preset()
    res = gaussian_correlation_length(gaussian_evolve(p.state, p.q, p.lam, p.t_end, n_samples=p.n_samples))
    assert res.phi_fit["omega"] == pytest.approx(np.sqrt(2.0), rel=0.05)
    assert res.ratio == pytest.approx(1.0, rel=0.10)


def test_kzm_scales():
    nu, z = 0.629, 1.0
    anchor = kzm_scales(TheoryParams(tau=3.0, t0=3.0, l0=2.0))
    assert anchor.t_kz == pytest.approx(3.0)
    assert anchor.xi_kz == pytest.approx(2.0)
    a = kzm_scales(TheoryParams(nu=nu, z=z, tau=4.0))
    b = kzm_scales(TheoryParams(nu=nu, z=z, tau=8.0))
    assert b.xi_kz / a.xi_kz == pytest.approx(2 ** (nu / (nu * z + 1)), rel=1e-12)
    assert nu / (nu * z + 1) == pytest.approx(0.386, abs=1e-3)
    with pytest.raises(InvalidArgument):
        kzm_scales(TheoryParams(tau=0.0))


def test_coarsening_rate_arithmetic():
    p = TheoryParams(delta_c=1.1)
    assert coarsening_rate(2.1, p).xi_sq_rate == pytest.approx(1.0, rel=1e-12)
    assert coarsening_rate(3.1, p).xi_sq_rate == pytest.approx(2 ** -0.629, rel=1e-12)
    lo, hi = coarsening_rate([1.6, 3.1], p).xi_sq_rate
    assert lo / hi == pytest.approx(4 ** 0.629, rel=1e-12)
    grid = coarsening_rate(np.linspace(1.2, 5.0, 100), p)
    assert np.all(np.diff(grid.xi_sq_rate) < 0)
    np.testing.assert_array_equal(grid.r_sq_rate, -grid.xi_sq_rate)
    with pytest.raises(InvalidArgument):
        coarsening_rate(1.1, p)


def test_growth_laws():
    p = TheoryParams(delta_c=1.1, z_bar=2.0)
    assert noncritical_growth_rate(2.0, 2.1, p) == pytest.approx(0.25)
    assert classical_critical_growth(16.0, p) == pytest.approx(4.0)
    with pytest.raises(InvalidArgument):
        noncritical_growth_rate(0.0, 2.1, p)
    with pytest.raises(InvalidArgument):
        classical_critical_growth(-1.0, p)


def test_scaling_function_values():
    p = TheoryParams(C=2.0, C_s=1.0)
    assert scaling_function_F(4.0, 4.0, p) == pytest.approx(4 ** 0.1855, rel=1e-12)
    assert scaling_function_F(2.0, 4.0, p) == pytest.approx(np.sqrt(2.0))
    # z_d = 2: F^2 linear in x on the held branch
    x = np.array([5.0, 6.0, 7.0])
    f2 = scaling_function_F(x, 4.0, p) ** 2
    assert np.diff(f2, 2)[0] == pytest.approx(0.0, abs=1e-12)


def test_scaling_function_monotonicity():
    p = TheoryParams(C=1.0, C_s=0.9)
    for x_s in np.linspace(2.0, 10.0, 10):
        x = np.linspace(x_s, 10 * x_s, 100)
        assert np.all(np.diff(scaling_function_F(x, x_s, p)) > 0)
    x_s = np.linspace(2.0, 10.0, 100)
    for u in (1.0, 10.0, 100.0):
        f = np.array([scaling_function_F(xs + u, xs, p) for xs in x_s])
        assert np.all(np.diff(f) < 0)


def test_parameter_validation():
    with pytest.raises(InvalidArgument):
        TheoryParams(C=1.0, C_s=1.0)
    with pytest.raises(InvalidArgument):
        TheoryParams(nu=0.0)
    with pytest.raises(InvalidArgument):
        scaling_function_F(2.0, 1.0, TheoryParams())
    assert TheoryParams(q_scale=2.0).q_from_detuning(0.1) == pytest.approx(2.0)
