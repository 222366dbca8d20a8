import math
from dataclasses import replace

import numpy as np
import pytest

from esc_lab.averaging import (
    AveragedState,
    NoConvergence,
    NotStationary,
    averaged_derivative,
    find_periodic_solution,
    fit_quadratic_coefficient,
    nu,
    nu_derivatives,
    predicted_coefficients,
    proposition1_check,
)
from esc_lab.esc import SchemeConfig, build_scheme, loop_derivatives
from esc_lab.plants import EXAMPLE1, ObjectivePoly, example_plant
from esc_lab.sim_core import simulate

THETA_STAR = 0.8757711643
CFG = SchemeConfig(omega=0.1, delta=1e-3, epsilon=0.1, omega_H_prime=15.0, omega_L_prime=5.0, K_prime=15.0)


def test_nu_values():
    assert nu(EXAMPLE1, THETA_STAR, 0.0) == 0.0
    assert nu(EXAMPLE1, THETA_STAR, 0.1) == pytest.approx(EXAMPLE1(THETA_STAR + 0.1) - 10.409132266, abs=1e-9)
    assert nu_derivatives(EXAMPLE1, THETA_STAR)[0] == pytest.approx(-4.7346, abs=1e-3)


def test_not_stationary():
    with pytest.raises(NotStationary):
        nu(EXAMPLE1, 0.5, 0.0)


def test_predicted_coefficients_from_independent_derivatives():
    # hand-differentiated objective, independent of the polynomial class
    d2 = -12 * THETA_STAR**2 + 2 * (8 / 15) * 3 * THETA_STAR + 5 / 3
    d3 = -24 * THETA_STAR + 6 * (8 / 15)
    th, eta = predicted_coefficients(EXAMPLE1, THETA_STAR)
    assert th == pytest.approx(-d3 / (8 * d2), rel=1e-9)
    assert eta == pytest.approx(d2 / 4, rel=1e-9)
    assert th == pytest.approx(-0.4704, abs=1e-4)
    assert eta == pytest.approx(-1.1837, abs=1e-3)


def test_origin_is_equilibrium_without_excitation():
    assert averaged_derivative(AveragedState(0, 0, 0), CFG, 0.0, EXAMPLE1, THETA_STAR) == (0.0, 0.0, 0.0, 1.0)


def test_first_row():
    d = averaged_derivative(AveragedState(0, 1.0, 0), CFG, 0.0, EXAMPLE1, THETA_STAR)
    assert d[0] == pytest.approx(CFG.delta * CFG.K_prime)


def test_tiny_excitation_gives_tiny_offsets():
    sol = find_periodic_solution(CFG, 1e-4, EXAMPLE1, THETA_STAR)
    assert max(abs(sol.theta_p_mean), abs(sol.xi_p_mean), abs(sol.eta_p_mean)) <= 1e-6


@pytest.fixture(scope="module")
def a01():
    return find_periodic_solution(CFG, 0.1, EXAMPLE1, THETA_STAR)


def test_mean_offsets_at_a0_tenth(a01):
    assert abs(a01.theta_p_mean - (-0.004704)) <= 0.002
    assert abs(a01.eta_p_mean - (-0.011837)) <= 0.002
    assert abs(a01.xi_p_mean) <= 1e-6
    assert a01.period == pytest.approx(2 * math.pi / 0.1)


def test_residual_decreases_across_periods(a01):
    h = np.array(a01.residual_history)
    # the slow modes are oscillatory, so the residual shrinks inside a decaying envelope
    blocks = [h[i:i + 100].max() for i in range(0, len(h) - 99, 100)]
    assert len(blocks) >= 5
    assert all(b2 < b1 for b1, b2 in zip(blocks, blocks[1:]))
    assert h[-1] <= 1e-10


def test_scaling_law():
    small = find_periodic_solution(CFG, 0.05, EXAMPLE1, THETA_STAR)
    big = find_periodic_solution(CFG, 0.1, EXAMPLE1, THETA_STAR)
    assert big.theta_p_mean / small.theta_p_mean == pytest.approx(4.0, rel=0.2)
    assert big.eta_p_mean / small.eta_p_mean == pytest.approx(4.0, rel=0.2)


def test_symmetric_objective_has_no_quadratic_offset():
    sym = ObjectivePoly([10.0, 0.0, -1.0, 0.0, -1.0])
    for a0 in (0.05, 0.1):
        sol = find_periodic_solution(CFG, a0, sym, 0.0)
        assert abs(sol.theta_p_mean) <= 0.05 * a0**3


def test_slow_time_matches_fast_time():
    # simulate in t with rate w and compare with the tau solution after one slow period
    a0, w = 0.1, CFG.omega
    z0 = np.array([0.05, 0.01, -0.02])
    dK, dL, dH = CFG.delta * CFG.K_prime, CFG.delta * CFG.omega_L_prime, CFG.delta * CFG.omega_H_prime

    def slow(tau, z):
        v = EXAMPLE1(z[0] + a0 * math.sin(tau) + THETA_STAR) - EXAMPLE1(THETA_STAR)
        return np.array([dK * z[1], dL * ((v - z[2]) * math.sin(tau) - z[1]), dH * (v - z[2])])

    fast = lambda t, z: w * slow(w * t, z)
    zs = simulate(slow, z0, 0.0, 2 * math.pi, 2 * math.pi / 256).data[-1]
    zf = simulate(fast, z0, 0.0, 2 * math.pi / w, 2 * math.pi / w / 256).data[-1]
    assert np.allclose(zs, zf, atol=1e-12)
    d = averaged_derivative(AveragedState(*z0, tau=0.3), CFG, a0, EXAMPLE1, THETA_STAR)
    assert np.allclose(d[:3], slow(0.3, z0), atol=1e-15)


def test_full_loop_tracks_averaged_system():
    # frozen amplitude, plant started on its equilibrium; compare over one slow period
    a0 = 0.2
    cfg = replace(CFG, variant="scheme2", delta=0.02, lambda_prime=0.0, gamma=1.0, a0=a0)
    plant = example_plant(EXAMPLE1)
    scheme = build_scheme(plant, cfg)
    th0 = THETA_STAR + 0.1
    x0 = np.concatenate([plant.equilibrium(th0), [th0, 0.0, EXAMPLE1(THETA_STAR), a0]])
    full = simulate(lambda t, s: loop_derivatives(scheme, t, s, abs(s[3])), x0, 0.0, cfg.period * 1, cfg.period / 1024)

    def avg(tau, z):
        d = averaged_derivative(AveragedState(*z, tau=tau), cfg, a0, EXAMPLE1, THETA_STAR)
        return np.array(d[:3])

    red = simulate(avg, [0.1, 0.0, 0.0], 0.0, 2 * math.pi, 2 * math.pi / 1024)
    th_full = full.data[-1, 2] - THETA_STAR
    th_red = red.data[-1, 0]
    assert abs(th_full - th_red) <= 3 * cfg.omega * abs(th_red - 0.1) + 1e-3


def test_no_convergence():
    with pytest.raises(NoConvergence):
        find_periodic_solution(CFG, 0.1, EXAMPLE1, THETA_STAR, max_periods=3)


def test_fit_recovers_known_coefficients():
    a = np.array([0.05, 0.1, 0.15])
    assert fit_quadratic_coefficient(a, -0.3 * a**2 + 2.0 * a**3) == pytest.approx(-0.3)
    assert fit_quadratic_coefficient([0.1], [-0.003]) == pytest.approx(-0.3)


def test_offset_report_against_prediction():
    report = proposition1_check(CFG, [0.05, 0.1, 0.15], EXAMPLE1, THETA_STAR)
    assert -0.541 <= report.theta_coeff <= -0.400
    assert report.passed
    assert all(abs(row[3]) <= 1e-6 for row in report.rows)
    lines = report.csv_lines()
    assert lines[0] == "a0,theta_mean,eta_mean,xi_mean,residual"
    assert len(lines) == 5 and lines[-1].startswith("# fit")
