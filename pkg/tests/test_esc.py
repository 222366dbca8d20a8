import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from esc_lab.esc import ConfigError, SchemeConfig, build_scheme, dither, loop_derivatives, run_scheme
from esc_lab.plants import EXAMPLE1, ObjectivePoly, example_plant, static_plant
from esc_lab.sim_core import simulate

EX1 = SchemeConfig(omega=0.1, delta=0.02, epsilon=0.1, omega_H_prime=15.0, omega_L_prime=5.0, K_prime=15.0)


def test_dither_values():
    assert dither(0.0, 1.0, 0.1) == 0.0
    assert dither(math.pi / (2 * 0.1), 1.0, 0.1) == pytest.approx(1.0)
    assert dither(123.4, 0.0, 0.1) == 0.0


def test_physical_gains():
    cfg = replace(EX1, lambda_prime=5.0)
    assert cfg.omega_h == pytest.approx(0.03)
    assert cfg.k == pytest.approx(0.03)
    assert cfg.omega_l == pytest.approx(0.01)
    assert cfg.lam == pytest.approx(0.001)


def test_washout_rejects_constant_output():
    # constant objective via a static plant whose output ignores theta at the origin
    flat = ObjectivePoly([4.0, 0, 0, 0, -1e-300])
    scheme = build_scheme(static_plant(flat), replace(EX1, variant="classical"))
    d = loop_derivatives(scheme, 7.0, np.array([0.0, 0.25, 4.0, 1.0]), 0.0)
    assert d[2] == 0.0
    assert d[1] == pytest.approx(-scheme.config.omega_l * 0.25)


def test_scheme2_at_zero_xi():
    cfg = replace(EX1, variant="scheme2", lambda_prime=5.0, gamma=8.0)
    scheme = build_scheme(static_plant(EXAMPLE1), cfg)
    d = loop_derivatives(scheme, 3.0, np.array([0.2, 0.0, 9.0, 0.7]), 0.0)
    assert d[0] == 0.0
    assert d[3] == pytest.approx(-cfg.lam * 0.7)


def test_tan2009_derivative():
    cfg = replace(EX1, variant="tan2009", lambda_prime=1.0)
    scheme = build_scheme(static_plant(EXAMPLE1), cfg)
    t = 5.0
    d = loop_derivatives(scheme, t, np.array([0.3, 0.0, 0.0, 0.5]), 0.0)
    s = math.sin(0.1 * t)
    assert d[0] == pytest.approx(0.1 * 0.02 * EXAMPLE1(0.3 + 0.5 * s) * s)
    assert d[1] == 0.0 and d[2] == 0.0
    assert d[3] == pytest.approx(-cfg.lam * 0.5)


def test_zero_excitation_keeps_reference():
    plant = example_plant(EXAMPLE1)
    cfg = replace(EX1, variant="classical", a0=0.0, theta_hat0=0.4)
    scheme = build_scheme(plant, cfg)
    traj = run_scheme(scheme, 500.0, 0.05, sample_every=100, x0=plant.equilibrium(0.4), eta0=EXAMPLE1(0.4))
    assert np.all(traj["theta_hat"] == 0.4)
    assert np.max(np.abs(traj["xi"])) < 1e-12


def test_scheme2_on_static_plant_approaches_maximum():
    cfg = replace(EX1, variant="scheme2", lambda_prime=5.0, gamma=8.0, theta_hat0=-1.0)
    traj = run_scheme(build_scheme(static_plant(EXAMPLE1), cfg), 5000.0, 0.05, sample_every=20)
    th = traj["theta_hat"]
    assert abs(th[-1] - 0.8757711644) / 0.8757711644 <= 1e-3
    # after the transient the error only shrinks, up to dither-rate ripple
    late = np.abs(th[traj.t >= 2500] - 0.8757711644)
    assert late[-1] <= late[0]
    assert np.all(np.diff(traj["a"]) <= 1e-12)


def test_xi_tracks_scaled_gradient():
    a, th0 = 0.1, 0.3
    cfg = replace(EX1, variant="scheme2", lambda_prime=0.0, gamma=8.0, a0=a, theta_hat0=th0)
    scheme = build_scheme(static_plant(EXAMPLE1), cfg)

    def frozen(t, s):
        d = loop_derivatives(scheme, t, s, abs(s[1]))
        d[0] = 0.0
        return d

    t_end = 10 / cfg.omega_l + 2 * cfg.period
    traj = simulate(frozen, [th0, 0.0, EXAMPLE1(th0), a], 0.0, round(t_end), 0.05)
    last = traj.t >= traj.t[-1] - cfg.period
    xi_mean = traj["s1"][last][:-1].mean()
    g1 = EXAMPLE1.derivative(th0)
    assert abs(xi_mean - a * g1 / 2) <= 0.1 * abs(a * g1 / 2) + a * a
    # tighter oracle: first harmonic through the washout, plus the cubic term of the expansion
    w, wh = cfg.omega, cfg.omega_h
    predicted = (a * g1 / 2 + a**3 * EXAMPLE1.derivative(th0, 3) / 16) * w * w / (w * w + wh * wh)
    assert xi_mean == pytest.approx(predicted, rel=0.02)


def test_washout_tracks_constant_output():
    flat = ObjectivePoly([4.0, 0, 0, 0, -1e-300])
    scheme = build_scheme(static_plant(flat), replace(EX1, variant="scheme2", gamma=1.0, a0=0.0))
    wh = scheme.config.omega_h
    t_end = math.ceil(10 / wh)
    for eta0 in (0.0, 3.99):
        traj = run_scheme(scheme, t_end, 0.05, sample_every=10, eta0=eta0)
        gap = np.abs(traj["y"] - traj["eta"])
        # first-order washout: the mismatch decays as exp(-wh t)
        assert np.allclose(gap, (4.0 - eta0) * np.exp(-wh * traj.t), rtol=1e-8)
    assert gap[-1] <= 1e-6


@pytest.mark.parametrize("variant", ["scheme1", "scheme2"])
def test_zero_decay_gain_recovers_constant_amplitude_loop(variant):
    plant = example_plant(EXAMPLE1)
    base = replace(EX1, a0=1.0, theta_hat0=-1.0, gamma=5.0)
    classical = run_scheme(build_scheme(plant, replace(base, variant="classical")), 300.0, 0.05)
    other = run_scheme(build_scheme(plant, replace(base, variant=variant, lambda_prime=0.0)), 300.0, 0.05)
    for col in classical.columns:
        assert np.array_equal(classical[col], other[col]), col


@given(st.sampled_from(["scheme1", "scheme2", "tan2009", "classical"]), st.floats(0.0, 1.0), st.floats(-1.0, 1.5))
@settings(max_examples=12, deadline=None)
def test_amplitude_nonnegative_and_nonincreasing(variant, a0, th0):
    cfg = replace(EX1, variant=variant, a0=a0, theta_hat0=th0, lambda_prime=50.0, gamma=1.0)
    plant = example_plant(EXAMPLE1)
    traj = run_scheme(build_scheme(plant, cfg), 400.0, 0.1, x0=plant.equilibrium(th0), eta0=EXAMPLE1(th0))
    a = traj["a"]
    assert np.all(a >= 0)
    assert np.all(np.diff(a) <= 1e-12)


def test_columns_per_variant():
    plant = example_plant(EXAMPLE1)
    t1 = run_scheme(build_scheme(plant, replace(EX1, variant="scheme1", gamma=5.0)), 10.0, 0.05)
    t2 = run_scheme(build_scheme(plant, replace(EX1, variant="scheme2")), 10.0, 0.05)
    assert t2.columns == ["x1", "x2", "y", "theta_hat", "theta", "xi", "eta", "a"]
    assert t1.columns == t2.columns + ["psi1", "psi2", "psi3", "grad_mag"]
    assert np.allclose(t2["theta"], t2["theta_hat"] + t2["a"] * np.sin(0.1 * t2.t))


def test_measurement_noise_is_seeded():
    plant = example_plant(EXAMPLE1)
    scheme = build_scheme(plant, replace(EX1, variant="scheme1", gamma=5.0))
    runs = [run_scheme(scheme, 50.0, 0.05, noise_rng=np.random.default_rng(s)) for s in (1, 1, 2)]
    assert np.array_equal(runs[0].data, runs[1].data)
    assert not np.array_equal(runs[0]["psi3"], runs[2]["psi3"])


@pytest.mark.parametrize("field, value", [
    ("variant", "nope"), ("omega", 0.0), ("delta", -1.0), ("epsilon", math.inf), ("lambda_prime", -1.0),
    ("gamma", 0.0), ("a0", -0.1), ("theta_hat0", math.nan), ("g", "cube"),
])
def test_config_errors_name_the_field(field, value):
    cfg = replace(EX1, **{"variant": "scheme2", field: value})
    with pytest.raises(ConfigError) as info:
        build_scheme(static_plant(EXAMPLE1), cfg)
    assert info.value.key == field


def test_g_must_vanish_at_zero():
    with pytest.raises(ConfigError):
        build_scheme(static_plant(EXAMPLE1), replace(EX1, g=lambda a: a + 1))


def test_wrong_initial_plant_state_shape():
    scheme = build_scheme(example_plant(EXAMPLE1), EX1)
    with pytest.raises(ConfigError):
        run_scheme(scheme, 1.0, 0.05, x0=[0.0])
