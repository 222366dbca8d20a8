"""Perturbation-based extremum seeking loops.

A loop injects ``a*sin(w t)`` on top of the nominal reference ``theta_hat``,
removes the DC part of the plant output with a first-order washout
(state ``eta``), demodulates with ``sin(w t)``, low-pass filters the result
(state ``xi``) and integrates it into ``theta_hat``. Four variants share
this layout:

``scheme1``
    amplitude decays at a rate damped by ``exp(-gamma*|J'|)``, with ``|J'|``
    taken from a Kalman filter running alongside the loop.
``scheme2``
    same law driven by ``|xi|`` instead of the filter estimate.
``classical``
    constant amplitude; the demodulator is also scaled by ``a``.
``tan2009``
    no washout/low-pass: ``theta_hat' = w*delta*y*sin(w t)`` and
    ``a' = -lam*g(a)``.

The controller never sees the extremiser; simulation runs in the original
coordinates (``theta_hat``, ``xi``, ``eta``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

import numpy as np

from .amplitude import AdaptationLaw, amplitude_derivative, resolve_g
from .kalman import KalmanConfig, KalmanState, gradient_magnitude, kf_predict, kf_update, rotation
from .plants import PlantModel
from .sim_core import Trajectory, simulate

VARIANTS = ("scheme1", "scheme2", "classical", "tan2009")


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending field."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


@dataclass(frozen=True)
class SchemeConfig:
    """Loop gains in scaled form.

    Physical gains follow from the scale parameters: the washout and
    low-pass corners are ``w*delta*omega_H_prime`` and
    ``w*delta*omega_L_prime``, the integrator gain is ``w*delta*K_prime`` and
    the amplitude decay gain is ``w*delta*epsilon*lambda_prime``.
    """

    variant: str = "scheme2"
    omega: float = 0.1
    delta: float = 0.02
    epsilon: float = 0.1
    omega_H_prime: float = 15.0
    omega_L_prime: float = 5.0
    K_prime: float = 15.0
    lambda_prime: float = 1.0
    gamma: float = 1.0
    a0: float = 1.0
    g: Union[str, Callable[[float], float]] = "identity"
    theta_hat0: float = 0.0
    kf: Optional[KalmanConfig] = None

    @property
    def omega_h(self) -> float:
        return self.omega * self.delta * self.omega_H_prime

    @property
    def omega_l(self) -> float:
        return self.omega * self.delta * self.omega_L_prime

    @property
    def k(self) -> float:
        return self.omega * self.delta * self.K_prime

    @property
    def lam(self) -> float:
        return self.omega * self.delta * self.epsilon * self.lambda_prime

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.omega

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError("variant", f"must be one of {VARIANTS}, got {self.variant!r}")
        for key in ("omega", "delta", "epsilon", "omega_H_prime", "omega_L_prime", "K_prime"):
            value = getattr(self, key)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(key, f"must be a finite positive number, got {value!r}")
        if not (math.isfinite(self.lambda_prime) and self.lambda_prime >= 0):
            raise ConfigError("lambda_prime", "must be >= 0")
        if self.variant in ("scheme1", "scheme2") and not self.gamma > 0:
            raise ConfigError("gamma", "must be > 0 for the gradient-driven schemes")
        if not (math.isfinite(self.a0) and self.a0 >= 0):
            raise ConfigError("a0", "must be >= 0")
        if not math.isfinite(self.theta_hat0):
            raise ConfigError("theta_hat0", "must be finite")
        try:
            g = resolve_g(self.g)
        except ValueError as exc:
            raise ConfigError("g", str(exc)) from None
        if g(0.0) != 0.0:
            raise ConfigError("g", "must vanish at zero")

    def adaptation_law(self) -> AdaptationLaw:
        g = resolve_g(self.g)
        if self.variant == "classical":
            return AdaptationLaw("constant", 0.0, 0.0, g)
        if self.variant == "tan2009":
            return AdaptationLaw("tan2009", self.lam, 0.0, g)
        return AdaptationLaw(self.variant, self.lam, self.gamma, g)


@dataclass
class ControllerState:
    theta_hat: float
    xi: float
    eta: float
    amplitude: float


@dataclass(frozen=True)
class Scheme:
    plant: PlantModel
    config: SchemeConfig
    law: AdaptationLaw = field(repr=False)

    @property
    def n(self) -> int:
        return self.plant.n

    @property
    def layout(self) -> list[str]:
        return [f"x{i + 1}" for i in range(self.n)] + ["theta_hat", "xi", "eta", "a"]

    @property
    def uses_kf(self) -> bool:
        return self.config.variant == "scheme1"

    def controller(self, state) -> ControllerState:
        n = self.n
        return ControllerState(float(state[n]), float(state[n + 1]), float(state[n + 2]), float(state[n + 3]))

    def pack(self, x, ctrl: ControllerState) -> np.ndarray:
        return np.concatenate([np.asarray(x, dtype=float), [ctrl.theta_hat, ctrl.xi, ctrl.eta, ctrl.amplitude]])


def dither(t: float, amplitude: float, omega: float) -> float:
    return amplitude * math.sin(omega * t)


def loop_derivatives(scheme: Scheme, t: float, state, grad_measure: float = 0.0) -> np.ndarray:
    """Stacked derivative of (x, theta_hat, xi, eta, a).

    ``grad_measure`` is the Kalman estimate of ``|J'|`` for scheme1 and
    ``|xi|`` for scheme2; the other variants ignore it.
    """
    cfg = scheme.config
    n = scheme.plant.n
    x = state[:n]
    theta_hat, xi, eta, a = state[n:].tolist()
    s = math.sin(cfg.omega * t)
    theta = theta_hat + a * s
    dx = scheme.plant.deriv(x, theta)
    y = scheme.plant.output(x, theta)
    variant = cfg.variant
    if variant == "tan2009":
        d_theta = cfg.omega * cfg.delta * y * s
        d_xi = 0.0
        d_eta = 0.0
    else:
        demod = a * s if variant == "classical" else s
        d_theta = cfg.k * xi
        d_xi = cfg.omega_l * ((y - eta) * demod - xi)
        d_eta = cfg.omega_h * (y - eta)
    d_a = amplitude_derivative(scheme.law, a, grad_measure)
    out = np.empty(n + 4)
    out[:n] = dx
    out[n] = d_theta
    out[n + 1] = d_xi
    out[n + 2] = d_eta
    out[n + 3] = d_a
    return out


def build_scheme(plant: PlantModel, config: SchemeConfig) -> Scheme:
    """Validate ``config`` and compose it with ``plant``.

    Raises:
        ConfigError: naming the violated field.
    """
    config.validate()
    if config.variant == "scheme1" and config.kf is None:
        config = replace(config, kf=KalmanConfig())
    return Scheme(plant, config, config.adaptation_law())


def run_scheme(
    scheme: Scheme,
    t_end: float,
    dt: float,
    *,
    t0: float = 0.0,
    sample_every: int = 1,
    x0=None,
    xi0: float = 0.0,
    eta0: float = 0.0,
    noise_rng: Optional[np.random.Generator] = None,
) -> Trajectory:
    """Simulate the closed loop and return all loop signals.

    The plant starts at ``x0`` (zeros by default) and the filter states at
    ``xi0``/``eta0``. For scheme1 the Kalman filter is predicted and updated
    once per integration step with the output at the new step; its gradient
    magnitude is held constant over the next step. ``noise_rng`` enables
    additive measurement noise of variance ``r`` on the filter input.

    Columns: ``x1..xn, y, theta_hat, theta, xi, eta, a`` and, for scheme1,
    ``psi1, psi2, psi3, grad_mag``.
    """
    cfg = scheme.config
    n = scheme.n
    x_init = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    if x_init.shape != (n,):
        raise ConfigError("x0", f"expected {n} plant states, got shape {x_init.shape}")
    state0 = scheme.pack(x_init, ControllerState(cfg.theta_hat0, xi0, eta0, cfg.a0))

    omega = cfg.omega
    plant = scheme.plant

    def measured_output(t, state):
        theta = state[n] + state[n + 3] * math.sin(omega * t)
        return plant.output(state[:n], theta), theta

    base_cols = [f"x{i + 1}" for i in range(n)] + ["y", "theta_hat", "theta", "xi", "eta", "a"]

    if cfg.variant == "scheme2":

        def rhs(t, state):
            return loop_derivatives(scheme, t, state, abs(state[n + 1]))

    elif cfg.variant != "scheme1":

        def rhs(t, state):
            return loop_derivatives(scheme, t, state, 0.0)

    if not scheme.uses_kf:

        def observe(t, state):
            y, theta = measured_output(t, state)
            return [*state[:n], y, state[n], theta, state[n + 1], state[n + 2], state[n + 3]]

        traj = simulate(rhs, state0, t0, t_end, dt, sample_every, observe=observe, columns=base_cols)
        traj.meta.update(variant=cfg.variant, omega=omega)
        return traj

    kcfg = cfg.kf
    y0, _ = measured_output(t0, state0)
    kf = {"state": KalmanState.initial(kcfg, y0, t0)}
    kf["gm"] = gradient_magnitude(kf["state"])
    phi = rotation(omega, dt)
    Q, r = kcfg.Q, kcfg.r

    def rhs(t, state):
        return loop_derivatives(scheme, t, state, kf["gm"])

    def after_step(k, t, state):
        y, _ = measured_output(t, state)
        if noise_rng is not None:
            y = y + noise_rng.normal(0.0, math.sqrt(r))
        ks = kf_predict(kf["state"], omega, dt, Q, phi=phi)
        ks = kf_update(ks, y, state[n + 3], r)
        kf["state"] = ks
        kf["gm"] = gradient_magnitude(ks)
        return None

    def observe(t, state):
        y, theta = measured_output(t, state)
        psi = kf["state"].psi_hat
        return [*state[:n], y, state[n], theta, state[n + 1], state[n + 2], state[n + 3],
                psi[0], psi[1], psi[2], kf["gm"]]

    traj = simulate(rhs, state0, t0, t_end, dt, sample_every, after_step=after_step, observe=observe,
                    columns=base_cols + ["psi1", "psi2", "psi3", "grad_mag"])
    traj.meta.update(variant=cfg.variant, omega=omega)
    return traj
