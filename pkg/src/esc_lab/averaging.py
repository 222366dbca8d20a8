"""Averaged (reduced) loop dynamics and their periodic solutions.

With the plant frozen on its equilibrium manifold and the amplitude fixed
at ``a0``, the loop in error coordinates and slow time ``tau = w*t`` reads::

    theta~' = delta*K'*xi
    xi'     = -delta*wL'*xi + delta*wL'*(nu(theta~ + a0 sin tau) - eta~)*sin tau
    eta~'   = -delta*wH'*eta~ + delta*wH'*nu(theta~ + a0 sin tau)

where ``nu(s) = J(theta* + s) - J(theta*)``. The solution settles onto a
2*pi-periodic orbit whose mean offsets are, to leading order,
``-nu'''(0)/(8 nu''(0)) * a0**2`` for theta~, zero for xi and
``nu''(0)/4 * a0**2`` for eta~. This module finds that orbit by brute-force
settling and fits the a0**2 coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .esc import SchemeConfig
from .plants import ObjectivePoly
from .sim_core import simulate

TWO_PI = 2.0 * math.pi


class NotStationary(ValueError):
    pass


class NoConvergence(RuntimeError):
    pass


@dataclass
class AveragedState:
    theta_tilde: float
    xi: float
    eta_tilde: float
    tau: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.theta_tilde, self.xi, self.eta_tilde])


@dataclass
class PeriodicSolution:
    theta_p_mean: float
    xi_p_mean: float
    eta_p_mean: float
    period: float
    residual: float
    periods: int
    residual_history: list[float] = field(default_factory=list, repr=False)


def _check_stationary(objective: ObjectivePoly, theta_star: float) -> None:
    slope = objective.derivative(theta_star, 1)
    if abs(slope) > 1e-6:
        raise NotStationary(f"|J'(theta*)| = {abs(slope):.3g} > 1e-6 at theta* = {theta_star!r}")


def nu(objective: ObjectivePoly, theta_star: float, s):
    """Objective shifted so that its stationary point sits at the origin."""
    _check_stationary(objective, theta_star)
    return objective(s + theta_star) - objective(theta_star)


def nu_derivatives(objective: ObjectivePoly, theta_star: float) -> tuple[float, float]:
    """(nu''(0), nu'''(0)), i.e. J'' and J''' at theta*."""
    _check_stationary(objective, theta_star)
    return objective.derivative(theta_star, 2), objective.derivative(theta_star, 3)


def predicted_coefficients(objective: ObjectivePoly, theta_star: float) -> tuple[float, float]:
    """Leading a0**2 coefficients of the theta~ and eta~ mean offsets."""
    d2, d3 = nu_derivatives(objective, theta_star)
    return -d3 / (8.0 * d2), d2 / 4.0


def _averaged_rhs(cfg: SchemeConfig, a0: float, objective: ObjectivePoly, theta_star: float):
    j_star = objective(theta_star)
    dK = cfg.delta * cfg.K_prime
    dL = cfg.delta * cfg.omega_L_prime
    dH = cfg.delta * cfg.omega_H_prime

    def rhs(tau, z):
        th, xi, eta = z.tolist()
        s = math.sin(tau)
        v = objective(th + a0 * s + theta_star) - j_star
        return np.array([dK * xi, dL * ((v - eta) * s - xi), dH * (v - eta)])

    return rhs


def averaged_derivative(state: AveragedState, cfg: SchemeConfig, a0: float,
                        objective: ObjectivePoly, theta_star: float) -> tuple[float, float, float, float]:
    """Slow-time derivative (theta~', xi', eta~', tau') of the averaged system."""
    _check_stationary(objective, theta_star)
    rhs = _averaged_rhs(cfg, a0, objective, theta_star)
    d = rhs(state.tau, state.as_array())
    return float(d[0]), float(d[1]), float(d[2]), 1.0


def find_periodic_solution(
    cfg: SchemeConfig,
    a0: float,
    objective: ObjectivePoly,
    theta_star: float,
    tol: float = 1e-10,
    *,
    steps_per_period: int = 128,
    max_periods: int = 20000,
    z0: Optional[Sequence[float]] = None,
) -> PeriodicSolution:
    """Settle the averaged system onto its periodic orbit.

    Integrates one slow period (2*pi in tau) at a time until the state at
    successive period boundaries moves by at most ``tol`` (max norm), then
    returns the per-period means of the last period.

    Raises:
        NoConvergence: if ``max_periods`` periods pass without settling.
    """
    _check_stationary(objective, theta_star)
    rhs = _averaged_rhs(cfg, a0, objective, theta_star)
    z = np.zeros(3) if z0 is None else np.asarray(z0, dtype=float)
    h = TWO_PI / steps_per_period
    history: list[float] = []
    for k in range(max_periods):
        # tau restarts at 0 each period; the system is 2*pi-periodic in tau
        traj = simulate(rhs, z, 0.0, TWO_PI, h)
        z_next = traj.data[-1]
        residual = float(np.max(np.abs(z_next - z)))
        history.append(residual)
        z = z_next
        if residual <= tol:
            # rectangle rule over one period is exact for trigonometric content below Nyquist
            means = traj.data[:-1].mean(axis=0)
            return PeriodicSolution(float(means[0]), float(means[1]), float(means[2]),
                                    TWO_PI / cfg.omega, residual, k + 1, history)
    raise NoConvergence(f"no periodic orbit within {max_periods} periods (last residual {history[-1]:.3g})")


@dataclass
class OffsetReport:
    rows: list[tuple[float, float, float, float, float]]
    theta_coeff: float
    eta_coeff: float
    theta_pred: float
    eta_pred: float
    rel_tol: float

    @property
    def theta_rel_error(self) -> float:
        return abs(self.theta_coeff - self.theta_pred) / abs(self.theta_pred)

    @property
    def eta_rel_error(self) -> float:
        return abs(self.eta_coeff - self.eta_pred) / abs(self.eta_pred)

    @property
    def passed(self) -> bool:
        return self.theta_rel_error <= self.rel_tol and self.eta_rel_error <= self.rel_tol

    def csv_lines(self) -> list[str]:
        lines = ["a0,theta_mean,eta_mean,xi_mean,residual"]
        lines += [",".join(f"{v:.17g}" for v in row) for row in self.rows]
        lines.append(
            f"# fit theta_coeff={self.theta_coeff:.17g} (pred {self.theta_pred:.17g}), "
            f"eta_coeff={self.eta_coeff:.17g} (pred {self.eta_pred:.17g}), "
            f"passed={self.passed}"
        )
        return lines


def fit_quadratic_coefficient(a0s: Sequence[float], means: Sequence[float]) -> float:
    """Least-squares fit of means ~ c2*a0^2 + c3*a0^3; returns c2.

    With a single amplitude the cubic term is dropped.
    """
    a = np.asarray(a0s, dtype=float)
    m = np.asarray(means, dtype=float)
    if a.size == 1:
        return float(m[0] / a[0] ** 2)
    A = np.column_stack([a**2, a**3])
    coef, *_ = np.linalg.lstsq(A, m, rcond=None)
    return float(coef[0])


def proposition1_check(
    cfg: SchemeConfig,
    a0_list: Sequence[float],
    objective: ObjectivePoly,
    theta_star: float,
    *,
    tol: float = 1e-10,
    rel_tol: float = 0.15,
    steps_per_period: int = 128,
) -> OffsetReport:
    """Compare fitted a0**2 offset coefficients with their analytic values."""
    rows = []
    for a0 in a0_list:
        sol = find_periodic_solution(cfg, a0, objective, theta_star, tol, steps_per_period=steps_per_period)
        rows.append((float(a0), sol.theta_p_mean, sol.eta_p_mean, sol.xi_p_mean, sol.residual))
    a0s = [r[0] for r in rows]
    theta_c = fit_quadratic_coefficient(a0s, [r[1] for r in rows])
    eta_c = fit_quadratic_coefficient(a0s, [r[2] for r in rows])
    theta_p, eta_p = predicted_coefficients(objective, theta_star)
    return OffsetReport(rows, theta_c, eta_c, theta_p, eta_p, rel_tol)
