"""Post-hoc analysis of closed-loop trajectories."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from .plants import ObjectivePoly
from .sim_core import Trajectory

DEFAULT_BAND = 0.05


class WindowTooLong(ValueError):
    pass


class MissingColumns(KeyError):
    pass


def period_mean(t: np.ndarray, signal: np.ndarray, window: float) -> np.ndarray:
    """Moving average over ``window`` seconds.

    The window is centred where it fits and slid inward at both ends, so every
    output value averages a full window (or the whole signal if shorter).
    """
    signal = np.asarray(signal, dtype=float)
    if window <= 0 or len(t) < 2:
        return signal.copy()
    dt = float(t[1] - t[0])
    w = int(round(window / dt))
    if w <= 1:
        return signal.copy()
    n = signal.size
    if w >= n:
        return np.full(n, signal.mean())
    c = np.concatenate([[0.0], np.cumsum(signal)])
    lo = np.clip(np.arange(n) - w // 2, 0, n - w)
    return (c[lo + w] - c[lo]) / w


def convergence_time(traj: Trajectory, theta_star: float, band: float = DEFAULT_BAND,
                     *, column: str = "theta_hat", average_over: Optional[float] = None) -> float:
    """First time after which the signal stays within ``band`` of ``theta_star``.

    With ``average_over`` set, the signal is first replaced by its centred
    moving average over that many seconds (one dither period is the natural
    choice; it strips the dither-rate ripple that a gradient-blind loop
    leaves on ``theta_hat``). Returns ``inf`` if the band is never held.
    """
    if not band > 0:
        raise ValueError("band must be positive")
    t = traj.t
    x = traj[column]
    if average_over:
        x = period_mean(t, x, average_over)
    outside = np.flatnonzero(np.abs(x - theta_star) > band)
    if outside.size == 0:
        return float(t[0])
    last = outside[-1]
    if last == len(t) - 1:
        return math.inf
    return float(t[last + 1])


def trailing_window(traj: Trajectory, omega: Optional[float] = None) -> float:
    """Last 10% of the run or 20 dither periods, whichever is longer."""
    span = float(traj.t[-1] - traj.t[0])
    periods = 20 * 2 * math.pi / omega if omega else 0.0
    return max(0.1 * span, periods)


def oscillation_amplitude(t: np.ndarray, signal: np.ndarray, window: float) -> float:
    """Half the peak-to-peak excursion of ``signal`` over the trailing ``window``."""
    t = np.asarray(t, dtype=float)
    span = float(t[-1] - t[0])
    if window >= span:
        raise WindowTooLong(f"window {window} s is not shorter than the trajectory span {span} s")
    tail = np.asarray(signal)[t >= t[-1] - window]
    return 0.5 * float(tail.max() - tail.min())


@dataclass
class GradientError:
    t: np.ndarray
    error: np.ndarray

    def settle_time(self, threshold: float) -> float:
        above = np.flatnonzero(self.error > threshold)
        if above.size == 0:
            return float(self.t[0])
        if above[-1] == len(self.t) - 1:
            return math.inf
        return float(self.t[above[-1] + 1])


def gradient_error_series(traj: Trajectory, objective: ObjectivePoly) -> GradientError:
    """| |J'(theta_hat)| - |J'_estimate| | along a scheme-1 trajectory."""
    if "grad_mag" not in traj:
        raise MissingColumns("trajectory has no gradient estimate (not a scheme1 run)")
    true = np.abs(objective.derivative(traj["theta_hat"], 1))
    return GradientError(traj.t.copy(), np.abs(true - traj["grad_mag"]))


def amplitude_rate(traj: Trajectory) -> np.ndarray:
    """Finite-difference estimate of da/dt on the sampling grid."""
    return np.gradient(traj["a"], traj.t)


def decay_ratio(traj: Trajectory, lam: float) -> np.ndarray:
    """|da/dt| / (lam * a): 1 means the undamped rate, 0 means decay seized."""
    a = traj["a"]
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.abs(amplitude_rate(traj)) / (lam * a)


@dataclass
class RunMetrics:
    converge_time: float
    final_theta_error_pct: float
    ss_osc_amplitude_theta_hat: float
    ss_osc_amplitude_y: float
    final_amplitude: float
    final_theta_hat: float
    final_y: float
    grad_error_settle_time: float = math.nan

    @classmethod
    def header(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def row(self) -> list[float]:
        return [getattr(self, name) for name in self.header()]

    def summary(self) -> str:
        lines = []
        for name in self.header():
            lines.append(f"  {name:28s} {getattr(self, name):.6g}")
        return "\n".join(lines)


def compute_metrics(traj: Trajectory, theta_star: float, omega: float, *,
                    band: float = DEFAULT_BAND, objective: Optional[ObjectivePoly] = None,
                    grad_threshold: float = 0.2) -> RunMetrics:
    period = 2 * math.pi / omega
    window = trailing_window(traj, omega)
    theta_hat = traj["theta_hat"]
    grad_settle = math.nan

    def osc(signal):
        try:
            return oscillation_amplitude(traj.t, signal, window)
        except WindowTooLong:
            return math.nan  # run shorter than the steady-state window

    if objective is not None and "grad_mag" in traj:
        grad_settle = gradient_error_series(traj, objective).settle_time(grad_threshold)
    return RunMetrics(
        converge_time=convergence_time(traj, theta_star, band, average_over=period),
        final_theta_error_pct=100.0 * abs(theta_hat[-1] - theta_star) / abs(theta_star) if theta_star else math.nan,
        ss_osc_amplitude_theta_hat=osc(theta_hat),
        ss_osc_amplitude_y=osc(traj["y"]),
        final_amplitude=float(traj["a"][-1]),
        final_theta_hat=float(theta_hat[-1]),
        final_y=float(traj["y"][-1]),
        grad_error_settle_time=grad_settle,
    )
