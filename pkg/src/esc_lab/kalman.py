"""Kalman filter that tracks the local gradient of the objective.

The truth model carries psi = (J' sin wt, J' cos wt, J) with dynamics
psi1' = w*psi2, psi2' = -w*psi1, psi3' = 0 and measurement
y = a*psi1 + psi3 + v. The first two components therefore rotate at the
dither frequency and the gradient magnitude is their Euclidean norm.

Prediction uses the exact rotation over each step plus first-order process
noise ``Q*dt``; updates use the Joseph form and are followed by explicit
symmetrisation of the covariance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


_I3 = np.eye(3)


class SingularInnovation(ArithmeticError):
    pass


def _as_cov(value, name: str) -> np.ndarray:
    m = np.asarray(value, dtype=float)
    if m.ndim == 0:
        m = float(m) * np.eye(3)
    if m.shape != (3, 3):
        raise ValueError(f"{name} must be a scalar or a 3x3 matrix")
    if not np.allclose(m, m.T, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    return m


@dataclass(frozen=True)
class KalmanConfig:
    """Noise and initialisation settings.

    ``Q`` and ``P0`` accept a scalar ``q`` meaning ``q * I``. ``psi0=None``
    initialises the estimate at ``(0, 0, y(t0))`` when the run starts.
    """

    Q: np.ndarray = field(default_factory=lambda: 0.01 * np.eye(3))
    r: float = 0.01
    P0: np.ndarray = field(default_factory=lambda: np.eye(3))
    psi0: Optional[tuple[float, float, float]] = None

    def __post_init__(self):
        Q = _as_cov(self.Q, "Q")
        P0 = _as_cov(self.P0, "P0")
        if np.linalg.eigvalsh(Q).min() < -1e-12:
            raise ValueError("Q must be positive semi-definite")
        if np.linalg.eigvalsh(P0).min() <= 0:
            raise ValueError("P0 must be positive definite")
        if not self.r > 0:
            raise ValueError("r must be > 0")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "P0", P0)
        if self.psi0 is not None:
            object.__setattr__(self, "psi0", tuple(float(v) for v in self.psi0))


@dataclass
class KalmanState:
    psi_hat: np.ndarray
    P: np.ndarray
    t: float = 0.0

    @classmethod
    def initial(cls, config: KalmanConfig, y0: float, t0: float = 0.0) -> "KalmanState":
        psi = (0.0, 0.0, float(y0)) if config.psi0 is None else config.psi0
        return cls(np.array(psi, dtype=float), config.P0.copy(), t0)


def rotation(omega: float, dt: float) -> np.ndarray:
    """State transition exp(A*dt) for A = [[0, w, 0], [-w, 0, 0], [0, 0, 0]]."""
    c, s = math.cos(omega * dt), math.sin(omega * dt)
    return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])


def kf_predict(state: KalmanState, omega: float, dt: float, Q, *, phi: Optional[np.ndarray] = None) -> KalmanState:
    """Propagate the estimate over ``dt``.

    ``phi`` may be passed to reuse a precomputed :func:`rotation`.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if phi is None:
        phi = rotation(omega, dt)
    P = phi @ state.P @ phi.T + np.asarray(Q) * dt
    P = 0.5 * (P + P.T)
    return KalmanState(phi @ state.psi_hat, P, state.t + dt)


def kf_update(state: KalmanState, measurement: float, amplitude: float, r: float) -> KalmanState:
    """Measurement update with the time-varying row H = [a, 0, 1]."""
    if not r > 0:
        raise ValueError("r must be > 0")
    H = np.array([amplitude, 0.0, 1.0])
    PH = state.P @ H
    S = H @ PH + r
    if not S > 0 or not math.isfinite(S):
        raise SingularInnovation(f"innovation variance {S!r} is not positive")
    K = PH / S
    innovation = measurement - H @ state.psi_hat
    psi = state.psi_hat + K * innovation
    IKH = _I3 - K[:, None] * H[None, :]
    P = IKH @ state.P @ IKH.T + r * (K[:, None] * K[None, :])
    P = 0.5 * (P + P.T)
    return KalmanState(psi, P, state.t)


def gradient_magnitude(state: KalmanState) -> float:
    return math.hypot(state.psi_hat[0], state.psi_hat[1])
