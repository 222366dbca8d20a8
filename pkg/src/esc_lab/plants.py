"""Plant models, quartic objectives and their analytic oracles."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

# Coefficients [c0, c1, c2, c3, c4] of the two benchmark objectives.
EXAMPLE1_COEFFS = (10.0, 0.0, 5.0 / 6.0, 8.0 / 15.0, -1.0)
EXAMPLE2_COEFFS = (-4.0, -3.0, 20.0, -1.0, -1.0)


class DegenerateRoot(ValueError):
    """A stationary point where the second derivative vanishes."""


@dataclass(frozen=True)
class ObjectivePoly:
    """Polynomial J(theta) = c0 + c1*theta + ... + c4*theta**4.

    The quartic coefficient must be negative so that a global maximum exists.
    """

    coeffs: tuple[float, float, float, float, float]

    def __init__(self, coeffs: Sequence[float]):
        c = [float(v) for v in coeffs]
        if len(c) > 5:
            raise ValueError("objective degree must be <= 4")
        c = c + [0.0] * (5 - len(c))
        if not all(math.isfinite(v) for v in c):
            raise ValueError("objective coefficients must be finite")
        if not c[4] < 0:
            raise ValueError("quartic coefficient must be negative")
        object.__setattr__(self, "coeffs", tuple(c))

    def __call__(self, theta):
        c0, c1, c2, c3, c4 = self.coeffs
        return (((c4 * theta + c3) * theta + c2) * theta + c1) * theta + c0

    def derivative(self, theta, order: int = 1):
        c = list(self.coeffs)
        for _ in range(order):
            c = [i * c[i] for i in range(1, len(c))]
        acc = 0.0 * theta
        for coef in reversed(c):
            acc = acc * theta + coef
        return acc

    def tolist(self) -> list[float]:
        return list(self.coeffs)


EXAMPLE1 = ObjectivePoly(EXAMPLE1_COEFFS)
EXAMPLE2 = ObjectivePoly(EXAMPLE2_COEFFS)


@dataclass(frozen=True)
class PlantModel:
    """SISO plant already closed by its stabilising feedback u = alpha(x, theta).

    ``deriv(x, theta)`` returns the state derivative and ``output(x, theta)``
    the measured output. Dynamic plants ignore ``theta`` in ``output``; the
    static plant (``n == 0``) returns the objective at ``theta`` directly.
    """

    n: int
    deriv: Callable[[np.ndarray, float], np.ndarray]
    output: Callable[[np.ndarray, float], float]
    name: str
    equilibrium: Optional[Callable[[float], np.ndarray]] = None
    objective: Optional[ObjectivePoly] = None


def example_plant(objective: ObjectivePoly) -> PlantModel:
    """Two-state benchmark plant with output objective(x1 + 3*x2).

    Open loop x1' = -x1 + x2, x2' = x2 + u, closed with
    u = -x1 - 4*x2 + theta. The closed-loop matrix [[-1, 1], [-1, -3]] has a
    double eigenvalue at -2 and the equilibrium is x1 = x2 = theta/4.
    """

    def deriv(x, theta):
        x1, x2 = x[0], x[1]
        u = -x1 - 4.0 * x2 + theta
        return np.array([-x1 + x2, x2 + u])

    def output(x, theta=None):
        return objective(x[0] + 3.0 * x[1])

    def equilibrium(theta):
        return np.array([theta / 4.0, theta / 4.0])

    return PlantModel(2, deriv, output, "example", equilibrium, objective)


_EMPTY = np.zeros(0)


def static_plant(objective: ObjectivePoly) -> PlantModel:
    """Zero-state plant whose output is the objective evaluated at theta."""

    def deriv(x, theta):
        return _EMPTY

    def output(x, theta):
        return objective(theta)

    return PlantModel(0, deriv, output, "static", lambda theta: _EMPTY, objective)


def objective_gradient(objective: ObjectivePoly, theta):
    return objective.derivative(theta, 1)


def objective_second_third_derivative(objective: ObjectivePoly, theta):
    """Return (J'', J''') at ``theta``."""
    return objective.derivative(theta, 2), objective.derivative(theta, 3)


def _newton_polish(p: np.ndarray, dp: np.ndarray, x: float, tol: float = 1e-10) -> float:
    # p, dp: coefficient arrays in increasing order
    for _ in range(100):
        fx = np.polynomial.polynomial.polyval(x, p)
        if abs(fx) <= tol:
            break
        dfx = np.polynomial.polynomial.polyval(x, dp)
        if dfx == 0:
            break
        step = fx / dfx
        x -= step
        if abs(step) <= 1e-15 * max(1.0, abs(x)):
            break
    return x


def _cubic_real_roots(a3: float, a2: float, a1: float, a0: float) -> list[float]:
    """Real roots of a3*t^3 + a2*t^2 + a1*t + a0 by bisection, deflation and Newton."""
    p = np.array([a0, a1, a2, a3])
    dp = np.array([a1, 2 * a2, 3 * a3])
    # Cauchy bound brackets every real root.
    bound = 1.0 + max(abs(a0), abs(a1), abs(a2)) / abs(a3)
    lo, hi = -bound, bound
    flo = np.polynomial.polynomial.polyval(lo, p)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = np.polynomial.polynomial.polyval(mid, p)
        if fm == 0:
            lo = hi = mid
            break
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi = mid
    r1 = _newton_polish(p, dp, 0.5 * (lo + hi))
    # Deflate: a3 t^2 + b1 t + b0
    b1 = a2 + a3 * r1
    b0 = a1 + b1 * r1
    disc = b1 * b1 - 4.0 * a3 * b0
    roots = [r1]
    scale = max(1.0, b1 * b1, abs(4.0 * a3 * b0))
    if disc >= -1e-12 * scale:
        sq = math.sqrt(max(disc, 0.0))
        # numerically stable quadratic formula
        q = -0.5 * (b1 + math.copysign(sq, b1)) if b1 != 0 else -0.5 * sq
        cands = []
        if q != 0:
            cands.append(q / a3)
            cands.append(b0 / q)
        else:
            cands.extend([0.0, 0.0])
        roots.extend(_newton_polish(p, dp, c) for c in cands)
    return sorted(roots)


@dataclass(frozen=True)
class StationaryPoint:
    theta: float
    kind: str  # "max", "min" or "degenerate"
    degenerate: bool = False


def stationary_points(
    objective: ObjectivePoly, merge_tol: float = 1e-6, strict: bool = False
) -> list[StationaryPoint]:
    """Real roots of J' classified by the sign of J''.

    Repeated roots are merged. A root where J'' vanishes is reported with
    ``kind="degenerate"`` and ``degenerate=True`` rather than classified;
    with ``strict=True`` it raises :class:`DegenerateRoot` instead.
    """
    c0, c1, c2, c3, c4 = objective.coeffs
    if not c4 < 0:
        raise ValueError("quartic coefficient must be negative")
    raw = _cubic_real_roots(4 * c4, 3 * c3, 2 * c2, c1)
    merged: list[float] = []
    for r in raw:
        if merged and abs(r - merged[-1]) <= merge_tol * max(1.0, abs(r)):
            continue
        merged.append(r)
    out = []
    for r in merged:
        curv = objective.derivative(r, 2)
        if abs(curv) <= 1e-9 * max(1.0, max(abs(c) for c in objective.coeffs)):
            if strict:
                raise DegenerateRoot(f"J'' vanishes at stationary point {r!r}")
            out.append(StationaryPoint(r, "degenerate", True))
        else:
            out.append(StationaryPoint(r, "max" if curv < 0 else "min"))
    return sorted(out, key=lambda s: s.theta, reverse=True)


def global_maximizer(objective: ObjectivePoly) -> float:
    """Location of the global maximum; an oracle used only by metrics and tests."""
    cands = [s.theta for s in stationary_points(objective) if s.kind != "min"]
    return max(cands, key=objective)
