"""Fixed-step RK4 integration of composed continuous-time systems.

Every closed loop in the package is advanced by :func:`simulate`. Time is
always rebuilt from the step index (``t = t0 + k*dt``) so that runs of
millions of steps do not accumulate rounding drift, and any non-finite
value aborts the run instead of being clamped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

SystemFn = Callable[[float, np.ndarray], np.ndarray]


class NonFiniteState(FloatingPointError):
    """Raised when a derivative or an integrated state stops being finite."""

    def __init__(self, message: str, step_index: Optional[int] = None, t: Optional[float] = None):
        self.step_index = step_index
        self.t = t
        where = ""
        if step_index is not None:
            where = f" at step {step_index} (t={t!r})"
        super().__init__(message + where)


@dataclass(frozen=True)
class SimClock:
    t0: float
    dt: float
    step_index: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt!r}")

    @property
    def t(self) -> float:
        return self.t0 + self.step_index * self.dt

    def advance(self) -> "SimClock":
        return SimClock(self.t0, self.dt, self.step_index + 1)


@dataclass
class Trajectory:
    """Uniformly sampled time series with named columns.

    ``data`` is a 2-D array with one row per sample; ``columns`` names its
    columns. Individual signals are read with ``traj["theta_hat"]``.
    """

    t: np.ndarray
    data: np.ndarray
    columns: list[str]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2 or self.data.shape[0] != self.t.shape[0]:
            raise ValueError("data must be 2-D with one row per time stamp")
        if self.data.shape[1] != len(self.columns):
            raise ValueError("column count does not match data width")
        self._index = {name: i for i, name in enumerate(self.columns)}

    def __getitem__(self, name: str) -> np.ndarray:
        if name == "t":
            return self.t
        return self.data[:, self._index[name]]

    def __contains__(self, name: str) -> bool:
        return name == "t" or name in self._index

    def __len__(self) -> int:
        return self.t.shape[0]

    @property
    def states(self) -> np.ndarray:
        return self.data


def _check_finite(values: np.ndarray, what: str, step_index=None, t=None):
    if not np.all(np.isfinite(values)):
        raise NonFiniteState(f"non-finite {what}", step_index, t)


def rk4_step(sys: SystemFn, t: float, state, dt: float) -> np.ndarray:
    """Advance ``state`` by one classical Runge-Kutta step of size ``dt``.

    Raises:
        NonFiniteState: if any stage derivative or the result is non-finite.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    y = np.asarray(state, dtype=float)
    half = 0.5 * dt
    k1 = np.asarray(sys(t, y), dtype=float)
    k2 = np.asarray(sys(t + half, y + half * k1), dtype=float)
    k3 = np.asarray(sys(t + half, y + half * k2), dtype=float)
    k4 = np.asarray(sys(t + dt, y + dt * k3), dtype=float)
    out = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    # a finite sum implies finite entries; only then is the elementwise scan skipped
    if not math.isfinite(float(out.sum())):
        _check_finite(np.concatenate([k1, k2, k3, k4]), "derivative")
        _check_finite(out, "state")
    return out


def step_count(t0: float, t_end: float, dt: float) -> int:
    """Number of fixed steps covering [t0, t_end]; the span must be a multiple of dt."""
    if not t_end > t0:
        raise ValueError(f"t_end ({t_end!r}) must exceed t0 ({t0!r})")
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    span = t_end - t0
    n = int(round(span / dt))
    if n < 1 or abs(n * dt - span) > 1e-9 * max(1.0, span):
        raise ValueError(f"t_end - t0 = {span!r} is not an integer multiple of dt = {dt!r}")
    return n


def simulate(
    sys: SystemFn,
    x0: Sequence[float],
    t0: float,
    t_end: float,
    dt: float,
    sample_every: int = 1,
    *,
    after_step: Optional[Callable[[int, float, np.ndarray], Optional[np.ndarray]]] = None,
    observe: Optional[Callable[[float, np.ndarray], Sequence[float]]] = None,
    columns: Optional[list[str]] = None,
) -> Trajectory:
    """Integrate ``sys`` from ``x0`` with fixed RK4 steps and sample the result.

    Args:
        sys: right-hand side ``f(t, x)``.
        x0: initial state.
        t0, t_end: integration interval; ``t_end - t0`` must be a multiple of ``dt``.
        dt: step size.
        sample_every: record every this many steps. The initial and final
            states are always recorded.
        after_step: optional hook ``(k, t_k, x_k)`` called after step ``k``
            lands at ``t_k``. It may return a replacement state; this is how
            discrete-time components (the Kalman filter) are interleaved.
        observe: optional map ``(t, x) -> row`` producing the recorded row.
            Defaults to the raw state.
        columns: names for the recorded row entries.

    Returns:
        A :class:`Trajectory` with monotone time stamps.

    Raises:
        NonFiniteState: carrying the index of the failing step.
    """
    if sample_every < 1:
        raise ValueError("sample_every must be >= 1")
    n_steps = step_count(t0, t_end, dt)
    x = np.array(x0, dtype=float)
    _check_finite(x, "initial state", 0, t0)

    record = observe if observe is not None else (lambda _t, s: s)
    n_rows = n_steps // sample_every + 1 + (1 if n_steps % sample_every else 0)
    first = np.asarray(record(t0, x), dtype=float)
    rows = np.empty((n_rows, first.shape[0]))
    times = np.empty(n_rows)
    rows[0] = first
    times[0] = t0
    r = 1
    for k in range(1, n_steps + 1):
        t_prev = t0 + (k - 1) * dt
        try:
            x = rk4_step(sys, t_prev, x, dt)
        except NonFiniteState as exc:
            raise NonFiniteState("integration diverged", k, t_prev + dt) from exc
        t_k = t0 + k * dt
        if after_step is not None:
            replaced = after_step(k, t_k, x)
            if replaced is not None:
                x = replaced
        if k % sample_every == 0 or k == n_steps:
            times[r] = t_k
            rows[r] = record(t_k, x)
            r += 1
    if columns is None:
        columns = [f"s{i}" for i in range(rows.shape[1])]
    return Trajectory(times, rows, list(columns))


def default_dt(omega: float) -> float:
    """At least 200 steps per dither period, capped at 0.01 s."""
    return min(0.01, 2.0 * math.pi / (omega * 200.0))
