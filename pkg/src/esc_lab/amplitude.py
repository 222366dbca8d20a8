"""Excitation-amplitude adaptation laws.

Both proposed laws slow the amplitude decay while a gradient measure is
large::

    a' = -lam * g(a) * exp(-gamma * measure)

``measure`` is the estimated gradient magnitude for scheme 1 and ``|xi|``
for scheme 2. The gradient-blind baseline drops the exponential factor and
the constant variant never adapts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

VARIANTS = ("scheme1", "scheme2", "tan2009", "constant")


class DomainError(ValueError):
    pass


def identity(a: float) -> float:
    return a


G_FUNCTIONS: dict[str, Callable[[float], float]] = {"identity": identity}


def resolve_g(g: Union[str, Callable[[float], float]]) -> Callable[[float], float]:
    if callable(g):
        return g
    try:
        return G_FUNCTIONS[g]
    except KeyError:
        raise ValueError(f"unknown amplitude shape {g!r}; known: {sorted(G_FUNCTIONS)}") from None


@dataclass(frozen=True)
class AdaptationLaw:
    variant: str
    lam: float
    gamma: float = 0.0
    g: Callable[[float], float] = identity

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown adaptation variant {self.variant!r}")
        if not self.lam >= 0:
            raise ValueError("lambda must be >= 0")
        if self.variant in ("scheme1", "scheme2") and not self.gamma > 0:
            raise ValueError("gamma must be > 0 for the gradient-driven laws")


def amplitude_derivative(law: AdaptationLaw, a: float, grad_measure: float = 0.0) -> float:
    """Rate of change of the excitation amplitude.

    Args:
        law: adaptation law and gains.
        a: current amplitude, must be >= 0.
        grad_measure: |J'| estimate (scheme1) or |xi| (scheme2); callers pass
            the absolute value. Ignored by the other variants.

    Raises:
        DomainError: for a negative amplitude or gradient measure.
    """
    if a < 0:
        raise DomainError(f"amplitude must be >= 0, got {a!r}")
    if law.variant == "constant":
        return 0.0
    if law.variant == "tan2009":
        return -law.lam * law.g(a)
    if grad_measure < 0:
        raise DomainError(f"gradient measure must be >= 0, got {grad_measure!r}")
    return -law.lam * law.g(a) * math.exp(-law.gamma * grad_measure)
