"""Scalar activation functions with their derivatives.

Every activation is vectorized over numpy arrays. The Swish-type family

    phi(t) = t * (sqrt(c1) + (sqrt(c2) - sqrt(c1)) * sigmoid(zeta * t))

satisfies ``c1 <= phi(t)**2 / t**2 <= c2`` whenever ``zeta`` is real, which is
what makes its importance scores boundable by linear ones.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.special import expit

__all__ = ["ActivationSpec", "identity", "logistic", "swish_type", "relu", "custom"]

ArrayFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ActivationSpec:
    """A named scalar nonlinearity ``phi`` together with ``phi'``.

    Instances are immutable and callable. ``at_zero`` caches ``phi(0)`` since
    it is reused for every sample's offset.
    """

    name: str
    fn: ArrayFn = field(repr=False)
    deriv: ArrayFn = field(repr=False)
    c1: float = 0.0
    c2: float = 1.0
    zeta: float = 1.0
    at_zero: float = field(init=False, repr=False)
    slope_at_zero: float = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "at_zero", float(self.fn(np.zeros(1))[0]))
        object.__setattr__(self, "slope_at_zero", float(self.deriv(np.zeros(1))[0]))

    def __call__(self, t):
        return self.fn(np.asarray(t, dtype=float))

    def derivative(self, t):
        return self.deriv(np.asarray(t, dtype=float))

    def secant_ratio(self, t, threshold=1e-12):
        """``(phi(t) - phi(0)) / t`` with the ``phi'(0)`` limit near zero."""
        t = np.asarray(t, dtype=float)
        small = np.abs(t) < threshold
        safe = np.where(small, 1.0, t)
        ratio = (self.fn(safe) - self.at_zero) / safe
        return np.where(small, self.slope_at_zero, ratio)

    def to_config(self) -> dict:
        return {"name": self.name, "c1": self.c1, "c2": self.c2, "zeta": self.zeta}

    @classmethod
    def from_config(cls, config: Mapping) -> "ActivationSpec":
        """Build a named activation from ``{name, c1, c2, zeta}``."""
        name = config.get("name", "identity")
        if name == "identity":
            return identity()
        if name == "logistic":
            return logistic()
        if name == "relu":
            return relu()
        if name == "swish_type":
            return swish_type(
                float(config.get("c1", 1.0)),
                float(config.get("c2", 2.0)),
                float(config.get("zeta", 1.0)),
            )
        if name == "custom":
            raise ValueError("custom activations can only be constructed programmatically")
        raise ValueError(f"unknown activation {name!r}")


def identity() -> ActivationSpec:
    return ActivationSpec("identity", lambda t: np.array(t, dtype=float), np.ones_like, 1.0, 1.0)


def logistic() -> ActivationSpec:
    def deriv(t):
        s = expit(t)
        return s * (1.0 - s)

    return ActivationSpec("logistic", expit, deriv)


def swish_type(c1: float = 1.0, c2: float = 2.0, zeta: float = 1.0) -> ActivationSpec:
    if c1 < 0 or c2 <= c1:
        raise ValueError(f"swish_type needs 0 <= c1 < c2, got c1={c1}, c2={c2}")
    lo = np.sqrt(c1)
    span = np.sqrt(c2) - lo

    def fn(t):
        return t * (lo + span * expit(zeta * t))

    def deriv(t):
        s = expit(zeta * t)
        return lo + span * s + span * zeta * t * s * (1.0 - s)

    return ActivationSpec("swish_type", fn, deriv, c1, c2, zeta)


def relu() -> ActivationSpec:
    # derivative at 0 is taken as 0
    return ActivationSpec(
        "relu",
        lambda t: np.maximum(t, 0.0),
        lambda t: (np.asarray(t) > 0).astype(float),
    )


def custom(fn: ArrayFn, deriv: ArrayFn, name: str = "custom") -> ActivationSpec:
    return ActivationSpec(name, fn, deriv)
