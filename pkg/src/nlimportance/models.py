"""Vectorized model families over a whole dataset.

Each family evaluates all residuals ``f_i(theta)``, their Jacobian and the
augmented dual rows in one shot. ``per_sample()`` returns the equivalent list
of :class:`~nlimportance.adjoint.AdjointModel` objects.
"""
from __future__ import annotations

from typing import List, Optional

import numpy as np

from . import adjoint as adj
from .activations import ActivationSpec, identity

__all__ = ["LinearFamily", "SingleIndexFamily", "TwoLayerReluFamily", "make_family"]


def _targets(y, n):
    if y is None:
        return np.zeros(n)
    y = np.asarray(y, dtype=float)
    if y.shape != (n,):
        raise ValueError(f"targets must have shape ({n},), got {y.shape}")
    return y


class _Family:
    kind = "base"
    p: int
    X: np.ndarray
    y: np.ndarray

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def residuals(self, theta) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, theta) -> np.ndarray:
        raise NotImplementedError

    def dual_rows(self, theta) -> np.ndarray:
        raise NotImplementedError

    def per_sample(self) -> List[adj.AdjointModel]:
        raise NotImplementedError

    def loss(self, theta, weights=None) -> float:
        r = self.residuals(theta)
        if weights is None:
            return float(r @ r)
        return float(np.sum(weights * r * r))

    def subset(self, indices) -> "_Family":
        raise NotImplementedError

    def _check(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.p,):
            raise ValueError(f"theta must have shape ({self.p},), got {theta.shape}")
        return theta

    def describe(self) -> dict:
        return {"family": self.kind, "n": self.n, "p": self.p}


class LinearFamily(_Family):
    """Residuals ``X theta - y``."""

    kind = "linear"

    def __init__(self, X, y=None):
        self.X = np.asarray(X, dtype=float)
        self.y = _targets(y, self.X.shape[0])
        self.p = self.X.shape[1]

    def residuals(self, theta):
        return self.X @ self._check(theta) - self.y

    def jacobian(self, theta):
        self._check(theta)
        return self.X

    def dual_rows(self, theta):
        self._check(theta)
        return np.column_stack([self.X, -self.y])

    def per_sample(self):
        return [adj.linear_model(x, yi) for x, yi in zip(self.X, self.y)]

    def subset(self, indices):
        return LinearFamily(self.X[indices], self.y[indices])


class SingleIndexFamily(_Family):
    """Residuals ``phi(X theta) - y``."""

    kind = "single_index"

    def __init__(self, phi: ActivationSpec, X, y=None):
        self.phi = phi
        self.X = np.asarray(X, dtype=float)
        self.y = _targets(y, self.X.shape[0])
        self.p = self.X.shape[1]

    def residuals(self, theta):
        return self.phi(self.X @ self._check(theta)) - self.y

    def jacobian(self, theta):
        u = self.X @ self._check(theta)
        return self.phi.derivative(u)[:, None] * self.X

    def dual_rows(self, theta):
        theta = self._check(theta)
        u = self.X @ theta
        coef = self.phi.secant_ratio(u, adj.ZERO_THRESHOLD * (1.0 + np.linalg.norm(theta)))
        return np.column_stack([coef[:, None] * self.X, self.phi.at_zero - self.y])

    def per_sample(self):
        return [adj.single_index_model(self.phi, x, yi) for x, yi in zip(self.X, self.y)]

    def subset(self, indices):
        return SingleIndexFamily(self.phi, self.X[indices], self.y[indices])

    def describe(self):
        return {**super().describe(), "activation": self.phi.to_config()}


class TwoLayerReluFamily(_Family):
    """Residuals ``sum_j phi(a_j * max(<b_j, x_i>, 0)) - y_i``.

    ``theta`` holds ``m`` blocks ``[a_j; b_j]`` of length ``d + 1``.
    """

    kind = "relu_two_layer"

    def __init__(self, phi: ActivationSpec, X, m: int, y=None):
        self.phi = phi
        self.X = np.asarray(X, dtype=float)
        self.y = _targets(y, self.X.shape[0])
        self.m = int(m)
        self.d = self.X.shape[1]
        self.p = self.m * (self.d + 1)

    def _blocks(self, theta):
        blocks = self._check(theta).reshape(self.m, self.d + 1)
        return blocks[:, 0], blocks[:, 1:]

    def _pre(self, theta):
        a, B = self._blocks(theta)
        Z = self.X @ B.T  # n x m
        R = np.maximum(Z, 0.0)
        return a, Z, R

    def residuals(self, theta):
        a, _, R = self._pre(theta)
        return np.sum(self.phi(R * a[None, :]), axis=1) - self.y

    def jacobian(self, theta):
        a, Z, R = self._pre(theta)
        dphi = self.phi.derivative(R * a[None, :])
        J = np.empty((self.n, self.m, self.d + 1))
        J[:, :, 0] = dphi * R
        J[:, :, 1:] = (dphi * a[None, :] * (Z > 0))[:, :, None] * self.X[:, None, :]
        return J.reshape(self.n, self.p)

    def dual_rows(self, theta):
        a, Z, R = self._pre(theta)
        psi = R * a[None, :]
        gamma = 0.5 * self.phi.secant_ratio(psi, adj.ZERO_THRESHOLD * (1.0 + np.linalg.norm(theta)))
        rows = np.empty((self.n, self.m, self.d + 1))
        rows[:, :, 0] = gamma * R
        rows[:, :, 1:] = (gamma * a[None, :] * (Z > 0))[:, :, None] * self.X[:, None, :]
        return np.column_stack([rows.reshape(self.n, self.p), self.m * self.phi.at_zero - self.y])

    def per_sample(self):
        return [adj.two_layer_model(self.phi, x, self.m, yi) for x, yi in zip(self.X, self.y)]

    def subset(self, indices):
        return TwoLayerReluFamily(self.phi, self.X[indices], self.m, self.y[indices])

    def describe(self):
        return {**super().describe(), "activation": self.phi.to_config(), "m": self.m}


def make_family(name: str, X, y=None, phi: Optional[ActivationSpec] = None, m: int = 1):
    """Construct a family by name: ``linear``, ``single_index`` or ``relu_two_layer``."""
    if name == "linear":
        return LinearFamily(X, y)
    phi = phi if phi is not None else identity()
    if name == "single_index":
        return SingleIndexFamily(phi, X, y)
    if name in ("relu_two_layer", "relu_unit"):
        return TwoLayerReluFamily(phi, X, 1 if name == "relu_unit" else m, y)
    raise ValueError(f"unknown model family {name!r}")
