"""Adjoint operators of per-sample nonlinear maps.

For a map ``f: R^p -> R`` the adjoint is the averaged gradient along the ray
from the origin,

    f_star(theta) = integral_0^1 grad f(t * theta) dt,

so that ``f(theta) = <theta, f_star(theta)> + f(0)``.  Stacking ``f_star``
with the offset ``f(0)`` gives the augmented adjoint, which pairs with
``[theta; 1]``.

When ``f = g(h(theta))`` with ``h`` positively homogeneous of degree ``alpha``
the integral has the closed form

    f_star(theta) = (g(h) - g(0)) / (alpha * h) * grad h(theta),

with the limit ``g'(0) / alpha * grad h`` at ``h = 0``.  Everything else goes
through fixed-order Gauss-Legendre quadrature.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, NamedTuple, Optional

import numpy as np

from .activations import ActivationSpec

__all__ = [
    "AugmentedAdjoint",
    "AdjointModel",
    "ZERO_THRESHOLD",
    "adjoint_linear",
    "adjoint_composite",
    "adjoint_single_index",
    "adjoint_relu_unit",
    "adjoint_two_layer",
    "adjoint_quadrature",
    "adjoint_general_loss",
    "finite_difference_gradient",
    "linear_model",
    "single_index_model",
    "relu_unit_model",
    "two_layer_model",
    "general_loss_model",
    "quadrature_model",
]

# relative cutoff below which h(theta) is treated as zero
ZERO_THRESHOLD = 1e-12
DEFAULT_NODES = 64
RAY_START = 1e-12


class AugmentedAdjoint(NamedTuple):
    """``[f_star(theta); f(0)]`` split into its two parts."""

    adjoint: np.ndarray
    offset: float

    @property
    def augmented(self) -> np.ndarray:
        return np.append(self.adjoint, self.offset)

    def reconstruct(self, theta) -> float:
        """Value of ``<theta, adjoint> + offset``, which equals ``f(theta)``."""
        return float(np.dot(theta, self.adjoint) + self.offset)


def _as_vector(v, name="vector") -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {v.shape}")
    return v


def _check_dims(x, theta):
    if x.shape != theta.shape:
        raise ValueError(f"dimension mismatch: x has {x.shape[0]} entries, theta has {theta.shape[0]}")


def _is_zero(h, theta_norm):
    return abs(h) < ZERO_THRESHOLD * (1.0 + theta_norm)


def adjoint_linear(x, y, theta) -> AugmentedAdjoint:
    """Adjoint of the residual ``<theta, x> - y``: the data point itself."""
    x = _as_vector(x, "x")
    theta = _as_vector(theta, "theta")
    _check_dims(x, theta)
    return AugmentedAdjoint(x.copy(), -float(y))


def adjoint_composite(g: ActivationSpec, h_value, h_gradient, alpha, theta_norm=0.0):
    """Closed-form adjoint of ``g(h(theta))`` for ``h`` homogeneous of degree ``alpha``.

    Parameters
    ----------
    g : ActivationSpec
        Outer scalar function; its derivative is used on the zero branch.
    h_value : float
        ``h(theta)``.
    h_gradient : array_like
        ``grad h(theta)``.
    alpha : float
        Degree of positive homogeneity of ``h``; must be nonzero.
    theta_norm : float
        ``||theta||``, scales the zero-branch cutoff.
    """
    if alpha == 0:
        raise ValueError("homogeneity degree must be nonzero")
    grad = _as_vector(h_gradient, "h_gradient")
    h = float(h_value)
    if not np.isfinite(h) or not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite h(theta) or gradient")
    if _is_zero(h, theta_norm):
        coef = g.slope_at_zero / alpha
    else:
        gh = float(g(np.array([h]))[0])
        if not np.isfinite(gh):
            raise FloatingPointError(f"g(h) is not finite at h={h}")
        coef = (gh - g.at_zero) / (alpha * h)
    return coef * grad


def adjoint_single_index(phi: ActivationSpec, x, theta, y=0.0) -> AugmentedAdjoint:
    """Adjoint of ``phi(<theta, x>) - y``."""
    x = _as_vector(x, "x")
    theta = _as_vector(theta, "theta")
    _check_dims(x, theta)
    u = float(np.dot(theta, x))
    vec = adjoint_composite(phi, u, x, 1.0, np.linalg.norm(theta))
    return AugmentedAdjoint(vec, phi.at_zero - float(y))


def _relu_unit_vector(phi, x, a, b, theta_norm):
    z = float(np.dot(b, x))
    r = max(z, 0.0)
    grad_psi = np.concatenate(([r], a * x * (z > 0)))
    return adjoint_composite(phi, a * r, grad_psi, 2.0, theta_norm)


def adjoint_relu_unit(phi: ActivationSpec, x, a, b, y=0.0) -> AugmentedAdjoint:
    """Adjoint of the unit ``phi(a * max(<b, x>, 0)) - y`` w.r.t. ``[a; b]``.

    ``a * max(<b, x>, 0)`` is homogeneous of degree 2 in ``[a; b]``.
    """
    x = _as_vector(x, "x")
    b = _as_vector(b, "b")
    _check_dims(x, b)
    a = float(a)
    norm = np.sqrt(a * a + b @ b)
    return AugmentedAdjoint(_relu_unit_vector(phi, x, a, b, norm), phi.at_zero - float(y))


def _split_blocks(theta, m, d):
    theta = _as_vector(theta, "theta")
    if m < 1 or theta.shape[0] != m * (d + 1):
        raise ValueError(f"theta of length {theta.shape[0]} does not split into {m} blocks of size {d + 1}")
    return theta.reshape(m, d + 1)


def adjoint_two_layer(phi: ActivationSpec, x, theta, m, y=0.0) -> AugmentedAdjoint:
    """Adjoint of ``sum_j phi(a_j * max(<b_j, x>, 0)) - y``.

    ``theta`` is laid out as ``m`` consecutive blocks ``[a_j; b_j]``; the
    adjoint is the matching concatenation of per-unit adjoints.
    """
    x = _as_vector(x, "x")
    blocks = _split_blocks(theta, m, x.shape[0])
    norm = np.linalg.norm(blocks)
    parts = [_relu_unit_vector(phi, x, blk[0], blk[1:], norm) for blk in blocks]
    return AugmentedAdjoint(np.concatenate(parts), m * phi.at_zero - float(y))


@lru_cache(maxsize=32)
def _gauss_legendre(nodes):
    return np.polynomial.legendre.leggauss(nodes)


def finite_difference_gradient(f, theta, step=None) -> np.ndarray:
    """Central differences with step ``1e-6 * (1 + ||theta||_inf)``."""
    theta = _as_vector(theta, "theta")
    if step is None:
        step = 1e-6 * (1.0 + np.max(np.abs(theta), initial=0.0))
    grad = np.empty_like(theta)
    for k in range(theta.shape[0]):
        e = np.zeros_like(theta)
        e[k] = step
        grad[k] = (f(theta + e) - f(theta - e)) / (2 * step)
    return grad


def adjoint_quadrature(f, theta, nodes=DEFAULT_NODES, gradient=None) -> AugmentedAdjoint:
    """Approximate the adjoint integral with Gauss-Legendre quadrature.

    The ray ``t * theta`` can only cross ReLU kinks at ``t = 0`` for the
    models in this package, so the rule is applied on ``[eta, 1]`` and the
    sliver ``[0, eta]`` is added as a rectangle.

    Parameters
    ----------
    f : callable
        ``theta -> float``.
    theta : array_like
    nodes : int
        Number of Gauss-Legendre nodes, at least 2.
    gradient : callable, optional
        ``theta -> grad f(theta)``. Central differences are used if omitted.
    """
    if nodes < 2:
        raise ValueError(f"need at least 2 quadrature nodes, got {nodes}")
    theta = _as_vector(theta, "theta")
    if gradient is None:
        gradient = lambda th: finite_difference_gradient(f, th)  # noqa: E731
    t_nodes, weights = _gauss_legendre(int(nodes))
    eta = RAY_START
    half = 0.5 * (1.0 - eta)
    ts = eta + half * (t_nodes + 1.0)
    total = eta * np.asarray(gradient(eta * theta), dtype=float)
    for t, w in zip(ts, weights):
        g = np.asarray(gradient(t * theta), dtype=float)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient at t={t}")
        total = total + (half * w) * g
    offset = float(f(np.zeros_like(theta)))
    return AugmentedAdjoint(total, offset)


def adjoint_general_loss(loss, f, f_gradient, theta, alpha, loss_derivative=None) -> AugmentedAdjoint:
    """Adjoint of ``h = sqrt(loss(f(theta)))`` for ``f`` homogeneous of degree ``alpha``.

    The result satisfies ``h(theta) = <theta, adjoint> + sqrt(loss(f(0)))`` so
    a general nonnegative loss becomes a sum of squares of inner products.
    """
    if alpha == 0:
        raise ValueError("homogeneity degree must be nonzero")
    theta = _as_vector(theta, "theta")
    fv = float(f(theta))
    grad = _as_vector(f_gradient(theta), "f_gradient")
    lv, l0 = float(loss(fv)), float(loss(0.0))
    if lv < 0 or l0 < 0:
        raise ValueError("loss must be nonnegative")
    root0 = np.sqrt(l0)
    if _is_zero(fv, np.linalg.norm(theta)):
        # Euler's identity makes <theta, grad f> vanish here, so any finite
        # coefficient reconstructs h; use the right derivative of sqrt(loss).
        if loss_derivative is not None and l0 > 0:
            coef = float(loss_derivative(0.0)) / (2 * root0) / alpha
        else:
            eps = 1e-7
            coef = (np.sqrt(float(loss(eps))) - root0) / eps / alpha
    else:
        coef = (np.sqrt(lv) - root0) / (alpha * fv)
    return AugmentedAdjoint(coef * grad, float(np.sqrt(float(loss(float(f(np.zeros_like(theta))))))))


@dataclass(frozen=True)
class AdjointModel:
    """One sample's map ``f_i`` with its gradient and adjoint.

    ``kind`` is one of ``linear``, ``single_index``, ``relu_unit``,
    ``relu_two_layer``, ``general_loss_wrapped`` or ``quadrature_generic``.
    ``degree`` is the homogeneity degree of the inner map when one exists.
    """

    p: int
    evaluate: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    adjoint: Callable[[np.ndarray], AugmentedAdjoint]
    kind: str
    degree: Optional[float] = None

    def __call__(self, theta) -> float:
        return self.evaluate(theta)


def linear_model(x, y=0.0) -> AdjointModel:
    x = _as_vector(x, "x").copy()
    y = float(y)
    return AdjointModel(
        p=x.shape[0],
        evaluate=lambda th: float(np.dot(th, x) - y),
        gradient=lambda th: x.copy(),
        adjoint=lambda th: adjoint_linear(x, y, th),
        kind="linear",
        degree=1.0,
    )


def single_index_model(phi: ActivationSpec, x, y=0.0) -> AdjointModel:
    x = _as_vector(x, "x").copy()
    y = float(y)
    return AdjointModel(
        p=x.shape[0],
        evaluate=lambda th: float(phi(np.dot(th, x))) - y,
        gradient=lambda th: float(phi.derivative(np.dot(th, x))) * x,
        adjoint=lambda th: adjoint_single_index(phi, x, th, y),
        kind="single_index",
        degree=1.0,
    )


def _two_layer_value(phi, x, blocks):
    z = blocks[:, 1:] @ x
    return float(np.sum(phi(blocks[:, 0] * np.maximum(z, 0.0))))


def _two_layer_gradient(phi, x, blocks):
    a = blocks[:, 0]
    z = blocks[:, 1:] @ x
    r = np.maximum(z, 0.0)
    dphi = phi.derivative(a * r)
    grad = np.empty_like(blocks)
    grad[:, 0] = dphi * r
    grad[:, 1:] = (dphi * a * (z > 0))[:, None] * x[None, :]
    return grad.ravel()


def two_layer_model(phi: ActivationSpec, x, m, y=0.0) -> AdjointModel:
    """``sum_{j<m} phi(a_j * max(<b_j, x>, 0)) - y`` with ``theta = [a_1, b_1, ...]``."""
    x = _as_vector(x, "x").copy()
    d = x.shape[0]
    y = float(y)
    kind = "relu_unit" if m == 1 else "relu_two_layer"
    return AdjointModel(
        p=m * (d + 1),
        evaluate=lambda th: _two_layer_value(phi, x, _split_blocks(th, m, d)) - y,
        gradient=lambda th: _two_layer_gradient(phi, x, _split_blocks(th, m, d)),
        adjoint=lambda th: adjoint_two_layer(phi, x, th, m, y),
        kind=kind,
        degree=2.0,
    )


def relu_unit_model(phi: ActivationSpec, x, y=0.0) -> AdjointModel:
    return two_layer_model(phi, x, 1, y)


def general_loss_model(loss, base: AdjointModel, alpha=None, loss_derivative=None) -> AdjointModel:
    """Wrap ``base`` as ``h = sqrt(loss(base(theta)))``.

    ``base`` must be positively homogeneous; ``alpha`` defaults to its
    recorded degree.
    """
    alpha = base.degree if alpha is None else alpha
    if alpha is None:
        raise ValueError("homogeneity degree of the base model is unknown")

    def evaluate(th):
        return float(np.sqrt(loss(base.evaluate(th))))

    def gradient(th):
        fv = base.evaluate(th)
        lv = float(loss(fv))
        if lv <= 0:
            return np.zeros(base.p)
        dl = loss_derivative(fv) if loss_derivative is not None else (
            (loss(fv + 1e-7) - loss(fv - 1e-7)) / 2e-7
        )
        return dl / (2 * np.sqrt(lv)) * base.gradient(th)

    return AdjointModel(
        p=base.p,
        evaluate=evaluate,
        gradient=gradient,
        adjoint=lambda th: adjoint_general_loss(loss, base.evaluate, base.gradient, th, alpha, loss_derivative),
        kind="general_loss_wrapped",
        degree=None,
    )


def quadrature_model(f, p, gradient=None, nodes=DEFAULT_NODES) -> AdjointModel:
    """A model whose adjoint is computed numerically."""
    grad = gradient if gradient is not None else (lambda th: finite_difference_gradient(f, th))
    return AdjointModel(
        p=int(p),
        evaluate=lambda th: float(f(np.asarray(th, dtype=float))),
        gradient=grad,
        adjoint=lambda th: adjoint_quadrature(f, th, nodes, grad),
        kind="quadrature_generic",
    )
