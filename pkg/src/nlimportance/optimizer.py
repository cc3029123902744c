"""Projected gradient descent for (weighted) nonlinear least squares.

Objective: ``sum_i w_i f_i(theta)**2`` over a constraint set ``C``.  Steps
are accepted under the projected Armijo rule

    F(P(theta - t g)) <= F(theta) - (c / t) ||P(theta - t g) - theta||**2,

which reduces to the usual sufficient-decrease test when ``C`` is the whole
space.  Convergence is declared when the projected-gradient norm
``||theta - P(theta - g)||`` falls below ``tol``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .sampler import SampleSet, make_rng
from .scores import ScoreVector

log = logging.getLogger(__name__)

__all__ = [
    "ConstraintSet",
    "TrainConfig",
    "TrainResult",
    "TrainingError",
    "project_relu_set",
    "relu_set_violation",
    "initial_theta",
    "train",
    "train_full",
    "train_subsampled",
    "infer_constraint",
]


class TrainingError(ArithmeticError):
    """Raised when the loss becomes non-finite during training."""


def relu_set_violation(theta, l, u, m, d) -> float:
    """Largest violation of ``min_j a_j**2 >= l`` and ``||theta||**2 <= u``."""
    blocks = np.asarray(theta, dtype=float).reshape(m, d + 1)
    low = float(np.max(l - blocks[:, 0] ** 2))
    high = float(np.sum(blocks**2) - u)
    return max(low, high, 0.0)


def project_relu_set(theta, l, u, m, d) -> np.ndarray:
    """Map ``theta`` into ``{min_j a_j**2 >= l, sum_j ||b_j||**2 + a_j**2 <= u}``.

    Not the Euclidean projection (the set is nonconvex): each ``|a_j|`` is
    first raised to at least ``sqrt(l)``; then, if the norm budget ``u`` is
    exceeded, the ``b_j`` are shrunk by a common factor, and if the ``a_j``
    alone still exceed the budget they are pulled toward ``sqrt(l)`` by a
    common fraction.  Feasible points are returned unchanged.
    """
    if m * l > u:
        raise ValueError(f"infeasible constraint set: m*l = {m * l} > u = {u}")
    blocks = np.array(theta, dtype=float).reshape(m, d + 1)
    a = blocks[:, 0]
    b = blocks[:, 1:]
    root = np.sqrt(l)
    sign = np.where(a < 0, -1.0, 1.0)
    low = a * a < l
    a[low] = sign[low] * root
    A2 = float(a @ a)
    B2 = float(np.sum(b * b))
    if A2 + B2 > u * (1 + 1e-12):
        if A2 <= u:
            b *= np.sqrt(max(u - A2, 0.0) / B2)
        else:
            b[:] = 0.0
            excess = np.abs(a) - root
            # sum (root + k * excess_j)**2 = u, solved for k in [0, 1]
            qa = float(excess @ excess)
            qb = 2 * root * float(excess.sum())
            qc = m * l - u
            # qa == 0 means every |a_j| already sits at sqrt(l)
            k = 0.0 if qa == 0 else (-qb + np.sqrt(max(qb * qb - 4 * qa * qc, 0.0))) / (2 * qa)
            a[:] = sign * (root + min(max(k, 0.0), 1.0) * excess)
    blocks[:, 0] = a
    return blocks.ravel()


@dataclass(frozen=True)
class ConstraintSet:
    """Feasible region: ``unconstrained``, ``ball``, ``box`` or ``relu_set``."""

    kind: str = "unconstrained"
    center: Optional[np.ndarray] = None
    radius: Optional[float] = None
    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None
    l: Optional[float] = None
    u: Optional[float] = None
    m: Optional[int] = None
    d: Optional[int] = None

    def __post_init__(self):
        if self.kind == "ball" and not (self.radius is not None and self.radius > 0):
            raise ValueError("a ball needs a positive radius")
        if self.kind == "relu_set" and self.m * self.l > self.u:
            raise ValueError("infeasible relu_set: m*l > u")
        if self.kind not in ("unconstrained", "ball", "box", "relu_set"):
            raise ValueError(f"unknown constraint kind {self.kind!r}")

    @classmethod
    def ball(cls, radius, center=None):
        return cls("ball", center=None if center is None else np.asarray(center, dtype=float), radius=float(radius))

    @classmethod
    def box(cls, lo, hi):
        return cls("box", lo=np.asarray(lo, dtype=float), hi=np.asarray(hi, dtype=float))

    @classmethod
    def relu_set(cls, l, u, m, d):
        return cls("relu_set", l=float(l), u=float(u), m=int(m), d=int(d))

    def project(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if self.kind == "unconstrained":
            return theta.copy()
        if self.kind == "ball":
            c = np.zeros_like(theta) if self.center is None else self.center
            r = np.linalg.norm(theta - c)
            return theta.copy() if r <= self.radius else c + (theta - c) * (self.radius / r)
        if self.kind == "box":
            return np.clip(theta, self.lo, self.hi)
        return project_relu_set(theta, self.l, self.u, self.m, self.d)

    def violation(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        if self.kind == "unconstrained":
            return 0.0
        if self.kind == "ball":
            c = np.zeros_like(theta) if self.center is None else self.center
            return max(float(np.linalg.norm(theta - c) - self.radius), 0.0)
        if self.kind == "box":
            return float(max(np.max(self.lo - theta), np.max(theta - self.hi), 0.0))
        return relu_set_violation(theta, self.l, self.u, self.m, self.d)

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        for key in ("center", "radius", "lo", "hi", "l", "u", "m", "d"):
            v = getattr(self, key)
            if v is not None:
                out[key] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    @classmethod
    def from_dict(cls, data) -> "ConstraintSet":
        data = dict(data)
        kind = data.pop("kind", "unconstrained")
        for key in ("center", "lo", "hi"):
            if key in data:
                data[key] = np.asarray(data[key], dtype=float)
        return cls(kind, **data)


@dataclass(frozen=True)
class TrainConfig:
    max_iters: int = 50_000
    tol: float = 1e-8
    step: float = 1.0
    shrink: float = 0.5
    armijo: float = 1e-4
    min_step: float = 1e-20
    seed: int = 0
    init_scale: float = 0.1

    @classmethod
    def from_dict(cls, data) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in dict(data).items() if k in known})


@dataclass
class TrainResult:
    theta: np.ndarray
    loss_trajectory: np.ndarray
    iterations: int
    converged: bool
    grad_norm_final: float
    init: np.ndarray = field(repr=False, default=None)

    @property
    def loss(self) -> float:
        return float(self.loss_trajectory[-1])

    def to_dict(self) -> dict:
        return {
            "theta": self.theta.tolist(),
            "loss_trajectory": self.loss_trajectory.tolist(),
            "iterations": self.iterations,
            "converged": self.converged,
            "grad_norm_final": self.grad_norm_final,
            "init": None if self.init is None else self.init.tolist(),
        }

    def to_json(self, path, **meta) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({**meta, **self.to_dict()}, fh, indent=2, sort_keys=True)
            fh.write("\n")


def initial_theta(p: int, seed, scale: float = 0.1) -> np.ndarray:
    """Scaled Gaussian initialization, ``scale / sqrt(p)`` per coordinate."""
    return make_rng(seed).standard_normal(p) * (scale / np.sqrt(p))


def _objective(family, theta, w):
    r = family.residuals(theta)
    return float(np.sum(w * r * r))


def _gradient(family, theta, w):
    return 2.0 * (family.jacobian(theta).T @ (w * family.residuals(theta)))


def train(family, init, C: ConstraintSet = ConstraintSet(), config: TrainConfig = TrainConfig(),
          weights=None, indices=None) -> TrainResult:
    """Minimize ``sum_j weights_j f_{indices_j}(theta)**2`` over ``C``.

    The trial step starts at ``config.step`` and is afterwards warm-started
    at twice the last accepted step.
    """
    if indices is not None:
        # evaluate only the distinct sampled rows, merging repeated weights
        uniq, inv = np.unique(np.asarray(indices), return_inverse=True)
        w = np.bincount(inv, weights=np.asarray(weights, dtype=float), minlength=uniq.size)
        family = family.subset(uniq)
    else:
        w = np.ones(family.n) if weights is None else np.asarray(weights, dtype=float)

    theta = C.project(np.asarray(init, dtype=float))
    if not np.all(np.isfinite(theta)):
        raise TrainingError("initial point is not finite")
    f = _objective(family, theta, w)
    if not np.isfinite(f):
        raise TrainingError("loss is not finite at the initial point")
    losses = [f]
    t = config.step
    converged = False
    pg_norm = np.inf
    it = 0
    for it in range(config.max_iters + 1):
        g = _gradient(family, theta, w)
        pg_norm = float(np.linalg.norm(theta - C.project(theta - g)))
        if pg_norm <= config.tol:
            converged = True
            break
        if it == config.max_iters:
            break
        while True:
            cand = C.project(theta - t * g)
            step = cand - theta
            f_new = _objective(family, cand, w)
            if np.isfinite(f_new) and f_new <= f - (config.armijo / t) * float(step @ step):
                break
            t *= config.shrink
            if t < config.min_step:
                break
        if t < config.min_step:
            log.debug("line search stalled at iteration %d", it)
            break
        if not np.isfinite(f_new):
            raise TrainingError(f"non-finite loss at iteration {it}")
        if not np.any(step):
            # iterate is numerically stationary
            converged = True
            break
        theta, f = cand, f_new
        losses.append(f)
        t = min(2.0 * t, config.step * 1e12)
    return TrainResult(theta, np.asarray(losses), it, converged, pg_norm, np.asarray(init, dtype=float))


def train_full(family, init=None, C: ConstraintSet = ConstraintSet(), config: TrainConfig = TrainConfig()) -> TrainResult:
    """Fit on every sample with unit weights."""
    if init is None:
        init = initial_theta(family.p, config.seed, config.init_scale)
    return train(family, init, C, config)


def train_subsampled(family, S: SampleSet, tau: Optional[ScoreVector] = None, init=None,
                     C: ConstraintSet = ConstraintSet(), config: TrainConfig = TrainConfig()) -> TrainResult:
    """Fit the importance-weighted loss ``sum_j w_j f_{i_j}(theta)**2``."""
    if tau is not None:
        expected = 1.0 / (S.s * tau.probs[S.indices])
        if not np.allclose(S.weights, expected, rtol=1e-12, atol=0):
            raise ValueError("sample weights are inconsistent with the score vector")
    if init is None:
        init = initial_theta(family.p, config.seed, config.init_scale)
    return train(family, init, C, config, weights=S.weights, indices=S.indices)


def infer_constraint(family, kind: str = "ball", factor: float = 1.5, config: TrainConfig = TrainConfig(),
                     pilot: Optional[TrainResult] = None) -> ConstraintSet:
    """Choose ``C`` around a pilot solution.

    The region is built from ``theta*`` itself, so it is only a practical
    stand-in for an a-priori choice.  ``ball`` gives radius ``factor *
    ||theta*||``; ``relu_set`` takes ``l = min_j a_j**2 / factor`` and
    ``u = factor * ||theta*||**2``.
    """
    if pilot is None:
        pilot = train_full(family, config=config)
    theta = pilot.theta
    if kind == "ball":
        return ConstraintSet.ball(max(factor * float(np.linalg.norm(theta)), 1e-8))
    if kind == "relu_set":
        m, d = family.m, family.d
        a = theta.reshape(m, d + 1)[:, 0]
        l = float(np.min(a * a)) / factor
        if not l > 0:
            raise ValueError("pilot solution has a zero output weight; relu_set needs a_j != 0")
        return ConstraintSet.relu_set(l, factor * float(theta @ theta), m, d)
    if kind == "unconstrained":
        return ConstraintSet()
    raise ValueError(f"cannot infer a constraint of kind {kind!r}")
