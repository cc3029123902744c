"""Leverage and norm scores of dual matrices, and their parameter-free bounds.

Nonlinear leverage scores are the diagonal of the projector onto the column
space of the dual matrix, divided by its rank; nonlinear norm scores are the
squared row norms over the squared Frobenius norm.  With an identity
activation and no offset both reduce to the classical linear scores of ``X``.

Since the dual matrix depends on ``theta``, sampling before training uses a
linear surrogate that dominates the nonlinear scores up to a factor ``beta``:
``beta * tau_i(theta) <= tau_hat_i`` for every ``theta`` of interest.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.linalg

from .activations import ActivationSpec
from .dual_matrix import Dataset, DualMatrix

__all__ = [
    "ScoreVector",
    "GlmBounds",
    "ReluBounds",
    "DominanceReport",
    "SCORE_KINDS",
    "leverage_scores",
    "norm_scores",
    "raw_leverage",
    "uniform_scores",
    "linear_surrogate_scores",
    "glm_bounds",
    "relu_ratio_bounds",
    "beta_glm",
    "beta_relu",
    "verify_dominance",
]

SCORE_KINDS = ("nonlinear_leverage", "nonlinear_norm", "linear_leverage", "linear_norm", "uniform")
RANK_RTOL = 1e-10
COND_LIMIT = 1e12
PROB_FLOOR = 1e-15


@dataclass(frozen=True)
class ScoreVector:
    """A sampling distribution over the ``n`` samples."""

    probs: np.ndarray
    kind: str
    rank_used: Optional[int] = None
    beta: Optional[float] = None

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float, copy=True)
        if probs.ndim != 1 or probs.size == 0:
            raise ValueError("probs must be a non-empty vector")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise ValueError("probs must be finite and nonnegative")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError(f"probs sum to {probs.sum()!r}, not 1")
        if self.kind not in SCORE_KINDS:
            raise ValueError(f"unknown score kind {self.kind!r}")
        if self.beta is not None and not 0 < self.beta <= 1:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        probs.flags.writeable = False
        object.__setattr__(self, "probs", probs)

    @property
    def n(self) -> int:
        return self.probs.shape[0]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["index", "score", "kind"])
            for i, v in enumerate(self.probs):
                writer.writerow([i, repr(float(v)), self.kind])

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "rank_used": self.rank_used,
            "beta": self.beta,
            "probs": [float(v) for v in self.probs],
        }

    def to_json(self, path, **meta) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({**meta, **self.to_dict()}, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_dict(cls, data) -> "ScoreVector":
        return cls(np.asarray(data["probs"], dtype=float), data["kind"], data.get("rank_used"), data.get("beta"))


def _normalize(values) -> np.ndarray:
    probs = values / values.sum()
    probs[probs < PROB_FLOOR] = 0.0
    return probs / probs.sum()


def _matrix(D) -> np.ndarray:
    return D.rows if isinstance(D, DualMatrix) else np.asarray(D, dtype=float)


def _svd_leverage(A) -> Tuple[np.ndarray, int]:
    U, s, _ = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros(A.shape[0]), 0
    rank = int(np.sum(s > RANK_RTOL * s[0]))
    return np.sum(U[:, :rank] ** 2, axis=1), rank


def raw_leverage(D, method: str = "qr") -> Tuple[np.ndarray, int]:
    """Unnormalized leverage values (each in ``[0, 1]``) and the numerical rank.

    ``method="svd"`` is the reference path.  ``method="qr"`` uses a
    column-pivoted QR and falls back to the SVD when ``R`` is rank deficient
    or its condition number exceeds ``1e12``.
    """
    A = _matrix(D)
    if method == "svd" or A.shape[0] < A.shape[1]:
        return _svd_leverage(A)
    if method != "qr":
        raise ValueError(f"unknown factorization {method!r}")
    Q, R, _ = scipy.linalg.qr(A, mode="economic", pivoting=True)
    s = np.linalg.svd(R, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros(A.shape[0]), 0
    rank = int(np.sum(s > RANK_RTOL * s[0]))
    if rank < A.shape[1] or s[0] / s[-1] > COND_LIMIT:
        return _svd_leverage(A)
    return np.sum(Q**2, axis=1), rank


def leverage_scores(D, method: str = "qr", kind: str = "nonlinear_leverage") -> ScoreVector:
    lev, rank = raw_leverage(D, method)
    if rank == 0:
        raise ValueError("degenerate dual matrix: rank 0")
    lev = np.clip(lev, 0.0, 1.0)
    return ScoreVector(_normalize(lev), kind, rank_used=rank)


def norm_scores(D, kind: str = "nonlinear_norm") -> ScoreVector:
    A = _matrix(D)
    sq = np.einsum("ij,ij->i", A, A)
    if not sq.sum() > 0:
        raise ValueError("zero Frobenius norm")
    return ScoreVector(_normalize(sq), kind)


def uniform_scores(n: int) -> ScoreVector:
    return ScoreVector(np.full(n, 1.0 / n), "uniform")


def _surrogate_offset(data: Dataset, model_kind, phi, m):
    y = data.y if data.y is not None else np.zeros(data.n)
    if model_kind == "linear":
        return -y
    phi0 = phi.at_zero if phi is not None else 0.0
    if model_kind == "single_index":
        return phi0 - y
    if model_kind in ("relu_two_layer", "relu_unit"):
        return m * phi0 - y
    raise ValueError(f"unknown model family {model_kind!r}")


def linear_surrogate_scores(
    data: Dataset,
    model_kind: str,
    phi: Optional[ActivationSpec] = None,
    kind: str = "leverage",
    m: int = 1,
    include_offset: Optional[bool] = None,
) -> ScoreVector:
    """Parameter-independent scores of the data matrix.

    The matrix is ``X`` augmented by the model's offset column (``-y`` for a
    linear model, ``phi(0) - y`` for a single-index model, ``m * phi(0) - y``
    for a two-layer ReLU network).  With ``include_offset=None`` the column
    is appended only when it is not identically zero.
    """
    offset = _surrogate_offset(data, model_kind, phi, m)
    if include_offset is None:
        include_offset = bool(np.any(offset != 0))
    A = np.column_stack([data.X, offset]) if include_offset else data.X
    if kind == "leverage":
        return leverage_scores(A, kind="linear_leverage")
    if kind == "norm":
        return norm_scores(A, kind="linear_norm")
    raise ValueError(f"kind must be 'leverage' or 'norm', got {kind!r}")


@dataclass(frozen=True)
class GlmBounds:
    """``l <= phi(t)**2 / t**2 <= u`` for ``t`` in ``domain``."""

    l: float
    u: float
    domain: Tuple[float, float] = (-np.inf, np.inf)

    def __post_init__(self):
        if not self.l > 0:
            raise ValueError(f"lower bound must be positive, got {self.l}")
        if self.u < self.l:
            raise ValueError(f"upper bound {self.u} is below lower bound {self.l}")


@dataclass(frozen=True)
class ReluBounds:
    """Constants defining the parameter region for two-layer ReLU networks.

    ``c1 <= (phi(t) - phi(0))**2 / t**2 <= c2``; ``l`` lower-bounds every
    ``a_j**2`` and ``u`` upper-bounds ``sum_j ||b_j||**2 + a_j**2``.
    """

    c1: float
    c2: float
    l: float
    u: float

    def __post_init__(self):
        if not 0 < self.c1 <= self.c2 < np.inf:
            raise ValueError(f"need 0 < c1 <= c2 < inf, got c1={self.c1}, c2={self.c2}")
        if not 0 < self.l <= self.u:
            raise ValueError(f"need 0 < l <= u, got l={self.l}, u={self.u}")


def _ratio_grid(t_max, t_min, n_grid):
    half = np.logspace(np.log10(t_min), np.log10(t_max), n_grid // 2)
    return np.concatenate([-half[::-1], half])


def glm_bounds(phi: ActivationSpec, t_max: float = 10.0, t_min: float = 1e-8, n_grid: int = 100_000) -> GlmBounds:
    """Bounds on ``phi(t)**2 / t**2`` over ``[-t_max, t_max]``.

    A Swish-type activation with ``c1 > 0`` gets the exact global bounds
    ``(c1, c2)`` after they are confirmed on the grid; otherwise ``l`` and
    ``u`` are the extremes over a log-spaced grid, which needs a bounded
    domain when ``c1 = 0``.
    """
    t = _ratio_grid(t_max, t_min, n_grid)
    ratio = (phi(t) / t) ** 2
    if phi.name == "swish_type" and phi.c1 > 0:
        slack = 1e-12 * phi.c2
        if ratio.min() < phi.c1 - slack or ratio.max() > phi.c2 + slack:
            raise ArithmeticError("grid values fall outside the Swish-type bounds")
        return GlmBounds(phi.c1, phi.c2)
    lo = min(float(ratio.min()), phi.slope_at_zero**2)
    hi = max(float(ratio.max()), phi.slope_at_zero**2)
    return GlmBounds(lo, hi, (-t_max, t_max))


def relu_ratio_bounds(phi: ActivationSpec, t_max: float = 10.0, t_min: float = 1e-8, n_grid: int = 100_000):
    """Grid bounds ``(c1, c2)`` on ``(phi(t) - phi(0))**2 / t**2``."""
    t = _ratio_grid(t_max, t_min, n_grid)
    ratio = phi.secant_ratio(t) ** 2
    return float(ratio.min()), float(ratio.max())


def beta_glm(bounds: GlmBounds) -> float:
    if bounds.l <= 0:
        raise ValueError("lower bound must be positive")
    return bounds.l / bounds.u


def beta_relu(bounds: ReluBounds) -> float:
    return min(bounds.c1 * bounds.l, 1.0) / max(bounds.c2 * bounds.u, 1.0)


@dataclass(frozen=True)
class DominanceReport:
    max_violation: float
    worst_index: int
    beta: float
    passed: bool


def verify_dominance(nonlinear: ScoreVector, surrogate: ScoreVector, beta: float, tol: float = 1e-10) -> DominanceReport:
    """Check ``beta * nonlinear_i <= surrogate_i`` for every sample."""
    a = nonlinear.probs if isinstance(nonlinear, ScoreVector) else np.asarray(nonlinear)
    b = surrogate.probs if isinstance(surrogate, ScoreVector) else np.asarray(surrogate)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    gap = beta * a - b
    worst = int(np.argmax(gap))
    return DominanceReport(float(gap[worst]), worst, float(beta), bool(gap[worst] <= tol))
