"""Datasets and the nonlinear dual matrix.

Row ``i`` of the dual matrix is the augmented adjoint ``[f_i_star(theta);
f_i(0)]``, so the squared loss is ``||D @ [theta; 1]||**2``: a nonlinear
least-squares problem written as an ordinary one with ``D`` standing in for
the data matrix.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

__all__ = ["Dataset", "DualMatrix", "build_dual_matrix", "loss_as_norm", "augment"]


def augment(theta) -> np.ndarray:
    """``[theta; 1]``."""
    return np.append(np.asarray(theta, dtype=float), 1.0)


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: Optional[np.ndarray] = None
    feature_names: Optional[Sequence[str]] = None
    target_name: Optional[str] = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2 or X.shape[0] < 1:
            raise ValueError(f"X must be a non-empty 2-D array, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("X contains non-finite entries")
        object.__setattr__(self, "X", X)
        if self.y is not None:
            y = np.asarray(self.y, dtype=float)
            if y.shape != (X.shape[0],):
                raise ValueError(f"y must have shape ({X.shape[0]},), got {y.shape}")
            if not np.all(np.isfinite(y)):
                raise ValueError("y contains non-finite entries")
            object.__setattr__(self, "y", y)
        if self.feature_names is not None and len(self.feature_names) != X.shape[1]:
            raise ValueError("feature_names length does not match the number of columns")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class DualMatrix:
    """Dense ``n x (p+1)`` dual matrix frozen at ``theta_snapshot``."""

    rows: np.ndarray
    theta_snapshot: np.ndarray
    model_id: str = "unknown"

    def __post_init__(self):
        rows = np.array(self.rows, dtype=float, copy=True)
        theta = np.array(self.theta_snapshot, dtype=float, copy=True)
        if rows.ndim != 2 or rows.shape[1] != theta.shape[0] + 1:
            raise ValueError(f"rows shape {rows.shape} does not match theta of length {theta.shape[0]}")
        rows.flags.writeable = False
        theta.flags.writeable = False
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "theta_snapshot", theta)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def p(self) -> int:
        return self.theta_snapshot.shape[0]

    @property
    def offsets(self) -> np.ndarray:
        return self.rows[:, -1]

    def reconstruct(self) -> np.ndarray:
        """``f_i(theta)`` for every row, from the inner-product identity."""
        return self.rows @ augment(self.theta_snapshot)

    def to_csv(self, path) -> None:
        p = self.p
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([f"adj_{k}" for k in range(p)] + ["offset"])
            for row in self.rows:
                writer.writerow([repr(float(v)) for v in row])


def build_dual_matrix(models, theta, model_id: Optional[str] = None) -> DualMatrix:
    """Stack the augmented adjoints of all samples at ``theta``.

    ``models`` is either a vectorized family (anything with ``dual_rows``) or
    a sequence of :class:`~nlimportance.adjoint.AdjointModel` sharing ``p``.
    """
    theta = np.asarray(theta, dtype=float)
    if hasattr(models, "dual_rows"):
        rows = models.dual_rows(theta)
        model_id = model_id or getattr(models, "kind", "family")
    else:
        models = list(models)
        if not models:
            raise ValueError("no models given")
        ps = {m.p for m in models}
        if len(ps) != 1:
            raise ValueError(f"models disagree on parameter dimension: {sorted(ps)}")
        if ps.pop() != theta.shape[0]:
            raise ValueError("theta length does not match the models' parameter dimension")
        rows = np.array([m.adjoint(theta).augmented for m in models])
        model_id = model_id or models[0].kind
    if not np.all(np.isfinite(rows)):
        raise FloatingPointError("dual matrix has non-finite entries")
    return DualMatrix(rows, theta, model_id)


def loss_as_norm(D: DualMatrix, theta) -> float:
    """``||D [theta; 1]||**2``, the squared loss at the snapshot parameters."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != D.theta_snapshot.shape or not np.array_equal(theta, D.theta_snapshot):
        raise ValueError("theta differs from the dual matrix snapshot; rebuild the dual matrix")
    r = D.rows @ augment(theta)
    return float(r @ r)
