"""CSV/JSON input and output, standardization, and synthetic datasets."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .activations import ActivationSpec, swish_type
from .dual_matrix import Dataset
from .sampler import RNG_ALGORITHM, make_rng

__all__ = [
    "DataError",
    "load_csv",
    "write_csv",
    "write_json",
    "read_json",
    "Standardizer",
    "SyntheticSpec",
    "SyntheticTruth",
    "generate_synthetic",
    "plant_outlier",
]


class DataError(ValueError):
    """Malformed input data."""


def load_csv(path, target: Optional[str] = None, features: Optional[Sequence[str]] = None) -> Dataset:
    """Read a comma-separated file with a mandatory header row.

    Parameters
    ----------
    path : path-like
    target : str, optional
        Column moved into ``y``.
    features : sequence of str, optional
        Feature columns to keep, in order.  Defaults to every non-target column.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or not any(cell.strip() for cell in rows[0]):
        raise DataError(f"{path}: empty file or missing header")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if any(cell.strip() for cell in r)]
    if not body:
        raise DataError(f"{path}: no data rows")
    if target is not None and target not in header:
        raise DataError(f"{path}: target column {target!r} not found in header {header}")
    if features is None:
        features = [h for h in header if h != target]
    missing = [f for f in features if f not in header]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    values = np.empty((len(body), len(header)))
    for r, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: row {r} has {len(row)} cells, header has {len(header)}")
        for c, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}: row {r}, column {header[c]!r}: non-numeric value {cell!r}") from None
            if not math.isfinite(v):
                raise DataError(f"{path}: row {r}, column {header[c]!r}: non-finite value {cell!r}")
            values[r - 2, c] = v
    cols = [header.index(f) for f in features]
    y = values[:, header.index(target)] if target is not None else None
    return Dataset(values[:, cols], y, list(features), target)


def write_csv(data: Dataset, path) -> None:
    """Write ``data`` with a header; floats use ``repr`` so reading back is exact."""
    names = list(data.feature_names) if data.feature_names is not None else [f"x{k}" for k in range(data.d)]
    header = names + ([data.target_name or "y"] if data.y is not None else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(data.n):
            row = [repr(float(v)) for v in data.X[i]]
            if data.y is not None:
                row.append(repr(float(data.y[i])))
            writer.writerow(row)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_json(obj: dict, path, seed=None) -> None:
    """Write a report, stamped with the package version, seed and RNG algorithm."""
    payload = {"version": __version__, "seed": seed, "rng": RNG_ALGORITHM, **_jsonable(obj)}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


@dataclass(frozen=True)
class Standardizer:
    """Per-feature centering and scaling, with optional target handling.

    ``target`` is ``"none"``, ``"center"`` or ``"standardize"``.
    """

    mean: np.ndarray
    std: np.ndarray
    target: str = "none"
    y_mean: float = 0.0
    y_std: float = 1.0

    @classmethod
    def fit(cls, data: Dataset, target: str = "none", drop_constant: bool = False) -> Tuple["Standardizer", np.ndarray]:
        """Fit on ``data``; also returns the mask of kept columns."""
        mean = data.X.mean(axis=0)
        std = data.X.std(axis=0)
        keep = std > 0
        if not np.all(keep) and not drop_constant:
            bad = np.flatnonzero(~keep).tolist()
            raise DataError(f"constant feature columns {bad}; pass drop_constant=True to drop them")
        y_mean, y_std = 0.0, 1.0
        if target != "none":
            if data.y is None:
                raise DataError("target standardization requested but the dataset has no target")
            y_mean = float(data.y.mean())
            if target == "standardize":
                y_std = float(data.y.std())
                if y_std == 0:
                    raise DataError("constant target cannot be standardized")
            elif target != "center":
                raise ValueError(f"unknown target handling {target!r}")
        return cls(mean[keep], std[keep], target, y_mean, y_std), keep

    def transform(self, data: Dataset, keep=None) -> Dataset:
        X = data.X if keep is None else data.X[:, keep]
        y = None if data.y is None else (data.y - self.y_mean) / self.y_std
        names = data.feature_names
        if names is not None and keep is not None:
            names = [n for n, k in zip(names, keep) if k]
        return Dataset((X - self.mean) / self.std, y, names, data.target_name)

    def inverse(self, data: Dataset) -> Dataset:
        y = None if data.y is None else data.y * self.y_std + self.y_mean
        return Dataset(data.X * self.std + self.mean, y, data.feature_names, data.target_name)


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a synthetic regression problem.

    ``coherence`` is the fraction of rows drawn from a Student-t with 2
    degrees of freedom instead of a standard Gaussian.
    """

    family: str = "single_index"
    n: int = 1000
    d: int = 10
    noise_std: float = 0.1
    coherence: float = 0.0
    activation: ActivationSpec = field(default_factory=swish_type)
    m: int = 3

    def __post_init__(self):
        if self.family not in ("linear", "single_index", "relu_two_layer"):
            raise ValueError(f"unknown family {self.family!r}")
        if self.n < 1 or self.d < 1:
            raise ValueError("n and d must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        if not 0 <= self.coherence <= 1:
            raise ValueError("coherence must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "n": self.n,
            "d": self.d,
            "noise_std": self.noise_std,
            "coherence": self.coherence,
            "activation": self.activation.to_config(),
            "m": self.m,
        }

    @classmethod
    def from_dict(cls, data) -> "SyntheticSpec":
        data = dict(data)
        if "activation" in data:
            data["activation"] = ActivationSpec.from_config(data["activation"])
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in data.items() if k in known})


@dataclass(frozen=True)
class SyntheticTruth:
    theta: np.ndarray
    heavy_rows: np.ndarray
    seed: int


def generate_synthetic(spec: SyntheticSpec, seed) -> Tuple[Dataset, SyntheticTruth]:
    """Sample features, a planted parameter and noisy targets, all from ``seed``."""
    rng = make_rng(seed)
    n, d = spec.n, spec.d
    X = rng.standard_normal((n, d))
    n_heavy = int(round(spec.coherence * n))
    heavy = np.sort(rng.choice(n, size=n_heavy, replace=False)) if n_heavy else np.array([], dtype=np.int64)
    if n_heavy:
        X[heavy] = rng.standard_t(2, size=(n_heavy, d))
    if spec.family == "relu_two_layer":
        m = spec.m
        a = rng.uniform(0.5, 1.5, size=m) * rng.choice([-1.0, 1.0], size=m)
        B = rng.standard_normal((m, d)) / np.sqrt(d)
        theta = np.column_stack([a, B]).ravel()
        clean = np.sum(spec.activation(np.maximum(X @ B.T, 0.0) * a), axis=1)
    else:
        theta = rng.standard_normal(d) / np.sqrt(d)
        u = X @ theta
        clean = u if spec.family == "linear" else spec.activation(u)
    y = clean + spec.noise_std * rng.standard_normal(n)
    names = [f"x{k}" for k in range(d)]
    return Dataset(X, y, names, "y"), SyntheticTruth(theta, heavy, int(seed))


def plant_outlier(data: Dataset, index: int, scale: float = 100.0) -> Dataset:
    """Copy of ``data`` with row ``index`` (features and target) multiplied by ``scale``."""
    X = data.X.copy()
    X[index] *= scale
    y = None
    if data.y is not None:
        y = data.y.copy()
        y[index] *= scale
    return Dataset(X, y, data.feature_names, data.target_name)
