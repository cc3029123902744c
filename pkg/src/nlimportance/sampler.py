"""With-replacement importance sampling and the subsampled loss.

A sample of size ``s`` drawn from ``tau`` carries weights ``1 / (s * tau_i)``,
which makes ``L_S(theta) = sum_j w_j f_{i_j}(theta)**2`` an unbiased estimate
of the full squared loss.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dual_matrix import DualMatrix, augment
from .scores import ScoreVector

__all__ = [
    "RNG_ALGORITHM",
    "SampleSet",
    "SampleSizeSpec",
    "EmbeddingReport",
    "make_rng",
    "draw",
    "draw_stratified",
    "full_enumeration",
    "subsampled_loss",
    "subsampled_loss_matrix",
    "sampled_dual_rows",
    "sample_size",
    "embedding_trial",
    "embedding_check",
    "calibrate_constant",
]

RNG_ALGORITHM = "numpy.random.PCG64"


def make_rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class SampleSet:
    indices: np.ndarray
    weights: np.ndarray
    seed: Optional[int]
    source_kind: str

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        w = np.asarray(self.weights, dtype=float)
        if idx.ndim != 1 or idx.size < 1:
            raise ValueError("a sample needs at least one index")
        if w.shape != idx.shape or np.any(w <= 0):
            raise ValueError("weights must be positive and match the indices")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "weights", w)

    @property
    def s(self) -> int:
        return self.indices.shape[0]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "rng": RNG_ALGORITHM,
            "kind": self.source_kind,
            "indices": [int(i) for i in self.indices],
            "weights": [float(w) for w in self.weights],
        }

    def to_json(self, path, **meta) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({**meta, **self.to_dict()}, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_dict(cls, data) -> "SampleSet":
        return cls(np.asarray(data["indices"]), np.asarray(data["weights"]), data.get("seed"), data["kind"])


def _cdf(probs):
    cdf = np.cumsum(probs)
    return cdf / cdf[-1]


def _weights(tau: ScoreVector, idx, s):
    return 1.0 / (s * tau.probs[idx])


def draw(tau: ScoreVector, s: int, seed) -> SampleSet:
    """Draw ``s`` i.i.d. indices from ``tau`` by inverse-CDF lookup.

    Zero-probability indices own empty CDF intervals and are never drawn.
    """
    if s < 1:
        raise ValueError(f"sample size must be positive, got {s}")
    u = make_rng(seed).random(int(s))
    idx = np.minimum(np.searchsorted(_cdf(tau.probs), u, side="right"), tau.n - 1)
    return SampleSet(idx, _weights(tau, idx, s), seed, tau.kind)


def draw_stratified(tau: ScoreVector, s: int, seed) -> SampleSet:
    """Systematic sampling: one shared random offset, ``s`` evenly spaced CDF points.

    Index ``i`` is still drawn ``s * tau_i`` times in expectation, so the
    usual weights keep the loss estimate unbiased.
    """
    if s < 1:
        raise ValueError(f"sample size must be positive, got {s}")
    u = (make_rng(seed).random() + np.arange(int(s))) / s
    idx = np.minimum(np.searchsorted(_cdf(tau.probs), u, side="right"), tau.n - 1)
    return SampleSet(idx, _weights(tau, idx, s), seed, tau.kind)


def full_enumeration(n: int) -> SampleSet:
    """Every index once with unit weight: the uniform ``s = n`` identity sample."""
    return SampleSet(np.arange(n), np.ones(n), None, "uniform")


def _check_weights(S: SampleSet, tau: Optional[ScoreVector]):
    if tau is None:
        return
    expected = _weights(tau, S.indices, S.s)
    if not np.allclose(S.weights, expected, rtol=1e-12, atol=0):
        raise ValueError("sample weights are inconsistent with the score vector")


def subsampled_loss(models, theta, S: SampleSet, tau: Optional[ScoreVector] = None) -> float:
    """``sum_j w_j f_{i_j}(theta)**2``.

    ``models`` is a vectorized family or a list of per-sample models.
    """
    _check_weights(S, tau)
    if hasattr(models, "residuals"):
        r = models.residuals(theta)[S.indices]
    else:
        r = np.array([models[i].evaluate(theta) for i in S.indices])
    return float(np.sum(S.weights * r * r))


def sampled_dual_rows(D: DualMatrix, S: SampleSet) -> np.ndarray:
    """Rows of ``D`` picked by ``S``, each scaled by ``sqrt(w_j)``."""
    return D.rows[S.indices] * np.sqrt(S.weights)[:, None]


def subsampled_loss_matrix(D: DualMatrix, S: SampleSet) -> float:
    """Matrix form ``||D_S [theta; 1]||**2`` of the subsampled loss."""
    r = sampled_dual_rows(D, S) @ augment(D.theta_snapshot)
    return float(r @ r)


@dataclass(frozen=True)
class SampleSizeSpec:
    p: int
    eps: float
    delta: float
    beta: float = 1.0
    constant: float = 1.0

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("p must be positive")
        if not 0 < self.eps < 1 or not 0 < self.delta < 1:
            raise ValueError("eps and delta must lie in (0, 1)")
        if not 0 < self.beta <= 1:
            raise ValueError("beta must lie in (0, 1]")
        if not self.constant > 0:
            raise ValueError("constant must be positive")


def sample_size(spec: SampleSizeSpec, mode: str = "uniform_theta") -> int:
    """Sample size for the embedding guarantees.

    ``mode="uniform_theta"`` is the bound valid over a whole constraint set,
    ``C (p log(p/delta) + p^2 log(p/eps)) / (beta eps^2)``.
    ``mode="fixed_theta"`` is the single-parameter bound
    ``C p log(p/delta) / (beta eps^2)``.
    """
    p, eps, delta = spec.p, spec.eps, spec.delta
    core = p * math.log(p / delta)
    if mode == "uniform_theta":
        core += p * p * math.log(p / eps)
    elif mode != "fixed_theta":
        raise ValueError(f"unknown mode {mode!r}")
    return max(1, math.ceil(spec.constant * core / (spec.beta * eps * eps)))


@dataclass(frozen=True)
class EmbeddingReport:
    trials: int
    s: int
    eps: float
    pass_rate: float
    battery_pass_rate: float
    theta_pass_rate: float
    subspace_pass_rate: float
    worst_distortion: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _unit_battery(dim, count, rng):
    V = rng.standard_normal((count, dim))
    return V / np.linalg.norm(V, axis=1, keepdims=True)


def _range_whitener(A):
    # W with A @ W orthonormal on range(A)
    _, sv, Vt = np.linalg.svd(A, full_matrices=False)
    rank = int(np.sum(sv > 1e-10 * sv[0]))
    return Vt[:rank].T / sv[:rank]


def embedding_trial(D: DualMatrix, S: SampleSet, eps: float, vectors=None, whitener=None):
    """One sample's embedding distortions.

    Returns ``(battery_ok, theta_ok, subspace_ok, worst)`` where ``worst`` is
    the largest ``|ratio - 1|`` over all directions of the column space.
    """
    A = D.rows
    AS = sampled_dual_rows(D, S)

    def ratios(V):
        full = np.sum((V @ A.T) ** 2, axis=1)
        sub = np.sum((V @ AS.T) ** 2, axis=1)
        keep = full > 0
        return sub[keep] / full[keep]

    battery_ok = True
    if vectors is not None and len(vectors):
        r = ratios(np.asarray(vectors))
        battery_ok = bool(np.all(np.abs(r - 1) <= eps))
    r_theta = ratios(augment(D.theta_snapshot)[None, :])
    theta_ok = bool(np.all(np.abs(r_theta - 1) <= eps))

    # every direction at once: eigenvalues of U^T S^T S U for an orthonormal
    # basis U of range(A)
    W = _range_whitener(A) if whitener is None else whitener
    G = AS @ W
    eig = np.linalg.eigvalsh(G.T @ G)
    worst = float(np.max(np.abs(eig - 1)))
    return battery_ok, theta_ok, worst <= eps, worst


def embedding_check(D: DualMatrix, tau: ScoreVector, s: int, eps: float, trials: int, seed,
                    n_vectors: int = 100) -> EmbeddingReport:
    """Monte-Carlo pass rate of the ``(1 +- eps)`` embedding property.

    A trial passes when both the random unit-vector battery and the direction
    ``[theta; 1]`` keep ``||D_S v||**2 / ||D v||**2`` within ``1 +- eps``.
    The exact all-directions rate is reported separately.
    """
    seeds = np.random.SeedSequence(seed).generate_state(trials + 1, dtype=np.uint64)
    vectors = _unit_battery(D.rows.shape[1], n_vectors, make_rng(int(seeds[0])))
    W = _range_whitener(D.rows)
    both = battery = theta = subspace = 0
    worst = 0.0
    for k in range(trials):
        S = draw(tau, s, int(seeds[k + 1]))
        b_ok, t_ok, sub_ok, w = embedding_trial(D, S, eps, vectors, W)
        battery += b_ok
        theta += t_ok
        subspace += sub_ok
        both += b_ok and t_ok
        worst = max(worst, w)
    return EmbeddingReport(trials, int(s), float(eps), both / trials, battery / trials, theta / trials,
                           subspace / trials, worst)


def calibrate_constant(D: DualMatrix, tau: ScoreVector, eps: float, delta: float, seed,
                       trials: int = 200, beta: float = 1.0, mode: str = "fixed_theta",
                       grid=None) -> float:
    """Smallest constant on ``grid`` whose sample size reaches pass rate ``1 - delta``.

    The default grid is geometric from ``1e-3`` to ``10`` (ratio about 1.26).
    """
    grid = np.geomspace(1e-3, 10.0, 41) if grid is None else grid
    p = D.rows.shape[1]
    for c in grid:
        s = sample_size(SampleSizeSpec(p, eps, delta, beta, float(c)), mode)
        if embedding_check(D, tau, s, eps, trials, seed).pass_rate >= 1 - delta:
            return float(c)
    raise RuntimeError("no constant on the grid reached the target pass rate")
