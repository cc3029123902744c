"""Ranking samples by score, flagging outliers, and tracking scores over training."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np
from scipy.stats import spearmanr

from .dual_matrix import build_dual_matrix
from .scores import ScoreVector, leverage_scores, norm_scores

__all__ = [
    "RankingReport",
    "OutlierReport",
    "EvolutionReport",
    "rank",
    "flag_outliers",
    "score_evolution",
]


@dataclass(frozen=True)
class RankingReport:
    ordering: np.ndarray
    top_k: np.ndarray
    bottom_k: np.ndarray
    scores: ScoreVector = field(repr=False)
    checkpoint_label: str = ""

    def positions(self) -> np.ndarray:
        """Rank position of every sample (0 = highest score)."""
        pos = np.empty_like(self.ordering)
        pos[self.ordering] = np.arange(self.ordering.size)
        return pos

    def to_dict(self) -> dict:
        return {
            "checkpoint_label": self.checkpoint_label,
            "kind": self.scores.kind,
            "top_k": self.top_k.tolist(),
            "bottom_k": self.bottom_k.tolist(),
            "ordering": self.ordering.tolist(),
        }

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["rank", "index", "score", "kind"])
            for r, i in enumerate(self.ordering):
                writer.writerow([r, int(i), repr(float(self.scores.probs[i])), self.scores.kind])


def rank(tau: ScoreVector, k: int, label: str = "") -> RankingReport:
    """Sort descending by score; ties keep ascending index order."""
    n = tau.n
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    ordering = np.argsort(-tau.probs, kind="stable")
    return RankingReport(ordering, ordering[:k].copy(), ordering[::-1][:k].copy(), tau, label)


@dataclass(frozen=True)
class OutlierReport:
    flagged: np.ndarray
    threshold_rule: str
    score_cutoff: float

    def to_dict(self) -> dict:
        return {
            "flagged": self.flagged.tolist(),
            "threshold_rule": self.threshold_rule,
            "score_cutoff": self.score_cutoff,
        }


def flag_outliers(tau: ScoreVector, top_fraction: float = None, mad_multiplier: float = None) -> OutlierReport:
    """Flag high-score samples.

    Exactly one rule is used: ``top_fraction=q`` flags the ``ceil(q n)``
    highest scores; ``mad_multiplier=k`` flags scores above
    ``median + k * MAD``.  With zero MAD nothing is flagged.
    """
    if (top_fraction is None) == (mad_multiplier is None):
        raise ValueError("give exactly one of top_fraction or mad_multiplier")
    probs = tau.probs
    if top_fraction is not None:
        if not 0 < top_fraction < 1:
            raise ValueError("top_fraction must lie in (0, 1)")
        # round first so that e.g. (1/n) * n is not pushed up to 2 by float error
        count = math.ceil(round(top_fraction * tau.n, 9))
        ordering = np.argsort(-probs, kind="stable")
        flagged = np.sort(ordering[:count])
        return OutlierReport(flagged, f"top_fraction q={top_fraction!r}", float(probs[ordering[count - 1]]))
    if not mad_multiplier > 0:
        raise ValueError("mad_multiplier must be positive")
    med = float(np.median(probs))
    mad = float(np.median(np.abs(probs - med)))
    cutoff = med + mad_multiplier * mad
    rule = f"median+{mad_multiplier!r}*MAD"
    if mad == 0:
        return OutlierReport(np.array([], dtype=np.int64), rule, cutoff)
    return OutlierReport(np.flatnonzero(probs > cutoff), rule, cutoff)


@dataclass(frozen=True)
class EvolutionReport:
    reports: List[RankingReport]
    rank_correlation: np.ndarray

    def to_dict(self) -> dict:
        return {
            "checkpoints": [r.to_dict() for r in self.reports],
            "spearman": self.rank_correlation.tolist(),
        }


def score_evolution(family, checkpoints: Sequence, kind: str = "nonlinear_leverage", k: int = 10,
                    labels: Sequence[str] = None) -> EvolutionReport:
    """Rank samples at each checkpoint and correlate the orderings.

    Correlations are Spearman coefficients of the tie-broken rank positions,
    so they stay defined even for constant score vectors.
    """
    if len(checkpoints) == 0:
        raise ValueError("no checkpoints given")
    labels = labels or [f"checkpoint_{i}" for i in range(len(checkpoints))]
    scorer = leverage_scores if kind == "nonlinear_leverage" else norm_scores
    if kind not in ("nonlinear_leverage", "nonlinear_norm"):
        raise ValueError(f"unsupported kind {kind!r}")
    reports = []
    for theta, label in zip(checkpoints, labels):
        tau = scorer(build_dual_matrix(family, theta))
        reports.append(rank(tau, min(k, tau.n), label))
    c = len(reports)
    corr = np.ones((c, c))
    for i in range(c):
        for j in range(i + 1, c):
            pi, pj = reports[i].positions(), reports[j].positions()
            rho = 1.0 if np.array_equal(pi, pj) else float(spearmanr(pi, pj)[0])
            corr[i, j] = corr[j, i] = rho
    return EvolutionReport(reports, corr)

