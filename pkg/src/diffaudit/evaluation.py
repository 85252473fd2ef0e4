"""Attack metrics over per-image score sets.

Lower scores mean more member-like throughout, and a candidate is
declared a member when its score is at or below the threshold.  The
metrics are all rank-exact: AUC is the Mann-Whitney statistic with
midrank ties, the success rate is the best balanced accuracy over every
achievable threshold, and TPR at a false-positive budget reads the
empirical step ROC without interpolation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ScoreSet:
    """Member and nonmember score vectors."""

    member: np.ndarray
    nonmember: np.ndarray

    def __post_init__(self) -> None:
        member = np.asarray(self.member, dtype=np.float64)
        nonmember = np.asarray(self.nonmember, dtype=np.float64)
        for name, arr in (("member", member), ("nonmember", nonmember)):
            if arr.ndim != 1 or arr.size == 0:
                raise ValueError(f"{name} scores must be a non-empty vector")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} scores contain non-finite values")
        object.__setattr__(self, "member", member)
        object.__setattr__(self, "nonmember", nonmember)


@dataclass(frozen=True)
class HistogramData:
    """Shared-bin densities for the two score populations."""

    edges: np.ndarray
    member_density: np.ndarray
    nonmember_density: np.ndarray
    member_counts: np.ndarray
    nonmember_counts: np.ndarray


@dataclass(frozen=True)
class AttackReport:
    """Aggregate audit outcome."""

    attack: str
    asr: float
    auc: float
    tpr_at_fpr: float
    fpr_target: float
    best_threshold: float
    roc_points: list[tuple[float, float]]
    histogram: HistogramData
    n_member: int
    n_nonmember: int
    n_quarantined: int = 0
    n_fallback: int = 0
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "attack": self.attack,
            "asr": self.asr,
            "auc": self.auc,
            "tpr_at_fpr": self.tpr_at_fpr,
            "fpr_target": self.fpr_target,
            "best_threshold": self.best_threshold,
            "roc_points": [[f, t] for f, t in self.roc_points],
            "histogram": {
                "edges": self.histogram.edges.tolist(),
                "member_density": self.histogram.member_density.tolist(),
                "nonmember_density": self.histogram.nonmember_density.tolist(),
                "member_counts": self.histogram.member_counts.tolist(),
                "nonmember_counts": self.histogram.nonmember_counts.tolist(),
            },
            "n_member": self.n_member,
            "n_nonmember": self.n_nonmember,
            "n_quarantined": self.n_quarantined,
            "n_fallback": self.n_fallback,
            "config": self.config,
        }
        return json.dumps(payload, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "AttackReport":
        d = json.loads(text)
        hist = HistogramData(
            edges=np.asarray(d["histogram"]["edges"], dtype=np.float64),
            member_density=np.asarray(d["histogram"]["member_density"], dtype=np.float64),
            nonmember_density=np.asarray(d["histogram"]["nonmember_density"], dtype=np.float64),
            member_counts=np.asarray(d["histogram"]["member_counts"], dtype=np.int64),
            nonmember_counts=np.asarray(d["histogram"]["nonmember_counts"], dtype=np.int64),
        )
        return cls(attack=d["attack"], asr=d["asr"], auc=d["auc"],
                   tpr_at_fpr=d["tpr_at_fpr"], fpr_target=d["fpr_target"],
                   best_threshold=d["best_threshold"],
                   roc_points=[(f, t) for f, t in d["roc_points"]],
                   histogram=hist, n_member=d["n_member"],
                   n_nonmember=d["n_nonmember"],
                   n_quarantined=d["n_quarantined"], n_fallback=d["n_fallback"],
                   config=d.get("config", {}))


def decide_membership(score: float, threshold: float) -> bool:
    """Member iff the score is at or below the threshold."""
    return score <= threshold


def compute_auc(scores: ScoreSet) -> float:
    """P(member score < nonmember score) + half the tie probability.

    Computed from midranks of the pooled sample, which is exact: every
    midrank is a multiple of one half, far below the float64 integer
    ceiling, so the pairwise-count identity holds bitwise.
    """
    m = scores.member
    n = scores.nonmember
    pooled = np.concatenate([m, n])
    order = np.argsort(pooled, kind="stable")
    ranks = np.empty(pooled.size, dtype=np.float64)
    sorted_vals = pooled[order]
    # Midranks: average 1-based rank over each tied run.
    i = 0
    while i < sorted_vals.size:
        j = i
        while j + 1 < sorted_vals.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    member_rank_sum = ranks[:m.size].sum()
    # Members should rank LOW; count nonmember-above-member pairs.
    u_member_high = member_rank_sum - m.size * (m.size + 1) / 2.0
    u_member_low = m.size * n.size - u_member_high
    return float(u_member_low / (m.size * n.size))


def _threshold_candidates(scores: ScoreSet) -> np.ndarray:
    """Every decision boundary that can matter: midpoints between adjacent
    distinct pooled scores, plus the two all-one-class extremes."""
    distinct = np.unique(np.concatenate([scores.member, scores.nonmember]))
    mids = 0.5 * (distinct[:-1] + distinct[1:])
    return np.concatenate([[-np.inf], mids, [np.inf]])


def _rates_at(scores: ScoreSet, thresholds: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(tpr, fpr) achieved when declaring member at score <= threshold."""
    m_sorted = np.sort(scores.member)
    n_sorted = np.sort(scores.nonmember)
    tp = np.searchsorted(m_sorted, thresholds, side="right")
    fp = np.searchsorted(n_sorted, thresholds, side="right")
    return tp / m_sorted.size, fp / n_sorted.size


def compute_asr(scores: ScoreSet, balanced: bool = True) -> tuple[float, float]:
    """Best achievable accuracy over all thresholds and the threshold
    reaching it (smallest when tied).

    Balanced accuracy (mean of TPR and TNR) is the default since member
    and nonmember sets are rarely the same size; raw accuracy is
    available for same-size comparisons.
    """
    thresholds = _threshold_candidates(scores)
    tpr, fpr = _rates_at(scores, thresholds)
    if balanced:
        acc = 0.5 * (tpr + (1.0 - fpr))
    else:
        n_m = scores.member.size
        n_n = scores.nonmember.size
        acc = (tpr * n_m + (1.0 - fpr) * n_n) / (n_m + n_n)
    best = int(np.argmax(acc))
    return float(acc[best]), float(thresholds[best])


def compute_asr_holdout(scores: ScoreSet, fraction: float = 0.5,
                        seed: int = 0, balanced: bool = True) -> tuple[float, float]:
    """Out-of-sample success rate: pick the threshold on one split,
    score it on the other.

    The default in-sample number is the conventional (optimistic) report;
    this mode trades some data for an honest generalization estimate.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    rng = np.random.default_rng([seed, 0xA5])

    def split(arr: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        order = rng.permutation(arr.size)
        cut = max(1, min(arr.size - 1, int(round(arr.size * fraction))))
        return arr[order[:cut]], arr[order[cut:]]

    m_fit, m_eval = split(scores.member)
    n_fit, n_eval = split(scores.nonmember)
    _, threshold = compute_asr(ScoreSet(member=m_fit, nonmember=n_fit),
                               balanced=balanced)
    tpr = float(np.mean(m_eval <= threshold))
    fpr = float(np.mean(n_eval <= threshold))
    if balanced:
        acc = 0.5 * (tpr + (1.0 - fpr))
    else:
        acc = (tpr * m_eval.size + (1.0 - fpr) * n_eval.size) \
            / (m_eval.size + n_eval.size)
    return float(acc), float(threshold)


def tpr_at_fpr(scores: ScoreSet, fpr_target: float = 0.01) -> float:
    """Largest TPR whose empirical FPR stays within the budget.

    Step ROC only: no interpolation between achievable operating points.
    """
    if not 0.0 < fpr_target < 1.0:
        raise ValueError(f"fpr_target must lie in (0, 1), got {fpr_target}")
    thresholds = _threshold_candidates(scores)
    tpr, fpr = _rates_at(scores, thresholds)
    feasible = fpr <= fpr_target
    return float(tpr[feasible].max())


def roc_points(scores: ScoreSet) -> list[tuple[float, float]]:
    """Empirical ROC as (fpr, tpr) pairs from (0, 0) up to (1, 1)."""
    thresholds = np.concatenate(
        [[-np.inf], np.unique(np.concatenate([scores.member, scores.nonmember]))])
    tpr, fpr = _rates_at(scores, thresholds)
    return [(float(f), float(t)) for f, t in zip(fpr, tpr)]


def histogram(scores: ScoreSet, bins: int = 50) -> HistogramData:
    """Density histograms on shared bins spanning the pooled score range.

    A degenerate range (every score identical) collapses to one unit-wide
    bin so the density still integrates to one per set.
    """
    if bins < 2:
        raise ValueError(f"need at least 2 bins, got {bins}")
    pooled = np.concatenate([scores.member, scores.nonmember])
    lo = float(pooled.min())
    hi = float(pooled.max())
    if lo == hi:
        edges = np.array([lo - 0.5, hi + 0.5])
    else:
        edges = np.linspace(lo, hi, bins + 1)
    m_counts, _ = np.histogram(scores.member, bins=edges)
    n_counts, _ = np.histogram(scores.nonmember, bins=edges)
    widths = np.diff(edges)
    m_density = m_counts / (scores.member.size * widths)
    n_density = n_counts / (scores.nonmember.size * widths)
    return HistogramData(edges=edges, member_density=m_density,
                         nonmember_density=n_density,
                         member_counts=m_counts, nonmember_counts=n_counts)


def evaluate(scores: ScoreSet, *, attack: str = "fcre", bins: int = 50,
             fpr_target: float = 0.01, balanced_asr: bool = True,
             n_quarantined: int = 0, n_fallback: int = 0,
             config: dict | None = None) -> AttackReport:
    """Assemble the full metric suite into one report."""
    asr, threshold = compute_asr(scores, balanced=balanced_asr)
    return AttackReport(
        attack=attack,
        asr=asr,
        auc=compute_auc(scores),
        tpr_at_fpr=tpr_at_fpr(scores, fpr_target),
        fpr_target=fpr_target,
        best_threshold=threshold,
        roc_points=roc_points(scores),
        histogram=histogram(scores, bins=bins),
        n_member=int(scores.member.size),
        n_nonmember=int(scores.nonmember.size),
        n_quarantined=n_quarantined,
        n_fallback=n_fallback,
        config=dict(config or {}),
    )
