"""Bias metrics: group-conditional distance gaps, retrieval skew, worst-group AUC.

KL divergence and skew use the natural logarithm throughout; reports record
that so the numbers stay interpretable.
"""

from __future__ import annotations

import math
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DegenerateGroup,
    EmptyGroup,
    EmptyRetrieval,
    SupportViolation,
    UnknownLabel,
)
from .vectors import cosine_distance

PROB_EPS = 1e-12


def group_distance_gap(z, groups: Mapping[str, Sequence]) -> float:
    """Largest gap between per-group mean cosine distances from ``z``.

    For two groups this is the absolute difference of the group-average
    distances; for more it is the maximum over unordered group pairs.
    Expectations are replaced by sample averages over the supplied members.
    """
    if not groups:
        raise EmptyGroup("no groups supplied")
    mean_dists = []
    for value, members in groups.items():
        rows = np.asarray(members, dtype=np.float64)
        if rows.ndim == 1:
            rows = rows.reshape(1, -1) if rows.size else rows.reshape(0, 0)
        if rows.shape[0] == 0:
            raise EmptyGroup(f"group {value!r} is empty")
        mean_dists.append(float(np.mean([cosine_distance(z, row) for row in rows])))
    if len(mean_dists) == 1:
        return 0.0
    worst = 0.0
    for i in range(len(mean_dists)):
        for j in range(i + 1, len(mean_dists)):
            worst = max(worst, abs(mean_dists[i] - mean_dists[j]))
    return worst


def _check_support(retrieved: Mapping[str, float], prior: Mapping[str, float]) -> None:
    for value, p in retrieved.items():
        if p > PROB_EPS and prior.get(value, 0.0) <= PROB_EPS:
            raise SupportViolation(
                f"retrieved mass {p:g} on {value!r} which has zero prior probability"
            )


def kl_divergence(retrieved: Mapping[str, float], prior: Mapping[str, float]) -> float:
    """KL(retrieved || prior) in nats, with 0*ln(0) taken as 0."""
    _check_support(retrieved, prior)
    total = 0.0
    for value, p in retrieved.items():
        if p > PROB_EPS:
            total += p * math.log(p / prior[value])
    return total


def max_skew(retrieved: Mapping[str, float], prior: Mapping[str, float]) -> float:
    """Largest log-ratio of retrieved frequency to prior frequency.

    Values with zero retrieved mass are excluded (their skew is -inf and the
    metric targets the most over-represented group).
    """
    _check_support(retrieved, prior)
    ratios = [
        math.log(p / prior[value])
        for value, p in retrieved.items()
        if p > PROB_EPS
    ]
    if not ratios:
        raise EmptyRetrieval("retrieved distribution has no support")
    return max(ratios)


def _group_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """ROC AUC via the Mann-Whitney rank statistic, ties credited 0.5."""
    n_pos = int(labels.sum())
    n_neg = int(labels.shape[0] - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise DegenerateGroup("AUC needs at least one positive and one negative")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.shape[0], dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < sorted_scores.shape[0]:
        j = i
        while j + 1 < sorted_scores.shape[0] and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        # midrank over the tie run, 1-based
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum = float(ranks[labels].sum())
    u_stat = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u_stat / (n_pos * n_neg)


def worst_group_auc(scores_by_group: Mapping[str, Iterable[tuple[float, object]]]) -> float:
    """Minimum over groups of the similarity-score ROC AUC.

    Each group supplies (score, label) pairs where a truthy label marks the
    positive class. Raises ``DegenerateGroup`` if any group is single-class.
    """
    if not scores_by_group:
        raise EmptyGroup("no groups supplied")
    worst = None
    for value, pairs in scores_by_group.items():
        pairs = list(pairs)
        if not pairs:
            raise DegenerateGroup(f"group {value!r} has no scores")
        scores = np.array([float(s) for s, _ in pairs])
        labels = np.array([bool(l) for _, l in pairs])
        try:
            auc = _group_auc(scores, labels)
        except DegenerateGroup as exc:
            raise DegenerateGroup(f"group {value!r}: {exc}") from None
        worst = auc if worst is None else min(worst, auc)
    return worst


def empirical_distribution(labels: Iterable[str], space) -> dict[str, float]:
    """Per-value frequency of ``labels`` over the attribute space's values."""
    counts = {value: 0 for value in space.values}
    total = 0
    for label in labels:
        if label not in counts:
            raise UnknownLabel(f"label {label!r} not in attribute {space.name!r}")
        counts[label] += 1
        total += 1
    if total == 0:
        raise EmptyRetrieval("cannot build a distribution from an empty retrieval")
    return {value: counts[value] / total for value in space.values}
