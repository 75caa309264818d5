"""Relevance, diversity, and market-level ranking metrics.

All functions are pure and score in [0, 1] unless noted. Per-query metrics
(NDCG, ERR, intent-aware ERR) take a single ranking; market metrics (Gini
equality, incentives, chi-square uniformity) are functions of the whole
set of rankings a policy produced, since they measure cross-query effects
that no single result page can exhibit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .corpus import GRADE_MAX, Dataset, Document, QuerySet


@dataclass(frozen=True)
class Ranking:
    """An ordered result page produced by a policy for one query."""

    query_id: str
    ordered_docs: tuple[Document, ...]


@dataclass(frozen=True)
class MarketLedger:
    """Per-tier population shares and accumulated wealth."""

    tier_population: tuple[float, ...]
    tier_wealth: tuple[float, ...]


def check_ranking(ranking: Ranking, query: QuerySet) -> None:
    ids = [d.doc_id for d in ranking.ordered_docs]
    if len(set(ids)) != len(ids):
        raise ValueError(f"ranking for {ranking.query_id!r} repeats documents")
    judged = {d.doc_id for d in query.docs}
    unknown = [i for i in ids if i not in judged]
    if unknown:
        raise ValueError(
            f"ranking for {ranking.query_id!r} contains unjudged docs {unknown}"
        )


# --- Relevance ---------------------------------------------------------------


def dcg_at_k(grades_in_rank_order: Sequence[int], k: int) -> float:
    """Discounted cumulative gain over the first k positions."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    total = 0.0
    for pos, grade in enumerate(grades_in_rank_order[:k], start=1):
        total += (2.0 ** grade - 1.0) / math.log2(pos + 1)
    return total


def ideal_dcg_at_k(grades: Sequence[int], k: int) -> float:
    return dcg_at_k(sorted(grades, reverse=True), k)


def ndcg_at_k(ranking: Ranking, query: QuerySet, k: int) -> float:
    """DCG of the ranking normalized by the best achievable DCG.

    When every grade is minimal the ideal DCG can be 0 only for empty
    inputs; if it is 0 we return 1.0, since no policy can do better than
    an all-worthless list.
    """
    grade_of = {d.doc_id: g for d, g in query.judged_docs}
    ranked_grades = [grade_of[d.doc_id] for d in ranking.ordered_docs]
    ideal = ideal_dcg_at_k(list(grade_of.values()), k)
    if ideal == 0.0:
        return 1.0
    return dcg_at_k(ranked_grades, k) / ideal


# --- Cascade-model relevance -------------------------------------------------


def grade_to_prob(grade: int, max_grade: int = GRADE_MAX) -> float:
    """Probability a user is satisfied by a document of the given grade."""
    if not 0 <= grade <= max_grade:
        raise ValueError(f"grade {grade} outside [0, {max_grade}]")
    return (2.0 ** grade - 1.0) / (2.0 ** max_grade)


def err_at_k(
    grades_in_rank_order: Sequence[int], k: int, max_grade: int = GRADE_MAX
) -> float:
    """Expected reciprocal rank under the cascade browsing model.

    The user scans down the page and stops at position j with probability
    proportional to being unsatisfied by everything above; each stop
    contributes 1/j.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    err = 0.0
    p_continue = 1.0
    for pos, grade in enumerate(grades_in_rank_order[:k], start=1):
        satisfied = grade_to_prob(grade, max_grade)
        err += p_continue * satisfied / pos
        p_continue *= 1.0 - satisfied
    return err


def err_ia_at_k(ranking: Ranking, query: QuerySet, k: int) -> float:
    """Intent-aware ERR: topic-masked ERR averaged over the query's topics.

    For each topic with positive probability, documents outside the topic
    are treated as grade 0 (never satisfying), and the topic's ERR is
    weighted by the topic probability.
    """
    top = ranking.ordered_docs[:k]
    grade_of = {d.doc_id: g for d, g in query.judged_docs}
    total = 0.0
    for topic, prob in query.topic_dist.items():
        if prob <= 0.0:
            continue
        masked = [
            grade_of[d.doc_id] if d.leaf_category == topic else 0 for d in top
        ]
        total += prob * err_at_k(masked, k)
    return total


# --- Cross-query aggregation -------------------------------------------------


def weighted_importance(per_query_scores: Iterable[tuple[float, float]]) -> float:
    """Importance-weighted mean of per-query scores."""
    num = 0.0
    denom = 0.0
    for weight, score in per_query_scores:
        if weight < 0:
            raise ValueError(f"negative importance weight {weight!r}")
        num += weight * score
        denom += weight
    if denom == 0.0:
        raise ValueError("all importance weights are zero; weighted mean undefined")
    return num / denom


def percentile_aggregate(
    scores: Sequence[float], percentiles: Sequence[float]
) -> float:
    """Mean of nearest-rank percentile values of the score distribution.

    Optimizing chosen percentiles instead of the mean reduces the pull of
    outlier queries that are trivially easy or impossible to rank.
    """
    if not scores:
        raise ValueError("scores must be non-empty")
    if not percentiles:
        raise ValueError("percentiles must be non-empty")
    ordered = sorted(scores)
    n = len(ordered)
    picked = []
    for p in percentiles:
        if not 0.0 < p <= 100.0:
            raise ValueError(f"percentile {p!r} outside (0, 100]")
        rank = max(1, math.ceil(p / 100.0 * n))
        picked.append(ordered[rank - 1])
    return sum(picked) / len(picked)


# --- Market-level metrics ----------------------------------------------------


def incentive_score(rankings: Sequence[Ranking], k: int) -> float:
    """Fraction of the top-k slots across all queries holding premium docs.

    The denominator is always k per query, so short result lists are
    penalized for their missing positions.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not rankings:
        raise ValueError("incentive_score needs at least one ranking")
    hits = sum(
        1 for r in rankings for d in r.ordered_docs[:k] if d.premium
    )
    return hits / (k * len(rankings))


def build_ledger(
    rankings: Sequence[Ranking], dataset: Dataset, position: int = 1
) -> MarketLedger:
    """Accumulate per-tier wealth from the doc shown at a rank position.

    Each query pays its purchase count to the seller tier of the document
    at `position` (1-based); rankings shorter than the position are
    skipped. Population shares are copied from the dataset.
    """
    if position < 1:
        raise ValueError(f"position must be >= 1, got {position}")
    queries = dataset.query_index()
    wealth = [0.0] * dataset.tier_count
    for r in rankings:
        if len(r.ordered_docs) < position:
            continue
        doc = r.ordered_docs[position - 1]
        wealth[doc.seller_tier - 1] += queries[r.query_id].purchase_count
    return MarketLedger(
        tier_population=dataset.tier_population, tier_wealth=tuple(wealth)
    )


def lorenz_points(ledger: MarketLedger) -> tuple[np.ndarray, np.ndarray]:
    """Lorenz curve: cumulative population share vs cumulative wealth share.

    Tiers are ordered by wealth-to-population ratio; the origin is
    prepended, so the curve runs from (0, 0) to (1, 1).
    """
    pop = np.asarray(ledger.tier_population, dtype=float)
    wealth = np.asarray(ledger.tier_wealth, dtype=float)
    total = wealth.sum()
    if total <= 0.0:
        raise ValueError("total wealth is zero; Lorenz curve undefined")

    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(pop > 0, wealth / np.where(pop > 0, pop, 1.0), np.inf)
    # Zero-population tiers without wealth are inert; with wealth they sort
    # last (all their wealth sits on a zero-width population slice).
    ratio = np.where((pop == 0) & (wealth == 0), 0.0, ratio)
    order = np.argsort(ratio, kind="stable")

    cum_pop = np.concatenate(([0.0], np.cumsum(pop[order])))
    cum_wealth = np.concatenate(([0.0], np.cumsum(wealth[order]) / total))
    return cum_pop, cum_wealth


def gini_score(ledger: MarketLedger) -> tuple[float, float]:
    """Gini index of the wealth distribution and its equality score 1-gini.

    The Lorenz curve is integrated by trapezoids; proportional wealth
    yields gini exactly 0, total concentration approaches 1.
    """
    cum_pop, cum_wealth = lorenz_points(ledger)
    widths = np.diff(cum_pop)
    gini = 1.0 - float(np.sum(widths * (cum_wealth[1:] + cum_wealth[:-1])))
    return gini, 1.0 - gini


def observation_weighted_gini(
    rankings: Sequence[Ranking], dataset: Dataset, positions: Sequence[int]
) -> float:
    """Equality scores per rank position averaged by observation probability.

    Positions where users rarely look contribute proportionally less.
    """
    if not positions:
        raise ValueError("positions must be non-empty")
    num = 0.0
    denom = 0.0
    for pos in positions:
        weight = dataset.observation_at(pos)
        if weight == 0.0:
            continue
        _, score = gini_score(build_ledger(rankings, dataset, pos))
        num += weight * score
        denom += weight
    if denom == 0.0:
        raise ValueError("no positive observation weight over the given positions")
    return num / denom


def chi2_uniformity(
    rankings: Sequence[Ranking],
    dataset: Dataset,
    k: int,
    category_of: Callable[[Document], str] | None = None,
) -> float:
    """Inverse chi-square fit of top-k category occupancy to uniform.

    The expected count per category is k*|Q|/|C|, so expectations total
    the number of scored slots even for k > 1.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not dataset.category_set:
        raise ValueError("dataset has no categories")
    if not rankings:
        raise ValueError("chi2_uniformity needs at least one ranking")
    if category_of is None:
        category_of = lambda doc: doc.leaf_category

    counts = dict.fromkeys(dataset.category_set, 0)
    for r in rankings:
        for d in r.ordered_docs[:k]:
            cat = category_of(d)
            if cat not in counts:
                raise ValueError(f"category {cat!r} not in dataset category_set")
            counts[cat] += 1
    expected = k * len(rankings) / len(dataset.category_set)
    chi2 = sum((c - expected) ** 2 for c in counts.values()) / expected
    return 1.0 / (1.0 + chi2)
