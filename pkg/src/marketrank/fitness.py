"""Scalar fitness: a weighted combination of ranking metrics over a batch.

Per-query metrics are aggregated across the batch (mean, traffic-weighted
mean, or percentiles); market metrics are computed once from the full set
of batch rankings, because they measure cross-query structure. The batch
is the market an optimizer sees, so market indicators evaluated during
training are conditioned on it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import metrics
from .corpus import Dataset, QuerySet

logger = logging.getLogger(__name__)

PER_QUERY_METRICS = ("ndcg", "err", "err_ia")
MARKET_METRICS = ("gini", "incentive", "chi2")
METRIC_IDS = PER_QUERY_METRICS + MARKET_METRICS


@dataclass(frozen=True)
class FitnessTerm:
    metric: str
    weight: float
    k: int = 10


@dataclass(frozen=True)
class FitnessSpec:
    """Weighted metric combination plus aggregation choices.

    `gini_position` selects the rank position whose tier exposure is
    scored for equality. Traffic weighting applies to per-query metrics
    only; market metrics already embed their own weighting.
    """

    terms: tuple[FitnessTerm, ...]
    aggregation: str = "mean"                 # "mean" | "percentiles"
    percentiles: tuple[float, ...] = ()
    use_traffic_weighting: bool = False
    gini_position: int = 1

    def __post_init__(self) -> None:
        if not self.terms:
            raise ValueError("fitness spec needs at least one term")
        seen = set()
        for t in self.terms:
            if t.metric not in METRIC_IDS:
                raise ValueError(f"unknown metric {t.metric!r}; ids: {METRIC_IDS}")
            if t.metric in seen:
                raise ValueError(f"duplicate metric {t.metric!r} in fitness spec")
            seen.add(t.metric)
            if t.weight < 0:
                raise ValueError(f"negative weight for {t.metric!r}")
            if t.k < 1:
                raise ValueError(f"k must be >= 1 for {t.metric!r}")
        if not any(t.weight > 0 for t in self.terms):
            raise ValueError("at least one term must have positive weight")
        if self.aggregation not in ("mean", "percentiles"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.aggregation == "percentiles" and not self.percentiles:
            raise ValueError("percentile aggregation needs percentiles")
        if self.gini_position < 1:
            raise ValueError("gini_position must be >= 1")

    def active_terms(self) -> tuple[FitnessTerm, ...]:
        return tuple(t for t in self.terms if t.weight > 0)

    def to_dict(self) -> dict:
        return {
            "terms": [
                {"metric": t.metric, "weight": t.weight, "k": t.k}
                for t in self.terms
            ],
            "aggregation": self.aggregation,
            "percentiles": list(self.percentiles),
            "use_traffic_weighting": self.use_traffic_weighting,
            "gini_position": self.gini_position,
        }

    @staticmethod
    def from_dict(raw: dict) -> "FitnessSpec":
        return FitnessSpec(
            terms=tuple(
                FitnessTerm(t["metric"], float(t["weight"]), int(t.get("k", 10)))
                for t in raw["terms"]
            ),
            aggregation=raw.get("aggregation", "mean"),
            percentiles=tuple(float(p) for p in raw.get("percentiles", ())),
            use_traffic_weighting=bool(raw.get("use_traffic_weighting", False)),
            gini_position=int(raw.get("gini_position", 1)),
        )


@dataclass(frozen=True)
class FitnessReport:
    combined: float
    per_metric: dict[str, float] = field(default_factory=dict)
    batch_query_ids: tuple[str, ...] = ()


def combine(spec: FitnessSpec, per_metric: dict[str, float]) -> float:
    """Weighted average of metric scores; invariant to weight rescaling."""
    num = sum(t.weight * per_metric[t.metric] for t in spec.terms)
    denom = sum(t.weight for t in spec.terms)
    return num / denom


def aggregate_per_query(
    spec: FitnessSpec, scores: Sequence[float], weights: Sequence[float]
) -> float:
    if spec.aggregation == "percentiles":
        # Percentile aggregation targets the score distribution's shape;
        # traffic weights do not apply.
        return metrics.percentile_aggregate(scores, spec.percentiles)
    if spec.use_traffic_weighting:
        return metrics.weighted_importance(zip(weights, scores))
    return float(np.mean(scores))


def evaluate_fitness(
    rank_fn: Callable[[QuerySet], metrics.Ranking],
    queries: Sequence[QuerySet],
    dataset: Dataset,
    spec: FitnessSpec,
) -> FitnessReport:
    """Rank every query once and score the batch against the spec."""
    if not queries:
        raise ValueError("fitness batch must be non-empty")
    rankings = [rank_fn(q) for q in queries]
    weights = [q.traffic_weight for q in queries]

    per_metric: dict[str, float] = {}
    for term in spec.terms:
        if term.metric == "ndcg":
            scores = [
                metrics.ndcg_at_k(r, q, term.k) for r, q in zip(rankings, queries)
            ]
            per_metric["ndcg"] = aggregate_per_query(spec, scores, weights)
        elif term.metric == "err":
            scores = []
            for r, q in zip(rankings, queries):
                grade_of = {d.doc_id: g for d, g in q.judged_docs}
                scores.append(
                    metrics.err_at_k(
                        [grade_of[d.doc_id] for d in r.ordered_docs], term.k
                    )
                )
            per_metric["err"] = aggregate_per_query(spec, scores, weights)
        elif term.metric == "err_ia":
            scores = [
                metrics.err_ia_at_k(r, q, term.k) for r, q in zip(rankings, queries)
            ]
            per_metric["err_ia"] = aggregate_per_query(spec, scores, weights)
        elif term.metric == "gini":
            per_metric["gini"] = _gini_or_fallback(rankings, dataset, spec)
        elif term.metric == "incentive":
            per_metric["incentive"] = metrics.incentive_score(rankings, term.k)
        elif term.metric == "chi2":
            per_metric["chi2"] = metrics.chi2_uniformity(rankings, dataset, term.k)

    return FitnessReport(
        combined=combine(spec, per_metric),
        per_metric=per_metric,
        batch_query_ids=tuple(q.query_id for q in queries),
    )


def _gini_or_fallback(
    rankings: Sequence[metrics.Ranking], dataset: Dataset, spec: FitnessSpec
) -> float:
    ledger = metrics.build_ledger(rankings, dataset, spec.gini_position)
    if sum(ledger.tier_wealth) <= 0.0:
        # Degenerate batch (no purchases behind any ranked query); score as
        # perfectly equal rather than aborting a training run.
        logger.warning(
            "zero wealth at position %d; gini score falls back to 1.0",
            spec.gini_position,
        )
        return 1.0
    return metrics.gini_score(ledger)[1]


# --- Training-time sampling --------------------------------------------------


def subsample_documents(
    query: QuerySet, m: int, rng: np.random.Generator
) -> QuerySet:
    """Uniform without-replacement sample of at most m judged docs.

    Greedy ranking is quadratic in document count, so training passes work
    on a fresh subsample per iteration. The view's topic distribution is
    recomputed from the surviving docs.
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    n = len(query.judged_docs)
    if m >= n:
        return query
    idx = sorted(rng.choice(n, size=m, replace=False).tolist())
    docs = tuple(query.judged_docs[i] for i in idx)
    topic_mass: dict[str, float] = {}
    for doc, grade in docs:
        topic_mass[doc.leaf_category] = topic_mass.get(doc.leaf_category, 0.0) + grade
    total = sum(topic_mass.values())
    return replace(
        query,
        judged_docs=docs,
        topic_dist={t: v / total for t, v in topic_mass.items()},
    )


def sample_batch(
    dataset: Dataset, batch_size: int, rng: np.random.Generator
) -> list[QuerySet]:
    """Uniform without-replacement batch of queries, in dataset order."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    n = len(dataset.queries)
    if batch_size >= n:
        return list(dataset.queries)
    idx = sorted(rng.choice(n, size=batch_size, replace=False).tolist())
    return [dataset.queries[i] for i in idx]
