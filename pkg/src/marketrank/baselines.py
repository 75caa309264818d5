"""Re-ranking baseline: maximal marginal relevance over taxonomy overlap.

MMR greedily balances a per-document relevance score against similarity
to the documents already picked, where similarity is the Jaccard overlap
of taxonomy-path nodes. The relevance model is either the grade oracle or
a trained relevance-only pointwise checkpoint standing in for a learned
ranker; it has no awareness of tiers or prices, which is exactly what
makes it a useful contrast for market-aware policies.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import fitness as fitness_mod
from .corpus import Dataset, Document
from .fitness import FitnessReport, FitnessSpec
from .metrics import Ranking
from .policy import _score_matrix, load_checkpoint
from .rngutil import derive_rng

GRADE_ORACLE = "grade_oracle"
DEFAULT_LAMBDA_GRID = tuple(round(0.05 * i, 2) for i in range(21))


@dataclass(frozen=True)
class MmrConfig:
    blend_lambda: float
    k_rank: int = 10
    relevance_source: str = GRADE_ORACLE

    def __post_init__(self) -> None:
        if not 0.0 <= self.blend_lambda <= 1.0:
            raise ValueError(f"blend_lambda {self.blend_lambda} outside [0, 1]")
        if self.k_rank < 1:
            raise ValueError("k_rank must be >= 1")


def jaccard_similarity(a: Document, b: Document) -> float:
    """Overlap of taxonomy-path node sets."""
    sa, sb = set(a.taxonomy_path), set(b.taxonomy_path)
    if not sa or not sb:
        raise ValueError("taxonomy paths must be non-empty")
    return len(sa & sb) / len(sa | sb)


def mmr_rank(
    scores: Mapping[str, float],
    docs: Sequence[Document],
    config: MmrConfig,
    query_id: str = "",
) -> Ranking:
    """Greedy MMR selection.

    Scores must already be min-max normalized to [0, 1] per query. The
    first pick is by pure relevance; afterwards each candidate is scored
    blend*rel - (1-blend)*max-similarity-to-selected. Ties break toward
    the lowest doc_id.
    """
    if not docs:
        raise ValueError("mmr_rank needs at least one document")
    candidates = sorted(docs, key=lambda d: d.doc_id)
    missing = [d.doc_id for d in candidates if d.doc_id not in scores]
    if missing:
        raise ValueError(f"scores missing for docs {missing}")

    lam = config.blend_lambda
    selected: list[Document] = []
    remaining = list(candidates)
    while remaining and len(selected) < config.k_rank:
        best_idx = 0
        best_val = -np.inf
        for i, doc in enumerate(remaining):
            if selected:
                novelty = max(jaccard_similarity(doc, s) for s in selected)
                val = lam * scores[doc.doc_id] - (1.0 - lam) * novelty
            else:
                val = scores[doc.doc_id]
            if val > best_val:
                best_val = val
                best_idx = i
        selected.append(remaining.pop(best_idx))
    return Ranking(query_id=query_id, ordered_docs=tuple(selected))


def _minmax(raw: dict[str, float]) -> dict[str, float]:
    lo, hi = min(raw.values()), max(raw.values())
    if hi > lo:
        return {k: (v - lo) / (hi - lo) for k, v in raw.items()}
    return {k: 0.5 for k in raw}  # constant scores carry no ordering signal


def relevance_scores(
    dataset: Dataset, source: str
) -> dict[str, dict[str, float]]:
    """Per-query min-max-normalized relevance scores by doc_id.

    `source` is either the literal "grade_oracle" or a checkpoint path of
    a trained pointwise relevance policy. Stochastic checkpoints are
    scored with a fixed derived stream, so results are deterministic.
    """
    out: dict[str, dict[str, float]] = {}
    if source == GRADE_ORACLE:
        for q in dataset.queries:
            out[q.query_id] = _minmax(
                {d.doc_id: float(g) for d, g in q.judged_docs}
            )
        return out

    params, config = load_checkpoint(source)
    for qi, q in enumerate(dataset.queries):
        candidates = sorted(q.docs, key=lambda d: d.doc_id)
        feats = np.asarray([d.features for d in candidates], dtype=float)
        rng = derive_rng(0x5C03E, qi)
        query_noise = rng.random() if (config.stochastic and config.noise_per_query) else None
        values = _score_matrix(
            params, config, feats, np.zeros(config.feature_dim), rng, query_noise
        )
        out[q.query_id] = _minmax(
            {d.doc_id: float(v) for d, v in zip(candidates, values)}
        )
    return out


def rank_all(
    dataset: Dataset,
    scores: dict[str, dict[str, float]],
    config: MmrConfig,
) -> list[Ranking]:
    return [
        mmr_rank(scores[q.query_id], q.docs, config, query_id=q.query_id)
        for q in dataset.queries
    ]


def tune_lambda(
    dataset: Dataset,
    spec: FitnessSpec,
    grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
    scores: dict[str, dict[str, float]] | None = None,
    k_rank: int = 10,
    relevance_source: str = GRADE_ORACLE,
) -> tuple[float, FitnessReport]:
    """Grid-search the blend parameter on the given (validation) split.

    Evaluates the combined fitness of full-split MMR rankings at each grid
    point; ties favor the larger blend (more relevance-driven).
    """
    if not grid:
        raise ValueError("grid must be non-empty")
    if any(not 0.0 <= g <= 1.0 for g in grid):
        raise ValueError("grid values must lie in [0, 1]")
    if scores is None:
        scores = relevance_scores(dataset, relevance_source)

    best: tuple[float, FitnessReport] | None = None
    for lam in grid:
        config = MmrConfig(blend_lambda=lam, k_rank=k_rank)
        by_query = {
            q.query_id: mmr_rank(scores[q.query_id], q.docs, config, q.query_id)
            for q in dataset.queries
        }
        report = fitness_mod.evaluate_fitness(
            lambda q: by_query[q.query_id], list(dataset.queries), dataset, spec
        )
        if best is None or (report.combined, lam) > (best[1].combined, best[0]):
            best = (lam, report)
    return best
