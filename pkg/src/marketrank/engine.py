"""Vectorized batch evaluation of ranking policies.

Training evaluates thousands of candidate parameter vectors per run, each
against a batch of queries. This module precomputes the batch once as
dense arrays and ranks/scores all queries of a batch with numpy kernels.
It mirrors the reference implementations in `policy` and `metrics`
exactly (same tie-breaking, same truncation rules); the equivalence is
pinned by tests.
"""

from __future__ import annotations

import logging
from typing import Sequence

import numpy as np

from . import fitness as fitness_mod
from . import metrics
from .corpus import GRADE_MAX, Dataset, QuerySet
from .fitness import FitnessReport, FitnessSpec
from .policy import ParamVector, PolicyConfig

logger = logging.getLogger(__name__)

_NEG_INF = -np.inf


class BatchContext:
    """Dense-array view of a query batch for one fitness configuration."""

    def __init__(
        self,
        queries: Sequence[QuerySet],
        dataset: Dataset,
        spec: FitnessSpec,
        policy_config: PolicyConfig,
    ) -> None:
        if not queries:
            raise ValueError("batch must be non-empty")
        self.spec = spec
        self.policy_config = policy_config
        self.query_ids = tuple(q.query_id for q in queries)

        nq = len(queries)
        F = dataset.feature_dim
        self.n_docs = np.array([len(q.judged_docs) for q in queries], dtype=int)
        m = int(self.n_docs.max())

        self.feats = np.zeros((nq, m, F))
        self.grades = np.zeros((nq, m))
        self.premium = np.zeros((nq, m), dtype=bool)
        self.tier = np.zeros((nq, m), dtype=int)
        self.leaf = np.zeros((nq, m), dtype=int)
        self.valid = np.zeros((nq, m), dtype=bool)

        cat_index = {c: i for i, c in enumerate(dataset.category_set)}
        self.num_categories = len(dataset.category_set)
        self.traffic = np.array([q.traffic_weight for q in queries])
        self.purchases = np.array([q.purchase_count for q in queries])
        self.tier_population = dataset.tier_population
        self.tier_count = dataset.tier_count

        row_query: list[int] = []
        row_leaf: list[int] = []
        row_prob: list[float] = []
        for qi, q in enumerate(queries):
            # Candidates sorted by doc_id: argmax/stable-sort tie-breaks then
            # resolve to the lowest doc_id, matching the per-query rankers.
            docs = sorted(q.judged_docs, key=lambda dg: dg[0].doc_id)
            for di, (doc, grade) in enumerate(docs):
                self.feats[qi, di] = doc.features
                self.grades[qi, di] = grade
                self.premium[qi, di] = doc.premium
                self.tier[qi, di] = doc.seller_tier
                self.leaf[qi, di] = cat_index[doc.leaf_category]
                self.valid[qi, di] = True
            for topic, prob in q.topic_dist.items():
                if prob > 0 and topic in cat_index:
                    row_query.append(qi)
                    row_leaf.append(cat_index[topic])
                    row_prob.append(prob)
        self.row_query = np.array(row_query, dtype=int)
        self.row_leaf = np.array(row_leaf, dtype=int)
        self.row_prob = np.array(row_prob, dtype=float)

        self.rank_depth = int(min(policy_config.k_rank, m))
        self._idcg_cache: dict[int, np.ndarray] = {}
        self._discount_cache: dict[int, np.ndarray] = {}

    # -- per-k precomputation --------------------------------------------

    def discounts(self, k: int) -> np.ndarray:
        if k not in self._discount_cache:
            self._discount_cache[k] = 1.0 / np.log2(np.arange(2, k + 2))
        return self._discount_cache[k]

    def idcg(self, k: int) -> np.ndarray:
        if k not in self._idcg_cache:
            gains = np.where(self.valid, np.exp2(self.grades) - 1.0, 0.0)
            gains = -np.sort(-gains, axis=1)[:, :k]
            self._idcg_cache[k] = gains @ self.discounts(min(k, gains.shape[1]))
        return self._idcg_cache[k]


class _ScoreKernel:
    """Scores all (query, doc) pairs of a batch against a shared state.

    The value network's first layer is affine in (state - feats), so the
    document contribution `feats @ W1` is computed once per parameter
    vector and only the small per-state term varies across greedy steps.
    All large intermediates live in preallocated buffers.
    """

    def __init__(self, params: ParamVector, ctx: BatchContext) -> None:
        segments = params.segments()
        cfg = ctx.policy_config
        F = ctx.feats.shape[2]
        if segments[0].shape[0] != cfg.input_width:
            raise ValueError(
                f"network input {segments[0].shape[0]} != policy input "
                f"{cfg.input_width}"
            )
        self.nq, self.m, _ = ctx.feats.shape
        self.w_feat = segments[0][:F]           # (F, H1)
        self.w_noise = segments[0][F:]          # (0 or 1, H1)
        self.b1 = segments[1]
        self.deeper = segments[2:]
        h1 = self.w_feat.shape[1]
        self.doc_term = ctx.feats.reshape(-1, F) @ self.w_feat  # (nq*m, H1)
        self.doc_term = self.doc_term.reshape(self.nq, self.m, h1)
        self.buf = np.empty((self.nq, self.m, h1))

    def scores(
        self, state: np.ndarray, noise: np.ndarray | None
    ) -> np.ndarray:
        np.subtract((state @ self.w_feat)[:, None, :], self.doc_term, out=self.buf)
        if noise is not None:
            self.buf += noise[:, :, None] * self.w_noise[0]
        self.buf += self.b1
        x = self.buf.reshape(self.nq * self.m, -1)
        last = len(self.deeper) - 2
        for i in range(0, len(self.deeper), 2):
            if i == 0:
                np.maximum(x, 0.0, out=x)
            x = x @ self.deeper[i]
            x += self.deeper[i + 1]
            if i < last:
                np.maximum(x, 0.0, out=x)
        return x[:, 0].reshape(self.nq, self.m)


def rank_batch(
    params: ParamVector,
    ctx: BatchContext,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Rank all queries; returns doc indices (batch, depth), -1 padded."""
    cfg = ctx.policy_config
    nq, m, F = ctx.feats.shape
    depth = ctx.rank_depth
    stochastic = cfg.stochastic
    if stochastic and rng is None:
        raise ValueError("stochastic policies need an rng")
    query_noise = None
    if stochastic and cfg.noise_per_query:
        query_noise = rng.random(nq)

    def noise_matrix() -> np.ndarray | None:
        if not stochastic:
            return None
        if cfg.noise_per_query:
            return np.broadcast_to(query_noise[:, None], (nq, m))
        return rng.random((nq, m))

    kernel = _ScoreKernel(params, ctx)
    ranked = np.full((nq, depth), -1, dtype=int)
    rows = np.arange(nq)

    if cfg.kind == "pointwise":
        scores = kernel.scores(np.zeros((nq, F)), noise_matrix())
        scores[~ctx.valid] = _NEG_INF
        order = np.argsort(-scores, axis=1, kind="stable")[:, :depth]
        take = np.minimum(ctx.n_docs, depth)
        for step in range(depth):
            live = step < take
            ranked[live, step] = order[live, step]
        return ranked

    remaining = ctx.valid.copy()
    feat_sum = np.zeros((nq, F))
    for step in range(depth):
        state = feat_sum / step if step else feat_sum
        scores = kernel.scores(state, noise_matrix())
        scores[~remaining] = _NEG_INF
        pick = np.argmax(scores, axis=1)  # first max = lowest doc_id
        live = step < ctx.n_docs
        ranked[live, step] = pick[live]
        remaining[rows[live], pick[live]] = False
        feat_sum[live] += ctx.feats[rows[live], pick[live]]
    return ranked


# --- Metric kernels ----------------------------------------------------------


def _ranked_grades(ctx: BatchContext, ranked: np.ndarray, k: int) -> np.ndarray:
    width = min(k, ranked.shape[1])
    sub = ranked[:, :width]
    safe = np.maximum(sub, 0)
    grades = ctx.grades[np.arange(len(sub))[:, None], safe]
    return np.where(sub >= 0, grades, 0.0)


def _ndcg(ctx: BatchContext, ranked: np.ndarray, k: int) -> np.ndarray:
    grades = _ranked_grades(ctx, ranked, k)
    dcg = (np.exp2(grades) - 1.0) @ ctx.discounts(grades.shape[1])
    idcg = ctx.idcg(k)
    return np.where(idcg > 0, dcg / np.where(idcg > 0, idcg, 1.0), 1.0)


def _err_rows(grades: np.ndarray) -> np.ndarray:
    satisfied = (np.exp2(grades) - 1.0) / (2.0 ** GRADE_MAX)
    cont = np.cumprod(1.0 - satisfied, axis=1)
    prev = np.concatenate([np.ones((len(grades), 1)), cont[:, :-1]], axis=1)
    positions = np.arange(1, grades.shape[1] + 1)
    return (prev * satisfied / positions).sum(axis=1)


def _err(ctx: BatchContext, ranked: np.ndarray, k: int) -> np.ndarray:
    return _err_rows(_ranked_grades(ctx, ranked, k))


def _err_ia(ctx: BatchContext, ranked: np.ndarray, k: int) -> np.ndarray:
    nq = ranked.shape[0]
    width = min(k, ranked.shape[1])
    grades = _ranked_grades(ctx, ranked, k)
    sub = ranked[:, :width]
    safe = np.maximum(sub, 0)
    leafs = ctx.leaf[np.arange(nq)[:, None], safe]
    leafs = np.where(sub >= 0, leafs, -1)

    g_rows = grades[ctx.row_query]
    mask = leafs[ctx.row_query] == ctx.row_leaf[:, None]
    err_rows = _err_rows(np.where(mask, g_rows, 0.0))
    return np.bincount(
        ctx.row_query, weights=ctx.row_prob * err_rows, minlength=nq
    )


def position_wealth(ctx: BatchContext, ranked: np.ndarray, position: int) -> np.ndarray:
    """Per-tier wealth accumulated from the doc at a 1-based rank position."""
    has_pos = ctx.n_docs >= position
    if position > ranked.shape[1] or not has_pos.any():
        return np.zeros(ctx.tier_count)
    at = ranked[has_pos, position - 1]
    tiers = ctx.tier[np.flatnonzero(has_pos), at]
    return np.bincount(
        tiers - 1, weights=ctx.purchases[has_pos], minlength=ctx.tier_count
    )


def _gini(ctx: BatchContext, ranked: np.ndarray, position: int) -> float:
    wealth = position_wealth(ctx, ranked, position)
    if wealth.sum() <= 0.0:
        logger.warning(
            "zero wealth at position %d; gini score falls back to 1.0", position
        )
        return 1.0
    ledger = metrics.MarketLedger(
        tier_population=ctx.tier_population, tier_wealth=tuple(wealth)
    )
    return metrics.gini_score(ledger)[1]


def _incentive(ctx: BatchContext, ranked: np.ndarray, k: int) -> float:
    width = min(k, ranked.shape[1])
    sub = ranked[:, :width]
    safe = np.maximum(sub, 0)
    prem = ctx.premium[np.arange(len(sub))[:, None], safe]
    hits = np.where(sub >= 0, prem, False).sum()
    return float(hits) / (k * len(sub))


def _chi2(ctx: BatchContext, ranked: np.ndarray, k: int) -> float:
    width = min(k, ranked.shape[1])
    sub = ranked[:, :width]
    safe = np.maximum(sub, 0)
    leafs = ctx.leaf[np.arange(len(sub))[:, None], safe]
    leafs = leafs[sub >= 0]
    counts = np.bincount(leafs, minlength=ctx.num_categories)
    expected = k * len(sub) / ctx.num_categories
    chi2 = float(((counts - expected) ** 2).sum() / expected)
    return 1.0 / (1.0 + chi2)


def evaluate(
    params: ParamVector,
    ctx: BatchContext,
    rng: np.random.Generator | None = None,
) -> FitnessReport:
    """Rank the batch once and score every term of the fitness spec."""
    spec = ctx.spec
    ranked = rank_batch(params, ctx, rng)
    per_metric: dict[str, float] = {}
    for term in spec.terms:
        if term.metric in fitness_mod.PER_QUERY_METRICS:
            kernel = {"ndcg": _ndcg, "err": _err, "err_ia": _err_ia}[term.metric]
            scores = kernel(ctx, ranked, term.k)
            per_metric[term.metric] = float(
                fitness_mod.aggregate_per_query(spec, scores.tolist(), ctx.traffic)
            )
        elif term.metric == "gini":
            per_metric["gini"] = _gini(ctx, ranked, spec.gini_position)
        elif term.metric == "incentive":
            per_metric["incentive"] = _incentive(ctx, ranked, term.k)
        elif term.metric == "chi2":
            per_metric["chi2"] = _chi2(ctx, ranked, term.k)
    return FitnessReport(
        combined=fitness_mod.combine(spec, per_metric),
        per_metric=per_metric,
        batch_query_ids=ctx.query_ids,
    )
