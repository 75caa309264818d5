"""Synthetic marketplace dataset generator.

Reproduces the structural skews of a real two-sided marketplace: power-law
seller wealth cut into equal-population tiers, exposure concentrated in
wealthy tiers, listing prices inversely correlated with how often a tier
appears, an imbalanced category taxonomy, and graded relevance driven by a
planted linear feature score entangled with seller popularity. The planted
popularity bonus makes wealthy sellers more relevant on average, so
relevance and wealth-equality objectives genuinely conflict.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import corpus
from .corpus import Dataset, Document, QuerySet
from .metrics import Ranking
from .rngutil import derive_rng

_PRICE_BASE = 10.0
_EXPOSURE_MIX = 0.3          # uniform share blended into wealth-driven exposure
_OBS_DECAY = 0.7             # observation-model decay per rank position
_OBS_POSITIONS = 10
_LEAVES_PER_SECTION = 12     # taxonomy branching below the root

_GRADE_GAIN = 1.4            # planted-score scale inside the sigmoid
_GRADE_POPULARITY = 0.6     # relevance bonus per unit of tier popularity;
                             # large enough that equality fights relevance,
                             # small enough that the conflict stays mild
_GRADE_NOISE = 0.25


@dataclass(frozen=True)
class GenConfig:
    num_queries: int
    docs_per_query: int
    feature_dim: int
    num_categories: int = 175
    tier_count: int = 20
    traffic_power: float = 1.0   # Zipf exponent for per-query traffic
    wealth_power: float = 1.16   # Pareto shape for seller GMV
    price_sigma: float = 1.0     # log-normal price scale
    seed: int = 0


def _check_config(config: GenConfig) -> None:
    counts = {
        "num_queries": config.num_queries,
        "docs_per_query": config.docs_per_query,
        "feature_dim": config.feature_dim,
        "num_categories": config.num_categories,
        "tier_count": config.tier_count,
    }
    for name, value in counts.items():
        if value < 1:
            raise ValueError(f"{name} must be >= 1, got {value}")
    for name in ("traffic_power", "wealth_power", "price_sigma"):
        if getattr(config, name) <= 0:
            raise ValueError(f"{name} must be > 0, got {getattr(config, name)}")


def _category_names(num_categories: int) -> tuple[str, ...]:
    return tuple(f"cat_{r:03d}" for r in range(num_categories))


def _taxonomy_path(leaf_index: int) -> tuple[str, str, str]:
    section = f"sec_{leaf_index // _LEAVES_PER_SECTION:02d}"
    return ("root", section, f"cat_{leaf_index:03d}")


def observation_weights(
    positions: int = _OBS_POSITIONS, decay: float = _OBS_DECAY
) -> tuple[float, ...]:
    """Geometrically decaying observation probabilities, normalized."""
    raw = [decay ** p for p in range(positions)]
    total = sum(raw)
    return tuple(w / total for w in raw)


def seller_tiers(config: GenConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Sample a seller population and derive per-tier planted quantities.

    GMV is Pareto-distributed; tiers are equal-population quantile cuts of
    the sample (tier 1 poorest). Exposure (how often a tier's listings show
    up in results) follows tier wealth share, softened with a uniform floor
    so bottom tiers still appear in finite samples.
    """
    T = config.tier_count
    pool_size = max(1000, 50 * T)
    gmv = 1.0 + rng.pareto(config.wealth_power, size=pool_size)
    order = np.argsort(gmv)
    tier_of_seller = np.minimum(T - 1, np.arange(pool_size) * T // pool_size)
    wealth = np.zeros(T)
    np.add.at(wealth, tier_of_seller, gmv[order])
    gmv_share = wealth / wealth.sum()

    exposure = (1.0 - _EXPOSURE_MIX) * gmv_share + _EXPOSURE_MIX / T
    exposure = exposure / exposure.sum()
    log_exp = np.log(exposure)
    # Standardize under the exposure distribution itself, so the popularity
    # of a *drawn* document is zero-mean unit-variance and planted grades
    # stay balanced despite the tier skew.
    mean_w = float(exposure @ log_exp)
    std_w = float(np.sqrt(exposure @ (log_exp - mean_w) ** 2)) or 1.0
    popularity = (log_exp - mean_w) / std_w
    price_loc = -0.35 * np.log(T * exposure)
    return {
        "gmv_share": gmv_share,
        "exposure": exposure,
        "popularity": popularity,
        "price_loc": price_loc,
    }


def _make_query(
    qi: int,
    config: GenConfig,
    tiers: dict[str, np.ndarray],
    leaf_probs: np.ndarray,
    w: np.ndarray,
    rng: np.random.Generator,
) -> QuerySet:
    n = config.docs_per_query
    F = config.feature_dim

    tier0 = rng.choice(config.tier_count, size=n, p=tiers["exposure"])
    pop = tiers["popularity"][tier0]
    price = _PRICE_BASE * np.exp(
        tiers["price_loc"][tier0] + config.price_sigma * rng.standard_normal(n)
    )
    leaf = rng.choice(config.num_categories, size=n, p=leaf_probs)

    x = rng.standard_normal((n, F))
    # Expose tier popularity, price, and category as noisy feature channels so
    # market objectives are reachable from the feature space alone.
    if F >= 2:
        x[:, F - 1] = pop + 0.2 * rng.standard_normal(n)
    if F >= 3:
        x[:, F - 2] = (np.log(price) - math.log(_PRICE_BASE)) / 2.0 \
            + 0.2 * rng.standard_normal(n)
    if F >= 4:
        x[:, F - 3] = (leaf / max(config.num_categories - 1, 1) - 0.5) * 2.0 \
            + 0.1 * rng.standard_normal(n)

    z = _GRADE_GAIN * (
        x @ w + _GRADE_POPULARITY * pop + _GRADE_NOISE * rng.standard_normal(n)
    )
    relevance = 1.0 / (1.0 + np.exp(-z))
    grades = 1 + np.clip(np.rint(4.0 * relevance), 0, 4).astype(int)

    premium = price > price.mean()
    query_id = f"q{qi:05d}"
    width = max(3, len(str(n - 1)))
    docs = tuple(
        (
            Document(
                doc_id=f"{query_id}-d{j:0{width}d}",
                features=tuple(float(v) for v in x[j]),
                taxonomy_path=_taxonomy_path(int(leaf[j])),
                seller_tier=int(tier0[j]) + 1,
                price=float(price[j]),
                premium=bool(premium[j]),
            ),
            int(grades[j]),
        )
        for j in range(n)
    )

    topic_mass: dict[str, float] = {}
    for doc, grade in docs:
        topic_mass[doc.leaf_category] = topic_mass.get(doc.leaf_category, 0.0) + grade
    total = sum(topic_mass.values())
    topic_dist = {t: m / total for t, m in topic_mass.items()}

    traffic = 1.0 / (qi + 1) ** config.traffic_power
    return QuerySet(
        query_id=query_id,
        traffic_weight=traffic,
        purchase_count=100.0 * traffic,
        judged_docs=docs,
        topic_dist=topic_dist,
    )


def generate(config: GenConfig) -> Dataset:
    """Generate a validated synthetic dataset, bit-reproducible per seed."""
    _check_config(config)

    w = derive_rng(config.seed, 1).standard_normal(config.feature_dim)
    w /= np.linalg.norm(w) or 1.0
    tiers = seller_tiers(config, derive_rng(config.seed, 2))

    ranks = np.arange(1, config.num_categories + 1, dtype=float)
    leaf_probs = 1.0 / ranks
    leaf_probs /= leaf_probs.sum()

    queries = tuple(
        _make_query(qi, config, tiers, leaf_probs, w, derive_rng(config.seed, 3, qi))
        for qi in range(config.num_queries)
    )

    dataset = Dataset(
        queries=queries,
        feature_dim=config.feature_dim,
        category_set=_category_names(config.num_categories),
        tier_count=config.tier_count,
        tier_population=(1.0 / config.tier_count,) * config.tier_count,
        observation_model=observation_weights(),
    )
    violations = corpus.validate(dataset)
    if violations:
        raise RuntimeError(
            "generator produced an invalid dataset:\n  " + "\n  ".join(violations)
        )
    return dataset


def plant_oracle_ranking(dataset: Dataset) -> dict[str, Ranking]:
    """Ideal ordering per query: grade descending, then doc_id ascending."""
    oracle = {}
    for q in dataset.queries:
        ordered = sorted(q.judged_docs, key=lambda dg: (-dg[1], dg[0].doc_id))
        oracle[q.query_id] = Ranking(
            query_id=q.query_id, ordered_docs=tuple(d for d, _ in ordered)
        )
    return oracle
