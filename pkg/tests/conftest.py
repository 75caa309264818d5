"""Shared builders for hand-constructed corpora."""

from __future__ import annotations

import pytest

from marketrank.corpus import Dataset, Document, QuerySet


def make_doc(
    doc_id: str,
    features=(0.0, 0.0),
    leaf: str = "cat_a",
    tier: int = 1,
    price: float = 1.0,
    premium: bool = False,
    path_prefix: tuple[str, ...] = ("root", "mid"),
) -> Document:
    return Document(
        doc_id=doc_id,
        features=tuple(float(f) for f in features),
        taxonomy_path=(*path_prefix, leaf),
        seller_tier=tier,
        price=price,
        premium=premium,
    )


def make_query(
    query_id: str,
    judged,
    traffic_weight: float = 1.0,
    purchase_count: float = 1.0,
    topic_dist=None,
) -> QuerySet:
    judged = tuple(judged)
    if topic_dist is None:
        mass: dict[str, float] = {}
        for doc, grade in judged:
            mass[doc.leaf_category] = mass.get(doc.leaf_category, 0.0) + grade
        total = sum(mass.values())
        topic_dist = {t: v / total for t, v in mass.items()}
    return QuerySet(
        query_id=query_id,
        traffic_weight=traffic_weight,
        purchase_count=purchase_count,
        judged_docs=judged,
        topic_dist=topic_dist,
    )


def make_dataset(
    queries,
    feature_dim: int = 2,
    categories=("cat_a", "cat_b", "cat_c"),
    tier_count: int = 2,
    tier_population=None,
    observation_model=(0.6, 0.3, 0.1),
) -> Dataset:
    if tier_population is None:
        tier_population = (1.0 / tier_count,) * tier_count
    return Dataset(
        queries=tuple(queries),
        feature_dim=feature_dim,
        category_set=tuple(categories),
        tier_count=tier_count,
        tier_population=tuple(tier_population),
        observation_model=tuple(observation_model),
    )


@pytest.fixture
def small_dataset() -> Dataset:
    q1 = make_query(
        "q1",
        [
            (make_doc("d1", (1.0, 0.0), leaf="cat_a", tier=1, price=2.0, premium=True), 5),
            (make_doc("d2", (0.0, 1.0), leaf="cat_b", tier=2, price=1.0), 3),
            (make_doc("d3", (0.5, 0.5), leaf="cat_a", tier=1, price=1.5), 1),
        ],
        traffic_weight=2.0,
        purchase_count=3.0,
    )
    q2 = make_query(
        "q2",
        [
            (make_doc("d4", (0.2, 0.8), leaf="cat_c", tier=2, price=4.0, premium=True), 4),
            (make_doc("d5", (0.9, 0.1), leaf="cat_a", tier=1, price=0.5), 2),
        ],
        traffic_weight=1.0,
        purchase_count=1.0,
    )
    return make_dataset([q1, q2])
