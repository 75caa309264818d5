"""Dataset data model, on-disk JSON format, validation, and splitting.

A dataset is a set of judged queries plus the marketplace sidecar data
(seller tiers, prices, taxonomy, traffic, purchase counts, observation
model) that plain LTR text formats cannot carry.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from pathlib import Path

from .rngutil import derive_rng

GRADE_MIN = 1
GRADE_MAX = 5

_SUM_TOL = 1e-9


class CorpusError(ValueError):
    """Raised for malformed dataset files or invalid datasets."""


@dataclass(frozen=True)
class Document:
    """One judged listing: ranking features plus marketplace metadata."""

    doc_id: str
    features: tuple[float, ...]
    taxonomy_path: tuple[str, ...]  # root-to-leaf category nodes
    seller_tier: int                # 1..tier_count, higher = wealthier
    price: float
    premium: bool                   # price above the query's mean listing price

    @property
    def leaf_category(self) -> str:
        return self.taxonomy_path[-1]


@dataclass(frozen=True)
class QuerySet:
    """A query with graded documents and importance/purchase weights."""

    query_id: str
    traffic_weight: float
    purchase_count: float
    judged_docs: tuple[tuple[Document, int], ...]  # (doc, grade in 1..5)
    topic_dist: dict[str, float]    # leaf category -> probability, sums to 1

    @property
    def docs(self) -> tuple[Document, ...]:
        return tuple(d for d, _ in self.judged_docs)

    @property
    def grades(self) -> tuple[int, ...]:
        return tuple(g for _, g in self.judged_docs)

    def grade_of(self, doc_id: str) -> int:
        for doc, grade in self.judged_docs:
            if doc.doc_id == doc_id:
                return grade
        raise KeyError(doc_id)


@dataclass(frozen=True)
class Dataset:
    """Immutable collection of judged queries sharing one feature space."""

    queries: tuple[QuerySet, ...]
    feature_dim: int
    category_set: tuple[str, ...]
    tier_count: int
    tier_population: tuple[float, ...]   # population share per tier, sums to 1
    observation_model: tuple[float, ...] # P(observe position p), p = 1..len

    def query_index(self) -> dict[str, QuerySet]:
        return {q.query_id: q for q in self.queries}

    def observation_at(self, position: int) -> float:
        """Observation probability at a 1-based rank; 0 beyond the table."""
        if 1 <= position <= len(self.observation_model):
            return self.observation_model[position - 1]
        return 0.0


def validate(dataset: Dataset) -> list[str]:
    """Return one human-readable violation per broken invariant.

    Empty list means the dataset is well formed. Violations are data,
    not exceptions, so callers can report them all at once.
    """
    violations: list[str] = []
    if not dataset.queries:
        violations.append("dataset has no queries")
    if dataset.feature_dim < 1:
        violations.append(f"feature_dim must be >= 1, got {dataset.feature_dim}")
    if dataset.tier_count < 1:
        violations.append(f"tier_count must be >= 1, got {dataset.tier_count}")

    if len(dataset.tier_population) != dataset.tier_count:
        violations.append(
            f"tier_population has {len(dataset.tier_population)} entries, "
            f"expected tier_count={dataset.tier_count}"
        )
    elif abs(sum(dataset.tier_population) - 1.0) > _SUM_TOL:
        violations.append(
            f"tier_population sums to {sum(dataset.tier_population)!r}, expected 1"
        )
    if any(x < 0 for x in dataset.tier_population):
        violations.append("tier_population has negative entries")
    for p, o in enumerate(dataset.observation_model, start=1):
        if not 0.0 <= o <= 1.0:
            violations.append(f"observation_model[{p}] = {o!r} outside [0, 1]")

    categories = set(dataset.category_set)
    if len(categories) != len(dataset.category_set):
        violations.append("category_set contains duplicates")

    seen_qids: set[str] = set()
    for q in dataset.queries:
        if q.query_id in seen_qids:
            violations.append(f"duplicate query_id {q.query_id!r}")
        seen_qids.add(q.query_id)
        if not q.judged_docs:
            violations.append(f"query {q.query_id!r} has no judged docs")
        if q.traffic_weight < 0:
            violations.append(f"query {q.query_id!r} has negative traffic_weight")
        if q.purchase_count < 0:
            violations.append(f"query {q.query_id!r} has negative purchase_count")

        topic_total = sum(q.topic_dist.values())
        if q.judged_docs and abs(topic_total - 1.0) > _SUM_TOL:
            violations.append(
                f"query {q.query_id!r} topic_dist sums to {topic_total!r}, expected 1"
            )
        if any(v < 0 for v in q.topic_dist.values()):
            violations.append(f"query {q.query_id!r} topic_dist has negative entries")

        seen_dids: set[str] = set()
        for doc, grade in q.judged_docs:
            where = f"query {q.query_id!r} doc {doc.doc_id!r}"
            if doc.doc_id in seen_dids:
                violations.append(f"{where}: duplicate doc_id")
            seen_dids.add(doc.doc_id)
            if len(doc.features) != dataset.feature_dim:
                violations.append(
                    f"{where}: {len(doc.features)} features, "
                    f"expected feature_dim={dataset.feature_dim}"
                )
            if not GRADE_MIN <= grade <= GRADE_MAX:
                violations.append(
                    f"{where}: grade {grade} outside {{{GRADE_MIN}..{GRADE_MAX}}}"
                )
            if not doc.taxonomy_path:
                violations.append(f"{where}: empty taxonomy_path")
            elif doc.taxonomy_path[-1] not in categories:
                violations.append(
                    f"{where}: leaf category {doc.taxonomy_path[-1]!r} "
                    "not in dataset category_set"
                )
            if not doc.price > 0:
                violations.append(f"{where}: price {doc.price!r} not positive")
            if not 1 <= doc.seller_tier <= dataset.tier_count:
                violations.append(
                    f"{where}: seller_tier {doc.seller_tier} outside "
                    f"[1, {dataset.tier_count}]"
                )
    return violations


# --- JSON on-disk format ---------------------------------------------------
#
# {
#   "feature_dim": F, "categories": [...], "tier_count": T,
#   "tier_population": [...], "observation_model": [...],
#   "queries": [
#     {"query_id": ..., "traffic_weight": ..., "purchase_count": ...,
#      "topic_dist": {...},
#      "docs": [{"doc_id": ..., "grade": ..., "features": [...],
#                "taxonomy_path": [...], "seller_tier": ..., "price": ...,
#                "premium": ...}, ...]},
#     ...]
# }
#
# Reals are serialized via repr (shortest round-trip form), so a reload
# reproduces every float64 exactly.


def _doc_to_json(doc: Document, grade: int) -> dict:
    return {
        "doc_id": doc.doc_id,
        "grade": grade,
        "features": list(doc.features),
        "taxonomy_path": list(doc.taxonomy_path),
        "seller_tier": doc.seller_tier,
        "price": doc.price,
        "premium": doc.premium,
    }


def dataset_to_json(dataset: Dataset) -> dict:
    return {
        "feature_dim": dataset.feature_dim,
        "categories": list(dataset.category_set),
        "tier_count": dataset.tier_count,
        "tier_population": list(dataset.tier_population),
        "observation_model": list(dataset.observation_model),
        "queries": [
            {
                "query_id": q.query_id,
                "traffic_weight": q.traffic_weight,
                "purchase_count": q.purchase_count,
                "topic_dist": dict(q.topic_dist),
                "docs": [_doc_to_json(d, g) for d, g in q.judged_docs],
            }
            for q in dataset.queries
        ],
    }


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write a validated dataset as a single UTF-8 JSON document."""
    violations = validate(dataset)
    if violations:
        raise CorpusError(
            "refusing to save invalid dataset:\n  " + "\n  ".join(violations)
        )
    p = Path(path)
    with p.open("w", encoding="utf-8") as f:
        json.dump(dataset_to_json(dataset), f, separators=(",", ":"))


def _field(raw: dict, key: str, kind, where: str):
    if key not in raw:
        raise CorpusError(f"{where}: missing field {key!r}")
    value = raw[key]
    try:
        return kind(value)
    except (TypeError, ValueError) as e:
        raise CorpusError(f"{where}: field {key!r} = {value!r}: {e}") from e


def dataset_from_json(payload: dict, where: str = "dataset") -> Dataset:
    queries = []
    raw_queries = _field(payload, "queries", list, where)
    for qi, raw_q in enumerate(raw_queries):
        q_where = f"{where} queries[{qi}]"
        qid = str(_field(raw_q, "query_id", str, q_where))
        docs = []
        for di, raw_d in enumerate(_field(raw_q, "docs", list, q_where)):
            d_where = f"{q_where} ({qid!r}) docs[{di}]"
            doc = Document(
                doc_id=str(_field(raw_d, "doc_id", str, d_where)),
                features=tuple(
                    float(v) for v in _field(raw_d, "features", list, d_where)
                ),
                taxonomy_path=tuple(
                    str(v) for v in _field(raw_d, "taxonomy_path", list, d_where)
                ),
                seller_tier=_field(raw_d, "seller_tier", int, d_where),
                price=_field(raw_d, "price", float, d_where),
                premium=bool(_field(raw_d, "premium", bool, d_where)),
            )
            docs.append((doc, _field(raw_d, "grade", int, d_where)))
        queries.append(
            QuerySet(
                query_id=qid,
                traffic_weight=_field(raw_q, "traffic_weight", float, q_where),
                purchase_count=_field(raw_q, "purchase_count", float, q_where),
                judged_docs=tuple(docs),
                topic_dist={
                    str(k): float(v)
                    for k, v in _field(raw_q, "topic_dist", dict, q_where).items()
                },
            )
        )
    return Dataset(
        queries=tuple(queries),
        feature_dim=_field(payload, "feature_dim", int, where),
        category_set=tuple(str(c) for c in _field(payload, "categories", list, where)),
        tier_count=_field(payload, "tier_count", int, where),
        tier_population=tuple(
            float(v) for v in _field(payload, "tier_population", list, where)
        ),
        observation_model=tuple(
            float(v) for v in _field(payload, "observation_model", list, where)
        ),
    )


def load_dataset(path: str | Path) -> Dataset:
    """Load and validate a dataset JSON file.

    Parsing is locale-independent (json floats always use a decimal point).
    """
    p = Path(path)
    try:
        with p.open("r", encoding="utf-8") as f:
            payload = json.load(f)
    except json.JSONDecodeError as e:
        raise CorpusError(f"{p}: line {e.lineno}: invalid JSON: {e.msg}") from e
    dataset = dataset_from_json(payload, where=str(p))
    violations = validate(dataset)
    if violations:
        raise CorpusError(f"{p}: invalid dataset:\n  " + "\n  ".join(violations))
    return dataset


# --- LETOR-style TSV importer ----------------------------------------------

_LETOR_LINE = re.compile(
    r"^\s*(?P<grade>-?\d+)\s+qid:(?P<qid>\S+)(?P<feats>(?:\s+\d+:\S+)*)"
    r"\s*(?:#\s*(?P<comment>.*))?$"
)
_LETOR_FEAT = re.compile(r"(\d+):(\S+)")

DEFAULT_CATEGORY = "general"
DEFAULT_TAXONOMY = ("root", "all", DEFAULT_CATEGORY)


def import_letor(path: str | Path, grade_offset: int = 0) -> Dataset:
    """Import `<grade> qid:<id> 1:<v> 2:<v> ... #<doc_id>` lines.

    Only grades, query ids, and features are carried by the format; the
    marketplace metadata (tiers, prices, taxonomy, traffic) is defaulted.
    `grade_offset` is added to every grade (use 1 for 0-based corpora).
    """
    p = Path(path)
    by_query: dict[str, list[tuple[Document, int]]] = {}
    feature_dim = 0
    rows: list[tuple[str, int, dict[int, float], str]] = []
    with p.open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            m = _LETOR_LINE.match(line)
            if m is None:
                raise CorpusError(f"{p}:{lineno}: unparseable LETOR line")
            grade = int(m.group("grade")) + grade_offset
            if not GRADE_MIN <= grade <= GRADE_MAX:
                raise CorpusError(
                    f"{p}:{lineno}: grade {grade} outside "
                    f"{{{GRADE_MIN}..{GRADE_MAX}}} (use grade_offset?)"
                )
            feats: dict[int, float] = {}
            for idx_s, val_s in _LETOR_FEAT.findall(m.group("feats") or ""):
                try:
                    feats[int(idx_s)] = float(val_s)
                except ValueError as e:
                    raise CorpusError(
                        f"{p}:{lineno}: feature {idx_s}:{val_s!r}: {e}"
                    ) from e
            if not feats:
                raise CorpusError(f"{p}:{lineno}: no feature columns")
            feature_dim = max(feature_dim, max(feats))
            comment = (m.group("comment") or "").strip()
            doc_id = comment if comment else f"line{lineno}"
            rows.append((m.group("qid"), grade, feats, doc_id))

    if not rows:
        raise CorpusError(f"{p}: no judged documents found")

    for qid, grade, feats, doc_id in rows:
        dense = tuple(feats.get(i, 0.0) for i in range(1, feature_dim + 1))
        doc = Document(
            doc_id=doc_id,
            features=dense,
            taxonomy_path=DEFAULT_TAXONOMY,
            seller_tier=1,
            price=1.0,
            premium=False,
        )
        by_query.setdefault(qid, []).append((doc, grade))

    queries = tuple(
        QuerySet(
            query_id=qid,
            traffic_weight=1.0,
            purchase_count=1.0,
            judged_docs=tuple(docs),
            topic_dist={DEFAULT_CATEGORY: 1.0},
        )
        for qid, docs in by_query.items()
    )
    decay = tuple(0.7 ** i for i in range(10))
    obs = tuple(d / sum(decay) for d in decay)
    return Dataset(
        queries=queries,
        feature_dim=feature_dim,
        category_set=(DEFAULT_CATEGORY,),
        tier_count=1,
        tier_population=(1.0,),
        observation_model=obs,
    )


# --- Splitting ---------------------------------------------------------------


def split(
    dataset: Dataset, fractions: tuple[float, float, float], seed: int
) -> tuple[Dataset, Dataset, Dataset]:
    """Partition queries into train/validation/test datasets.

    Deterministic for a given seed; metadata (feature space, categories,
    tiers, observation model) is shared by all three outputs.
    """
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise CorpusError(f"fractions must be three positive reals, got {fractions}")
    if abs(sum(fractions) - 1.0) > _SUM_TOL:
        raise CorpusError(f"fractions sum to {sum(fractions)!r}, expected 1")
    n = len(dataset.queries)
    if n < len(fractions):
        raise CorpusError(f"cannot split {n} queries into {len(fractions)} parts")

    # Largest-remainder apportionment, then guarantee every part is non-empty.
    ideal = [f * n for f in fractions]
    counts = [int(x) for x in ideal]
    remainders = sorted(
        range(3), key=lambda i: (ideal[i] - counts[i], -i), reverse=True
    )
    for i in range(n - sum(counts)):
        counts[remainders[i % 3]] += 1
    while min(counts) == 0:
        counts[counts.index(max(counts))] -= 1
        counts[counts.index(0)] += 1

    order = derive_rng(seed, 0x5B17).permutation(n)
    parts = []
    start = 0
    for c in counts:
        idx = sorted(order[start : start + c])
        parts.append(replace(dataset, queries=tuple(dataset.queries[i] for i in idx)))
        start += c
    return parts[0], parts[1], parts[2]
