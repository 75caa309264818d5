"""Parameterized ranking policies.

A small fully connected value network scores documents; greedy inference
re-scores the remaining documents after each pick against the running
mean of already-selected features, while pointwise inference scores all
documents once and sorts. The stochastic variant feeds one extra uniform
noise input to the network, letting the optimizer blend sub-policies.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Document
from .metrics import Ranking
from .rngutil import derive_rng

POLICY_KINDS = ("greedy", "pointwise")
VALUE_FNS = ("static", "stochastic")


@dataclass(frozen=True)
class PolicyConfig:
    kind: str = "greedy"
    value_fn: str = "static"
    feature_dim: int = 20
    hidden_dims: tuple[int, ...] = (20,)
    k_rank: int = 10
    noise_per_query: bool = False  # one noise draw per query instead of per score

    def __post_init__(self) -> None:
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"kind must be one of {POLICY_KINDS}, got {self.kind!r}")
        if self.value_fn not in VALUE_FNS:
            raise ValueError(
                f"value_fn must be one of {VALUE_FNS}, got {self.value_fn!r}"
            )
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError("hidden layer widths must be >= 1")
        if self.k_rank < 1:
            raise ValueError("k_rank must be >= 1")

    @property
    def stochastic(self) -> bool:
        return self.value_fn == "stochastic"

    @property
    def input_width(self) -> int:
        return self.feature_dim + (1 if self.stochastic else 0)

    def layer_dims(self) -> list[int]:
        return [self.input_width, *self.hidden_dims, 1]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "value_fn": self.value_fn,
            "feature_dim": self.feature_dim,
            "hidden_dims": list(self.hidden_dims),
            "k_rank": self.k_rank,
            "noise_per_query": self.noise_per_query,
        }

    @staticmethod
    def from_dict(raw: dict) -> "PolicyConfig":
        return PolicyConfig(
            kind=raw.get("kind", "greedy"),
            value_fn=raw.get("value_fn", "static"),
            feature_dim=int(raw["feature_dim"]),
            hidden_dims=tuple(int(h) for h in raw.get("hidden_dims", (20,))),
            k_rank=int(raw.get("k_rank", 10)),
            noise_per_query=bool(raw.get("noise_per_query", False)),
        )


def layout_for(config: PolicyConfig) -> tuple[tuple[int, ...], ...]:
    """Shapes of the flattened parameter segments: (in, out) then (out,)."""
    dims = config.layer_dims()
    shapes: list[tuple[int, ...]] = []
    for a, b in zip(dims[:-1], dims[1:]):
        shapes.append((a, b))
        shapes.append((b,))
    return tuple(shapes)


def param_count(config: PolicyConfig) -> int:
    return sum(int(np.prod(s)) for s in layout_for(config))


@dataclass
class ParamVector:
    """Flat float64 parameters plus the segment shapes to unflatten them."""

    values: np.ndarray
    layout: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        expected = sum(int(np.prod(s)) for s in self.layout)
        if self.values.ndim != 1 or len(self.values) != expected:
            raise ValueError(
                f"parameter vector has {self.values.size} values, "
                f"layout needs {expected}"
            )

    def segments(self) -> list[np.ndarray]:
        out = []
        offset = 0
        for shape in self.layout:
            size = int(np.prod(shape))
            out.append(self.values[offset : offset + size].reshape(shape))
            offset += size
        return out

    def copy_with(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(values=np.asarray(values, dtype=float), layout=self.layout)


def init_params(config: PolicyConfig, seed: int) -> ParamVector:
    """Weights ~ N(0, 1/fan_in), biases 0; deterministic per seed."""
    rng = derive_rng(seed, 0x1A17)
    layout = layout_for(config)
    parts = []
    for shape in layout:
        if len(shape) == 2:
            fan_in = shape[0]
            parts.append(rng.standard_normal(shape).ravel() / np.sqrt(fan_in))
        else:
            parts.append(np.zeros(shape))
    return ParamVector(values=np.concatenate(parts), layout=layout)


def mlp_forward(params: ParamVector, inputs: np.ndarray) -> np.ndarray | float:
    """Forward pass: ReLU hidden layers, affine output.

    Accepts one input vector (returns a float) or a matrix of row vectors
    (returns a 1-D array of scores).
    """
    x = np.asarray(inputs, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    segments = params.segments()
    expected = segments[0].shape[0]
    if x.shape[1] != expected:
        raise ValueError(f"input width {x.shape[1]} != network input {expected}")
    for i in range(0, len(segments), 2):
        w, b = segments[i], segments[i + 1]
        x = x @ w + b
        if i < len(segments) - 2:
            np.maximum(x, 0.0, out=x)
    scores = x[:, 0]
    return float(scores[0]) if single else scores


def aggregate_state(selected_docs: Sequence[Document], feature_dim: int) -> np.ndarray:
    """Mean feature vector of already-selected docs; zeros when none."""
    if not selected_docs:
        return np.zeros(feature_dim)
    return np.mean([d.features for d in selected_docs], axis=0)


def value(
    params: ParamVector,
    config: PolicyConfig,
    doc: Document,
    state: np.ndarray,
    rng: np.random.Generator | None = None,
    noise: float | None = None,
) -> float:
    """Score one document against the current aggregate state.

    Stochastic nets append one uniform draw; pass `noise` to reuse a
    per-query draw, otherwise one fresh value is taken from `rng`.
    """
    base = np.asarray(state, dtype=float) - np.asarray(doc.features, dtype=float)
    if config.stochastic:
        if noise is None:
            if rng is None:
                raise ValueError("stochastic value function needs an rng or noise")
            noise = rng.random()
        base = np.concatenate([base, [noise]])
    return float(mlp_forward(params, base))


def _sorted_candidates(docs: Sequence[Document]) -> list[Document]:
    ordered = sorted(docs, key=lambda d: d.doc_id)
    ids = [d.doc_id for d in ordered]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate doc_ids in candidate set")
    return ordered


def _score_matrix(
    params: ParamVector,
    config: PolicyConfig,
    feats: np.ndarray,
    state: np.ndarray,
    rng: np.random.Generator | None,
    query_noise: float | None,
) -> np.ndarray:
    inputs = state[None, :] - feats
    if config.stochastic:
        if config.noise_per_query:
            col = np.full((len(feats), 1), query_noise)
        else:
            col = rng.random((len(feats), 1))
        inputs = np.concatenate([inputs, col], axis=1)
    return mlp_forward(params, inputs)


def greedy_rank(
    params: ParamVector,
    config: PolicyConfig,
    docs: Sequence[Document],
    rng: np.random.Generator | None = None,
    query_id: str = "",
) -> Ranking:
    """Sequential selection: pick the best-valued doc, fold it into the
    aggregate state, repeat. Ties go to the lowest doc_id."""
    if not docs:
        raise ValueError("greedy_rank needs at least one document")
    candidates = _sorted_candidates(docs)
    feats = np.asarray([d.features for d in candidates], dtype=float)
    n = len(candidates)
    query_noise = rng.random() if (config.stochastic and config.noise_per_query) else None

    selected: list[int] = []
    remaining = np.ones(n, dtype=bool)
    feat_sum = np.zeros(config.feature_dim)
    for step in range(min(config.k_rank, n)):
        state = feat_sum / step if step else np.zeros(config.feature_dim)
        idx = np.flatnonzero(remaining)
        scores = _score_matrix(
            params, config, feats[idx], state, rng, query_noise
        )
        pick = idx[int(np.argmax(scores))]  # first max = lowest doc_id
        selected.append(pick)
        remaining[pick] = False
        feat_sum += feats[pick]
    return Ranking(
        query_id=query_id,
        ordered_docs=tuple(candidates[i] for i in selected),
    )


def pointwise_rank(
    params: ParamVector,
    config: PolicyConfig,
    docs: Sequence[Document],
    rng: np.random.Generator | None = None,
    query_id: str = "",
) -> Ranking:
    """Score every doc once at the empty state and sort descending."""
    if not docs:
        raise ValueError("pointwise_rank needs at least one document")
    candidates = _sorted_candidates(docs)
    feats = np.asarray([d.features for d in candidates], dtype=float)
    query_noise = rng.random() if (config.stochastic and config.noise_per_query) else None
    scores = _score_matrix(
        params, config, feats, np.zeros(config.feature_dim), rng, query_noise
    )
    order = np.argsort(-scores, kind="stable")[: config.k_rank]
    return Ranking(
        query_id=query_id,
        ordered_docs=tuple(candidates[i] for i in order),
    )


def rank_query(
    params: ParamVector,
    config: PolicyConfig,
    docs: Sequence[Document],
    rng: np.random.Generator | None = None,
    query_id: str = "",
) -> Ranking:
    fn = greedy_rank if config.kind == "greedy" else pointwise_rank
    return fn(params, config, docs, rng, query_id=query_id)


# --- Checkpoints -------------------------------------------------------------


def save_checkpoint(
    params: ParamVector, config: PolicyConfig, path: str | Path
) -> None:
    payload = {
        "policy": config.to_dict(),
        "layout": [list(s) for s in params.layout],
        "values": params.values.tolist(),
    }
    with Path(path).open("w", encoding="utf-8") as f:
        json.dump(payload, f)


def load_checkpoint(path: str | Path) -> tuple[ParamVector, PolicyConfig]:
    with Path(path).open("r", encoding="utf-8") as f:
        payload = json.load(f)
    config = PolicyConfig.from_dict(payload["policy"])
    layout = tuple(tuple(int(d) for d in s) for s in payload["layout"])
    expected = layout_for(config)
    if layout != expected:
        raise ValueError(
            f"checkpoint layout {layout} does not match policy layout {expected}"
        )
    params = ParamVector(
        values=np.asarray(payload["values"], dtype=float), layout=layout
    )
    return params, config
