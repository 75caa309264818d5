"""Generalized (1+lambda) evolutionary-strategy optimizer.

Each iteration samples lambda Bernoulli-masked Gaussian perturbations of
the parent, scores each perturbed parameter vector on the current query
batch, and moves the parent along the rank-weighted sum of the best mu
perturbations scaled by sigma. With `update` set, the candidate replaces
the parent unconditionally (tolerates noisy batch fitness); otherwise the
better of parent and candidate survives, both scored on the same batch.

Exploration is deliberately wide relative to the step: children are
evaluated at full perturbation scale so that rank-discontinuous fitness
surfaces still produce an informative ordering, while the parent moves
conservatively.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import engine
from .corpus import Dataset
from .fitness import FitnessSpec, sample_batch, subsample_documents
from .policy import ParamVector, PolicyConfig, init_params
from .rngutil import derive_rng

logger = logging.getLogger(__name__)

SHAPING_MODES = ("canonical_log", "linear_rank")

# Stream tags so every random decision has a distinct derivation path.
_TAG_CHILD = 0xC41D
_TAG_BATCH = 0xBA7C
_TAG_SUBSAMPLE = 0x5AB5
_TAG_HISTORY = 0x415E

FitnessFn = Callable[[np.ndarray, np.random.Generator], float]


@dataclass(frozen=True)
class EsConfig:
    lam: int = 768            # children per iteration
    mu: int = 50              # children recombined into the candidate
    sigma: float = 0.01       # candidate step scale
    mask_p: float = 0.05      # Bernoulli keep probability per coordinate
    update: bool = True       # unconditional parent replacement
    iters: int = 100
    batch_size: int = 256
    seed: int = 0
    shaping: str = "canonical_log"
    subsample_docs: int | None = None  # None: twice the relevance cutoff
    workers: int = 1

    def __post_init__(self) -> None:
        if self.lam < 1:
            raise ValueError("lam must be >= 1")
        if not 1 <= self.mu <= self.lam:
            raise ValueError("mu must satisfy 1 <= mu <= lam")
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if not 0 < self.mask_p <= 1:
            raise ValueError("mask_p must be in (0, 1]")
        if self.iters < 0:
            raise ValueError("iters must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.shaping not in SHAPING_MODES:
            raise ValueError(f"shaping must be one of {SHAPING_MODES}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "mu": self.mu,
            "sigma": self.sigma,
            "mask_p": self.mask_p,
            "update": self.update,
            "iters": self.iters,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "shaping": self.shaping,
            "subsample_docs": self.subsample_docs,
            "workers": self.workers,
        }

    @staticmethod
    def from_dict(raw: dict) -> "EsConfig":
        known = {
            "lam": int(raw.get("lambda", raw.get("lam", 768))),
            "mu": int(raw.get("mu", 50)),
            "sigma": float(raw.get("sigma", 0.01)),
            "mask_p": float(raw.get("mask_p", 0.05)),
            "update": bool(raw.get("update", True)),
            "iters": int(raw.get("iters", 100)),
            "batch_size": int(raw.get("batch_size", 256)),
            "seed": int(raw.get("seed", 0)),
            "shaping": raw.get("shaping", "canonical_log"),
            "workers": int(raw.get("workers", 1)),
        }
        sub = raw.get("subsample_docs")
        known["subsample_docs"] = None if sub is None else int(sub)
        return EsConfig(**known)


@dataclass(frozen=True)
class StepRecord:
    child_best: float
    child_mean: float
    n_nonfinite: int
    accepted: bool
    parent_fitness: float | None = None
    candidate_fitness: float | None = None


@dataclass(frozen=True)
class HistoryRow:
    iteration: int
    combined: float
    per_metric: dict[str, float]
    wall_time_s: float


@dataclass
class TrainHistory:
    rows: list[HistoryRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def metric_names(self) -> list[str]:
        return sorted({m for row in self.rows for m in row.per_metric})

    def to_csv(self, path: str | Path) -> None:
        import csv

        names = self.metric_names()
        with Path(path).open("w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["iteration", "combined", *names, "wall_time_s"])
            for row in self.rows:
                writer.writerow(
                    [
                        row.iteration,
                        repr(row.combined),
                        *(repr(row.per_metric.get(n, float("nan"))) for n in names),
                        f"{row.wall_time_s:.3f}",
                    ]
                )


def sample_search_gradient(
    dim: int, mask_p: float, rng: np.random.Generator
) -> np.ndarray:
    """Standard-normal vector with coordinates kept with probability mask_p.

    Draws dim normals and then dim uniforms, so the stream layout is fixed.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if not 0 < mask_p <= 1:
        raise ValueError("mask_p must be in (0, 1]")
    noise = rng.standard_normal(dim)
    keep = rng.random(dim) < mask_p
    return noise * keep


def shape_weights(
    sorted_scores: Sequence[float], mu: int, shaping: str = "canonical_log"
) -> np.ndarray:
    """Rank-based recombination weights: non-negative, non-increasing, sum 1.

    Only the rank order matters, which caps the influence of outlier
    fitness values.
    """
    if mu < 1 or mu > len(sorted_scores):
        raise ValueError(f"mu must be in [1, {len(sorted_scores)}], got {mu}")
    ranks = np.arange(1, mu + 1, dtype=float)
    if shaping == "canonical_log":
        w = np.log(mu + 0.5) - np.log(ranks)
    elif shaping == "linear_rank":
        w = mu - ranks + 1.0
    else:
        raise ValueError(f"shaping must be one of {SHAPING_MODES}")
    return w / w.sum()


def es_step(
    parent: ParamVector,
    fitness: FitnessFn,
    config: EsConfig,
    step_key: tuple[int, ...],
) -> tuple[ParamVector, StepRecord]:
    """One optimizer iteration.

    Child c draws from a stream derived from (*step_key, c), so children
    can be evaluated in any order or in parallel and still reproduce the
    identical candidate. Non-finite child fitness is ranked last.
    """
    dim = len(parent.values)
    eps = np.empty((config.lam, dim))
    scores = np.empty(config.lam)

    def eval_child(c: int) -> None:
        rng = derive_rng(*step_key, _TAG_CHILD, c)
        eps[c] = sample_search_gradient(dim, config.mask_p, rng)
        scores[c] = fitness(parent.values + eps[c], rng)

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            list(pool.map(eval_child, range(config.lam)))
    else:
        for c in range(config.lam):
            eval_child(c)

    finite = np.isfinite(scores)
    n_nonfinite = int((~finite).sum())
    if n_nonfinite:
        logger.warning("%d of %d children had non-finite fitness", n_nonfinite, config.lam)
        scores = np.where(finite, scores, -np.inf)

    order = np.argsort(-scores, kind="stable")
    weights = shape_weights(scores[order], config.mu, config.shaping)
    step = weights @ eps[order[: config.mu]]
    candidate = parent.copy_with(parent.values + config.sigma * step)

    child_best = float(scores[order[0]])
    child_mean = float(scores[finite].mean()) if finite.any() else float("-inf")

    if config.update:
        return candidate, StepRecord(
            child_best=child_best,
            child_mean=child_mean,
            n_nonfinite=n_nonfinite,
            accepted=True,
        )

    # Elitist comparison: parent is re-scored on the same batch every step so
    # the comparison stays fair under stochastic value functions.
    parent_fitness = fitness(parent.values, derive_rng(*step_key, _TAG_CHILD, config.lam))
    cand_fitness = fitness(
        candidate.values, derive_rng(*step_key, _TAG_CHILD, config.lam + 1)
    )
    accepted = bool(np.isfinite(cand_fitness) and cand_fitness > parent_fitness)
    chosen = candidate if accepted else parent
    return chosen, StepRecord(
        child_best=child_best,
        child_mean=child_mean,
        n_nonfinite=n_nonfinite,
        accepted=accepted,
        parent_fitness=float(parent_fitness),
        candidate_fitness=float(cand_fitness),
    )


def resolve_subsample(config: EsConfig, spec: FitnessSpec, policy: PolicyConfig) -> int:
    """Documents kept per query per training pass.

    Defaults to twice the relevance cutoff, which keeps greedy ranking
    cheap while leaving enough slack to fill the page.
    """
    if config.subsample_docs is not None:
        return config.subsample_docs
    for term in spec.terms:
        if term.metric == "ndcg":
            return 2 * term.k
    return 2 * policy.k_rank


def train(
    dataset: Dataset,
    policy_config: PolicyConfig,
    spec: FitnessSpec,
    es_config: EsConfig,
) -> tuple[ParamVector, TrainHistory]:
    """Run the optimizer over per-iteration query batches.

    Every iteration draws a fresh batch and a fresh per-query document
    subsample, fixed for that iteration so all children face the identical
    sub-problem. The accepted parameters are re-scored once per iteration
    for the history trace.
    """
    if not dataset.queries:
        raise ValueError("training dataset has no queries")
    theta = init_params(policy_config, es_config.seed)
    history = TrainHistory()
    m_sub = resolve_subsample(es_config, spec, policy_config)

    for i in range(1, es_config.iters + 1):
        t0 = time.perf_counter()
        batch_rng = derive_rng(es_config.seed, _TAG_BATCH, i)
        batch = sample_batch(dataset, es_config.batch_size, batch_rng)
        sub_rng = derive_rng(es_config.seed, _TAG_SUBSAMPLE, i)
        views = [subsample_documents(q, m_sub, sub_rng) for q in batch]
        ctx = engine.BatchContext(views, dataset, spec, policy_config)

        def batch_fitness(values: np.ndarray, rng: np.random.Generator) -> float:
            return engine.evaluate(theta.copy_with(values), ctx, rng).combined

        theta, _ = es_step(theta, batch_fitness, es_config, (es_config.seed, i))

        report = engine.evaluate(theta, ctx, derive_rng(es_config.seed, _TAG_HISTORY, i))
        history.rows.append(
            HistoryRow(
                iteration=i,
                combined=report.combined,
                per_metric=dict(report.per_metric),
                wall_time_s=time.perf_counter() - t0,
            )
        )
    return theta, history
