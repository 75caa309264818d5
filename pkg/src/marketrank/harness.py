"""Experiment harness: dataset generation, training runs, evaluation,
weight-variant sweeps, the MMR baseline, and plot-data emission.

Weight variants follow the published naming convention "-{a,b}": a is the
weight given to each market indicator (wealth equality and incentive), b
the group-diversity weight, and relevance absorbs the remainder.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import baselines, corpus, engine, es, metrics, synthgen
from .corpus import Dataset
from .fitness import FitnessSpec, FitnessTerm
from .policy import ParamVector, PolicyConfig, load_checkpoint, save_checkpoint
from .rngutil import derive_rng

logger = logging.getLogger(__name__)

_TAG_EVAL = 0xE7A1

SPLITS = ("train", "validation", "test")
DEFAULT_FRACTIONS = (0.7, 0.15, 0.15)

# Variant id -> (relevance, group diversity, gini, incentive) weights.
WEIGHT_VARIANTS: dict[str, tuple[float, float, float, float]] = {
    "-{0,0}": (1.00, 0.00, 0.00, 0.00),
    "-{0.05,0.05}": (0.85, 0.05, 0.05, 0.05),
    "-{0.1,0.1}": (0.70, 0.10, 0.10, 0.10),
    "-{0.17,0.17}": (0.49, 0.17, 0.17, 0.17),
    "-{0.25,0.25}": (0.25, 0.25, 0.25, 0.25),
    "-{0.3,0.3}": (0.10, 0.30, 0.30, 0.30),
    "-{0.05,0}": (0.90, 0.00, 0.05, 0.05),
    "-{0.1,0}": (0.80, 0.00, 0.10, 0.10),
    "-{0.25,0}": (0.50, 0.00, 0.25, 0.25),
    "-{0.33,0}": (0.33, 0.00, 0.33, 0.33),
    "-{0.4,0}": (0.20, 0.00, 0.40, 0.40),
}

RELEVANCE_K = 10
DIVERSITY_K = 10
INCENTIVE_K = 1

# The flattened desk traffic exponent keeps split-level purchase mass from
# being dominated by one or two queries, which would degenerate the
# wealth-equality score at 500-query scale. sigma 0.03 is calibrated so the
# value net converges within a few hundred iterations at lambda 32.
PROFILES: dict[str, dict] = {
    "desk": {
        "gen": {
            "num_queries": 500, "docs_per_query": 60, "feature_dim": 20,
            "traffic_power": 0.5,
        },
        "es": {
            "lambda": 32, "mu": 8, "iters": 300, "batch_size": 256,
            "sigma": 0.03,
        },
    },
    "paper": {
        "gen": {"num_queries": 5000, "docs_per_query": 60, "feature_dim": 20},
        "es": {
            "lambda": 768, "mu": 50, "iters": 300, "batch_size": 256,
            "sigma": 0.03,
        },
    },
}


class HarnessError(RuntimeError):
    pass


def variant_spec(
    variant: str | tuple[float, float, float, float],
    training: bool = False,
    gini_position: int = 1,
) -> FitnessSpec:
    """Fitness spec for a named weight variant (or explicit weight tuple).

    Evaluation specs keep zero-weight terms so reports cover every metric;
    training specs drop them to avoid paying for unused metrics.
    """
    if isinstance(variant, str):
        if variant not in WEIGHT_VARIANTS:
            raise HarnessError(
                f"unknown variant {variant!r}; valid: {sorted(WEIGHT_VARIANTS)}"
            )
        weights = WEIGHT_VARIANTS[variant]
    else:
        weights = tuple(variant)
    rel, div, gini, inc = weights
    terms = (
        FitnessTerm("ndcg", rel, RELEVANCE_K),
        FitnessTerm("err_ia", div, DIVERSITY_K),
        FitnessTerm("gini", gini, 1),
        FitnessTerm("incentive", inc, INCENTIVE_K),
    )
    if training:
        terms = tuple(t for t in terms if t.weight > 0)
    return FitnessSpec(terms=terms, gini_position=gini_position)


@dataclass(frozen=True)
class RunConfig:
    dataset_path: str
    out_dir: str
    variant: str = "-{0,0}"
    fractions: tuple[float, float, float] = DEFAULT_FRACTIONS
    split_seed: int = 0
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    es: es.EsConfig = field(default_factory=es.EsConfig)
    eval_seeds: int = 5

    def __post_init__(self) -> None:
        if self.eval_seeds < 1:
            raise ValueError("eval_seeds must be >= 1")
        if self.variant not in WEIGHT_VARIANTS:
            raise HarnessError(
                f"unknown variant {self.variant!r}; valid: {sorted(WEIGHT_VARIANTS)}"
            )

    def to_dict(self) -> dict:
        return {
            "dataset_path": self.dataset_path,
            "out_dir": self.out_dir,
            "variant": self.variant,
            "fractions": list(self.fractions),
            "split_seed": self.split_seed,
            "policy": self.policy.to_dict(),
            "es": self.es.to_dict(),
            "eval_seeds": self.eval_seeds,
        }


def split_dataset(dataset: Dataset, config: RunConfig) -> dict[str, Dataset]:
    train, validation, test = corpus.split(
        dataset, config.fractions, config.split_seed
    )
    return {"train": train, "validation": validation, "test": test}


# --- Commands ----------------------------------------------------------------


def cmd_gen(config: synthgen.GenConfig, out_path: str | Path) -> Dataset:
    dataset = synthgen.generate(config)
    corpus.save_dataset(dataset, out_path)
    print(
        f"wrote {out_path}: {len(dataset.queries)} queries, "
        f"F={dataset.feature_dim}, {len(dataset.category_set)} categories, "
        f"{dataset.tier_count} tiers"
    )
    return dataset


def cmd_train(config: RunConfig) -> tuple[ParamVector, es.TrainHistory]:
    dataset = corpus.load_dataset(config.dataset_path)
    train_split = split_dataset(dataset, config)["train"]
    spec = variant_spec(config.variant, training=True)

    params, history = es.train(train_split, config.policy, spec, config.es)

    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, config.policy, out / "checkpoint.json")
    history.to_csv(out / "history.csv")
    with (out / "resolved_config.json").open("w", encoding="utf-8") as f:
        json.dump(config.to_dict(), f, indent=2)
    print(
        f"trained variant {config.variant} for {config.es.iters} iterations; "
        f"checkpoint at {out / 'checkpoint.json'}"
    )
    return params, history


def evaluate_policy(
    params: ParamVector,
    policy: PolicyConfig,
    split: Dataset,
    spec: FitnessSpec,
    eval_seeds: int,
) -> dict:
    """Full-split evaluation: every query, full document sets.

    Stochastic policies are scored `eval_seeds` times with independent
    streams and report mean and sample std per metric; static policies run
    once and omit std.
    """
    ctx = engine.BatchContext(list(split.queries), split, spec, policy)
    seeds = range(eval_seeds if policy.stochastic else 1)
    per_seed = []
    for s in seeds:
        report = engine.evaluate(params, ctx, derive_rng(_TAG_EVAL, s))
        per_seed.append(
            {
                "seed": s,
                "combined": report.combined,
                "per_metric": {k: float(v) for k, v in report.per_metric.items()},
            }
        )
    names = list(per_seed[0]["per_metric"])
    mean = {
        "combined": float(np.mean([r["combined"] for r in per_seed])),
        **{
            n: float(np.mean([r["per_metric"][n] for r in per_seed]))
            for n in names
        },
    }
    std = None
    if policy.stochastic and len(per_seed) > 1:
        std = {
            "combined": float(np.std([r["combined"] for r in per_seed], ddof=1)),
            **{
                n: float(np.std([r["per_metric"][n] for r in per_seed], ddof=1))
                for n in names
            },
        }

    ranked = engine.rank_batch(params, ctx, derive_rng(_TAG_EVAL, 0))
    wealth = engine.position_wealth(ctx, ranked, spec.gini_position)
    lorenz = None
    if wealth.sum() > 0:
        cum_pop, cum_wealth = metrics.lorenz_points(
            metrics.MarketLedger(split.tier_population, tuple(wealth))
        )
        lorenz = list(zip(cum_pop.tolist(), cum_wealth.tolist()))

    return {
        "stochastic": policy.stochastic,
        "eval_seeds": len(per_seed),
        "per_seed": per_seed,
        "mean": mean,
        "std": std,
        "lorenz": lorenz,
    }


def _write_eval(result: dict, out: Path, split_name: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with (out / f"eval_{split_name}.json").open("w", encoding="utf-8") as f:
        json.dump(result, f, indent=2)
    if result.get("lorenz"):
        with (out / f"lorenz_{split_name}.csv").open(
            "w", encoding="utf-8", newline=""
        ) as f:
            writer = csv.writer(f)
            writer.writerow(["cumulative_population", "cumulative_wealth"])
            for x, y in result["lorenz"]:
                writer.writerow([repr(x), repr(y)])


def cmd_eval(
    checkpoint_path: str | Path,
    config: RunConfig,
    split_name: str = "test",
) -> dict:
    if split_name not in SPLITS:
        raise HarnessError(f"split must be one of {SPLITS}, got {split_name!r}")
    params, policy = load_checkpoint(checkpoint_path)
    if policy.to_dict() != config.policy.to_dict():
        logger.info("using policy configuration stored in the checkpoint")
    dataset = corpus.load_dataset(config.dataset_path)
    split = split_dataset(dataset, config)[split_name]
    spec = variant_spec(config.variant, training=False)
    result = evaluate_policy(params, policy, split, spec, config.eval_seeds)
    result["split"] = split_name
    result["variant"] = config.variant
    _write_eval(result, Path(config.out_dir), split_name)
    print(
        f"eval {split_name} [{config.variant}]: "
        + " ".join(f"{k}={v:.4f}" for k, v in result["mean"].items())
    )
    return result


def cmd_sweep(
    config: RunConfig,
    variants: Sequence[str],
    seeds: Sequence[int] | None = None,
) -> dict:
    """Train and evaluate each weight variant with shared splits and seeds.

    Per-variant failures are recorded and the sweep continues. Emits a
    combined report (JSON + CSV) with validation and test columns.
    """
    for v in variants:
        if v not in WEIGHT_VARIANTS:
            raise HarnessError(
                f"unknown variant {v!r}; valid: {sorted(WEIGHT_VARIANTS)}"
            )
    seeds = list(seeds) if seeds else [config.es.seed]
    out_root = Path(config.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)

    runs = []
    for variant in variants:
        for seed in seeds:
            run_dir = out_root / f"{_variant_slug(variant)}_seed{seed}"
            run_cfg = replace(
                config,
                variant=variant,
                out_dir=str(run_dir),
                es=replace(config.es, seed=seed),
            )
            entry: dict = {"variant": variant, "seed": seed, "dir": str(run_dir)}
            try:
                params, _ = cmd_train(run_cfg)
                for split_name in ("validation", "test"):
                    entry[split_name] = cmd_eval(
                        run_dir / "checkpoint.json", run_cfg, split_name
                    )
            except Exception as exc:  # noqa: BLE001 - sweep must survive a bad run
                logger.exception("variant %s seed %d failed", variant, seed)
                entry["error"] = f"{type(exc).__name__}: {exc}"
            runs.append(entry)

    report = {
        "variants": list(variants),
        "seeds": seeds,
        "policy": config.policy.to_dict(),
        "runs": runs,
        "summary": _sweep_summary(runs),
    }
    with (out_root / "sweep_report.json").open("w", encoding="utf-8") as f:
        json.dump(report, f, indent=2)
    _sweep_csv(report, out_root / "sweep_report.csv")
    print(f"sweep complete: {len(runs)} runs, report at {out_root / 'sweep_report.json'}")
    return report


def _variant_slug(variant: str) -> str:
    return variant.strip("-{}").replace(",", "_").replace(".", "p")


def _sweep_summary(runs: list[dict]) -> list[dict]:
    """Mean/std over seeds per (variant, split, metric)."""
    groups: dict[str, list[dict]] = {}
    for entry in runs:
        if "error" not in entry:
            groups.setdefault(entry["variant"], []).append(entry)
    summary = []
    for variant, entries in groups.items():
        for split_name in ("validation", "test"):
            names = ["combined", *entries[0][split_name]["mean"].keys()]
            names = list(dict.fromkeys(names))
            values = {
                n: [e[split_name]["mean"][n] for e in entries] for n in names
            }
            summary.append(
                {
                    "variant": variant,
                    "split": split_name,
                    "n_seeds": len(entries),
                    "mean": {n: float(np.mean(v)) for n, v in values.items()},
                    "std": {
                        n: float(np.std(v, ddof=1)) if len(v) > 1 else 0.0
                        for n, v in values.items()
                    },
                }
            )
    return summary


def _sweep_csv(report: dict, path: Path) -> None:
    rows = report["summary"]
    names = sorted({n for r in rows for n in r["mean"]})
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["variant", "split", "n_seeds"]
            + [f"{n}_mean" for n in names]
            + [f"{n}_std" for n in names]
        )
        for r in rows:
            writer.writerow(
                [r["variant"], r["split"], r["n_seeds"]]
                + [repr(r["mean"].get(n, float("nan"))) for n in names]
                + [repr(r["std"].get(n, float("nan"))) for n in names]
            )


def cmd_baseline_mmr(
    config: RunConfig,
    grid: Sequence[float] = baselines.DEFAULT_LAMBDA_GRID,
    relevance_source: str = baselines.GRADE_ORACLE,
    k_rank: int = 10,
) -> dict:
    """Tune the MMR blend on validation, then score validation and test."""
    dataset = corpus.load_dataset(config.dataset_path)
    splits = split_dataset(dataset, config)
    spec = variant_spec(config.variant, training=False)

    val_scores = baselines.relevance_scores(splits["validation"], relevance_source)
    best_lambda, tuned_report = baselines.tune_lambda(
        splits["validation"], spec, grid, scores=val_scores, k_rank=k_rank
    )

    result: dict = {
        "variant": config.variant,
        "blend_lambda": best_lambda,
        "relevance_source": relevance_source,
        "tuning_combined": tuned_report.combined,
    }
    mmr_cfg = baselines.MmrConfig(blend_lambda=best_lambda, k_rank=k_rank)
    from .fitness import evaluate_fitness

    for split_name in ("validation", "test"):
        split = splits[split_name]
        scores = baselines.relevance_scores(split, relevance_source)
        by_query = {
            q.query_id: baselines.mmr_rank(scores[q.query_id], q.docs, mmr_cfg, q.query_id)
            for q in split.queries
        }
        report = evaluate_fitness(
            lambda q: by_query[q.query_id], list(split.queries), split, spec
        )
        result[split_name] = {
            "combined": report.combined,
            "per_metric": {k: float(v) for k, v in report.per_metric.items()},
        }

    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "mmr_report.json").open("w", encoding="utf-8") as f:
        json.dump(result, f, indent=2)
    print(
        f"mmr baseline tuned: blend={best_lambda:.2f}, "
        f"test combined={result['test']['combined']:.4f}"
    )
    return result


def cmd_report(input_dirs: Sequence[str | Path], out_dir: str | Path) -> dict:
    """Collect histories and reports into tidy plot-ready CSVs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    found: dict[str, int] = {"history": 0, "sweep": 0, "mmr": 0, "lorenz": 0}
    missing: list[str] = []

    trace_rows: list[tuple] = []
    lorenz_rows: list[tuple] = []
    weight_rows: list[tuple] = []

    for d in input_dirs:
        d = Path(d)
        if not d.exists():
            missing.append(str(d))
            continue
        for hist in sorted(d.rglob("history.csv")):
            found["history"] += 1
            source = hist.parent.name or hist.parent.resolve().name
            with hist.open("r", encoding="utf-8", newline="") as f:
                for row in csv.DictReader(f):
                    for key, value in row.items():
                        if key in ("iteration", "wall_time_s"):
                            continue
                        trace_rows.append(
                            (source, "train", row["iteration"], key, value)
                        )
        for mmr in sorted(d.rglob("mmr_report.json")):
            found["mmr"] += 1
            payload = json.loads(mmr.read_text(encoding="utf-8"))
            for metric, value in payload["test"]["per_metric"].items():
                trace_rows.append(("mmr_baseline", "baseline", "", metric, repr(value)))
            trace_rows.append(
                ("mmr_baseline", "baseline", "", "combined",
                 repr(payload["test"]["combined"]))
            )
        for sweep_file in sorted(d.rglob("sweep_report.json")):
            found["sweep"] += 1
            payload = json.loads(sweep_file.read_text(encoding="utf-8"))
            for row in payload["summary"]:
                weights = WEIGHT_VARIANTS.get(row["variant"])
                market_w = weights[2] if weights else float("nan")
                for metric in ("gini", "incentive", "ndcg", "err_ia", "combined"):
                    if metric in row["mean"]:
                        weight_rows.append(
                            (
                                row["variant"],
                                repr(market_w),
                                row["split"],
                                metric,
                                repr(row["mean"][metric]),
                                repr(row["std"][metric]),
                            )
                        )
        for lorenz in sorted(d.rglob("lorenz_*.csv")):
            found["lorenz"] += 1
            variant = lorenz.parent.name
            split_name = lorenz.stem.replace("lorenz_", "")
            with lorenz.open("r", encoding="utf-8", newline="") as f:
                for row in csv.DictReader(f):
                    lorenz_rows.append(
                        (
                            variant,
                            split_name,
                            row["cumulative_population"],
                            row["cumulative_wealth"],
                        )
                    )

    if not any(found.values()):
        raise HarnessError(
            "no history.csv, sweep_report.json, mmr_report.json, or lorenz CSVs "
            f"under {[str(d) for d in input_dirs]}"
            + (f"; missing paths: {missing}" if missing else "")
        )

    if trace_rows:
        with (out / "traces.csv").open("w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["source", "series", "iteration", "metric", "value"])
            writer.writerows(trace_rows)
    if weight_rows:
        with (out / "gini_vs_weight.csv").open("w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(
                ["variant", "market_weight", "split", "metric", "mean", "std"]
            )
            writer.writerows(weight_rows)
    if lorenz_rows:
        with (out / "lorenz_curves.csv").open("w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(
                ["variant", "split", "cumulative_population", "cumulative_wealth"]
            )
            writer.writerows(lorenz_rows)

    print(
        "report bundle written: "
        + ", ".join(f"{k}={v}" for k, v in found.items())
    )
    return {"found": found, "out_dir": str(out), "missing": missing}
