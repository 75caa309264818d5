"""Command-line front end.

Subcommands: gen, train, eval, sweep, baseline-mmr, report. Every command
accepts --config with a JSON file; --profile applies the desk or paper
scale defaults. Precedence: profile < config file < explicit flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import baselines, harness
from .es import EsConfig
from .harness import PROFILES, WEIGHT_VARIANTS, HarnessError, RunConfig
from .policy import PolicyConfig
from .synthgen import GenConfig


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with Path(path).open("r", encoding="utf-8") as f:
        return json.load(f)


def _merged_section(profile: str | None, config: dict, section: str) -> dict:
    merged: dict = {}
    if profile:
        merged.update(PROFILES[profile].get(section, {}))
    merged.update(config.get(section, {}))
    return merged


def _normalize_variant(raw: str | None) -> str | None:
    """Accept '0,0', '{0,0}', or the canonical '-{0,0}' form.

    Variant ids start with a dash, which collides with flag parsing; bare
    forms let users write `--preset 0.17,0.17`.
    """
    if raw is None:
        return None
    v = raw.strip()
    if not v.startswith("-"):
        v = "-" + v
    if not v.startswith("-{"):
        v = "-{" + v[1:] + "}"
    return v


def _gen_config(args: argparse.Namespace, config: dict) -> GenConfig:
    raw = _merged_section(args.profile, config, "gen")
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.num_queries is not None:
        raw["num_queries"] = args.num_queries
    raw.setdefault("num_queries", 500)
    raw.setdefault("docs_per_query", 60)
    raw.setdefault("feature_dim", 20)
    return GenConfig(**raw)


def _run_config(args: argparse.Namespace, config: dict) -> RunConfig:
    es_raw = _merged_section(args.profile, config, "es")
    if args.seed is not None:
        es_raw["seed"] = args.seed
    policy_raw = _merged_section(args.profile, config, "policy")
    run_raw = config.get("run", {})
    policy = PolicyConfig.from_dict({"feature_dim": 20, **policy_raw})
    return RunConfig(
        dataset_path=args.dataset,
        out_dir=args.out_dir,
        variant=_normalize_variant(getattr(args, "preset", None))
        or run_raw.get("variant", "-{0,0}"),
        fractions=tuple(run_raw.get("fractions", harness.DEFAULT_FRACTIONS)),
        split_seed=int(run_raw.get("split_seed", 0)),
        policy=policy,
        es=EsConfig.from_dict(es_raw),
        eval_seeds=int(
            getattr(args, "eval_seeds", None) or run_raw.get("eval_seeds", 5)
        ),
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="marketrank",
        description="Multi-objective marketplace ranking: train, evaluate, compare.",
    )
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--profile", choices=sorted(PROFILES), default=None)
        p.add_argument("--seed", type=int, default=None)

    p_gen = sub.add_parser("gen", help="generate a synthetic dataset")
    common(p_gen)
    p_gen.add_argument("--out", required=True, help="output dataset JSON path")
    p_gen.add_argument("--num-queries", type=int, default=None)

    p_train = sub.add_parser("train", help="train one weight variant")
    common(p_train)
    p_train.add_argument("--dataset", required=True)
    p_train.add_argument("--out-dir", required=True)
    p_train.add_argument("--preset", default=None, help="weight variant id")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--dataset", required=True)
    p_eval.add_argument("--out-dir", required=True)
    p_eval.add_argument("--preset", default=None)
    p_eval.add_argument("--split", choices=harness.SPLITS, default="test")
    p_eval.add_argument("--eval-seeds", type=int, default=None)

    p_sweep = sub.add_parser("sweep", help="train+eval several weight variants")
    common(p_sweep)
    p_sweep.add_argument("--dataset", required=True)
    p_sweep.add_argument("--out-dir", required=True)
    p_sweep.add_argument(
        "--variants",
        default="all",
        help='semicolon-separated variant ids (e.g. "0,0;0.17,0.17"), or "all"',
    )
    p_sweep.add_argument(
        "--train-seeds", default=None, help="comma-separated training seeds"
    )

    p_mmr = sub.add_parser("baseline-mmr", help="tuned MMR baseline")
    common(p_mmr)
    p_mmr.add_argument("--dataset", required=True)
    p_mmr.add_argument("--out-dir", required=True)
    p_mmr.add_argument("--preset", default=None)
    p_mmr.add_argument(
        "--relevance-source",
        default=baselines.GRADE_ORACLE,
        help='"grade_oracle" or a relevance checkpoint path',
    )
    p_mmr.add_argument("--grid", default=None, help="comma-separated blend values")

    p_report = sub.add_parser("report", help="emit tidy plot-data CSVs")
    p_report.add_argument("--out-dir", required=True)
    p_report.add_argument("inputs", nargs="+", help="run directories to scan")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.WARNING))

    try:
        if args.command == "gen":
            config = _load_config(args.config)
            harness.cmd_gen(_gen_config(args, config), args.out)
        elif args.command == "train":
            run = _run_config(args, _load_config(args.config))
            harness.cmd_train(run)
        elif args.command == "eval":
            run = _run_config(args, _load_config(args.config))
            harness.cmd_eval(args.checkpoint, run, args.split)
        elif args.command == "sweep":
            run = _run_config(args, _load_config(args.config))
            variants = (
                list(WEIGHT_VARIANTS)
                if args.variants == "all"
                else [
                    _normalize_variant(v.strip())
                    for v in args.variants.split(";")
                ]
            )
            seeds = (
                [int(s) for s in args.train_seeds.split(",")]
                if args.train_seeds
                else None
            )
            harness.cmd_sweep(run, variants, seeds)
        elif args.command == "baseline-mmr":
            run = _run_config(args, _load_config(args.config))
            grid = (
                [float(g) for g in args.grid.split(",")]
                if args.grid
                else baselines.DEFAULT_LAMBDA_GRID
            )
            harness.cmd_baseline_mmr(
                run, grid=grid, relevance_source=args.relevance_source
            )
        elif args.command == "report":
            harness.cmd_report(args.inputs, args.out_dir)
    except (HarnessError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
