"""Command-line front end: ``rctsynth synthesize | evaluate | simulate``.

Exit codes: 0 success, 2 invalid input, 3 runtime or numerical failure.
Diagnostics and the resolved configuration go to stderr; data goes to files.
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import math
import os
import sys
from dataclasses import replace
from typing import Any, Sequence

from . import __version__
from .data import load_dataset, read_schema
from .errors import NumericError, RCTSynthError, ValidationError
from .metrics import StatisticSpec, aggregate, compare_fits, sensitive_stat_mse
from .regression import ModelSpec, fit
from .seeding import fresh_seed
from .simulation import BUNDLED_STUDIES, load_bundled_study, parse_study, run_study
from .synthesis import (SynthesisConfig, parse_epsilon, parse_zeta,
                        synthesize, write_release_bundle)

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3


def _read_json(path: str | None, what: str) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{what} is not valid JSON: {exc}", source=path) from None
    if not isinstance(doc, dict):
        raise ValidationError(f"{what} must be a JSON object", source=path)
    return doc


def _report(command: str, resolved: dict[str, Any]) -> None:
    print(json.dumps({"command": command, "resolved": resolved}, sort_keys=True),
          file=sys.stderr)


def _load_model(path: str | None, schema, family: str | None = None) -> ModelSpec:
    if path is None:
        model = ModelSpec.from_schema(schema)
    else:
        model = ModelSpec.from_dict(_read_json(path, "model"))
    for name in (model.response, *model.treatments, *model.blocks, *model.covariates):
        if name not in schema:
            raise ValidationError(f"model refers to column {name!r} absent from schema",
                                  source=path)
    if family is not None:
        model = replace(model, family=family)
    return model


def cmd_synthesize(args: argparse.Namespace) -> int:
    cfg_doc = _read_json(args.config, "config")
    epsilon = parse_epsilon(args.epsilon if args.epsilon is not None
                            else cfg_doc.get("epsilon", 1.0))
    zeta = parse_zeta(args.zeta if args.zeta is not None else cfg_doc.get("zeta", "2/3"))
    family = args.outcome_model or cfg_doc.get("outcome_family", "gaussian")
    seed = args.seed if args.seed is not None else cfg_doc.get("seed")
    if seed is None:
        seed = fresh_seed()
    variant = args.design or cfg_doc.get("design")
    n_out = args.n_out if args.n_out is not None else cfg_doc.get("n_out")
    dp_mode = not math.isinf(epsilon)
    schema = read_schema(args.schema, dp_mode=dp_mode)
    model = _load_model(args.model, schema)
    data = load_dataset(args.data, schema, dp_mode=dp_mode)
    cfg = SynthesisConfig(epsilon, zeta, family, design_variant=variant, seed=int(seed),
                          n_out=n_out)
    _report("synthesize", {**cfg.echo(), "data": args.data, "schema": args.schema,
                           "model": model.to_dict(), "out": args.out})
    output = synthesize(data, model, cfg)
    for w in output.warnings:
        print(f"warning: {w}", file=sys.stderr)
    write_release_bundle(output, args.out)
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    schema = read_schema(args.schema, dp_mode=False)
    model = _load_model(args.model, schema, args.family)
    private = load_dataset(args.private, schema, dp_mode=False)
    paths = sorted(set(p for pattern in args.synthetic for p in glob.glob(pattern)))
    if not paths:
        raise ValidationError(f"no synthetic files match {args.synthetic}")
    stat = StatisticSpec.parse(args.sensitive_stat) if args.sensitive_stat else None
    _report("evaluate", {"private": args.private, "synthetic": paths, "schema": args.schema,
                         "model": model.to_dict(),
                         "sensitive_stat": str(stat) if stat else None, "out": args.out})
    synthetics = [load_dataset(p, schema, dp_mode=False) for p in paths]
    private_fit = fit(private, model)
    pairs = [compare_fits(private_fit, fit(s, model)) for s in synthetics]
    m5 = sensitive_stat_mse(stat, private, synthetics) if stat else None
    report = aggregate(pairs, metric5=m5, statistic=str(stat) if stat else None)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "metrics.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(report.to_csv())
    with open(os.path.join(args.out, "metrics.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    if os.path.exists(args.study):
        with open(args.study, encoding="utf-8") as fh:
            text = fh.read()
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"study config is not valid JSON: {exc}",
                                  source=args.study) from None
        cfg = parse_study(doc)
        has_seed = "seed" in doc
    elif args.study in BUNDLED_STUDIES:
        cfg = load_bundled_study(args.study)
        has_seed = True
    else:
        raise ValidationError(f"no such study file or bundled study {args.study!r}; "
                              f"bundled: {', '.join(BUNDLED_STUDIES)}")
    updates: dict[str, Any] = {}
    if args.runs is not None:
        updates["n_private"] = args.runs
    if args.reps is not None:
        updates["n_synthetic_per_private"] = args.reps
    if args.zeta is not None:
        updates["zeta"] = parse_zeta(args.zeta)
    if args.epsilon:
        updates["epsilons"] = tuple(parse_epsilon(e) for e in args.epsilon)
    if args.outcome_model:
        updates["outcome_family"] = args.outcome_model
    if args.seed is not None:
        updates["seed"] = args.seed
    elif not has_seed:
        updates["seed"] = fresh_seed()
    if updates:
        cfg = replace(cfg, **updates)
    _report("simulate", {**cfg.echo(), "threads": args.threads, "out": args.out})
    result = run_study(cfg, threads=args.threads)
    result.write(args.out)
    for key, rep in result.reports.items():
        for name, count in rep.warnings.items():
            print(f"warning: epsilon={key}: {count} {name.replace('_', ' ')}", file=sys.stderr)
    return EXIT_OK


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rctsynth",
        description="Differentially private synthetic data for randomized controlled trials.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthesize", help="protect a private frame and write a release bundle")
    p.add_argument("data", help="private data CSV")
    p.add_argument("--schema", required=True, help="schema JSON")
    p.add_argument("--config", help="synthesis config JSON (flags override)")
    p.add_argument("--model", help="model JSON (default: all schema columns)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--epsilon", help="privacy-loss budget, or 'inf' for non-DP synthesis")
    p.add_argument("--zeta", help="bin precision exponent, decimal or fraction like 2/3")
    p.add_argument("--seed", type=int)
    p.add_argument("--outcome-model", choices=("gaussian", "logistic"))
    p.add_argument("--design", choices=("simple", "complete", "stratified"))
    p.add_argument("--n-out", type=_positive_int)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("evaluate", help="utility metrics of synthetic frames vs the private one")
    p.add_argument("private", help="private data CSV")
    p.add_argument("synthetic", nargs="+", help="synthetic CSV files or glob patterns")
    p.add_argument("--schema", required=True)
    p.add_argument("--model")
    p.add_argument("--family", choices=("gaussian", "logistic"),
                   help="analysis model family override")
    p.add_argument("--out", required=True)
    p.add_argument("--sensitive-stat", help="covariate statistic for Metric 5, e.g. variance:x1")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("simulate", help="run a Monte-Carlo study")
    p.add_argument("study", help=f"study JSON path or bundled name ({', '.join(BUNDLED_STUDIES)})")
    p.add_argument("--out", required=True)
    p.add_argument("--runs", type=_positive_int, help="private datasets")
    p.add_argument("--reps", type=_positive_int, help="synthetic datasets per private dataset")
    p.add_argument("--threads", type=_positive_int, default=1)
    p.add_argument("--seed", type=int)
    p.add_argument("--zeta")
    p.add_argument("--epsilon", action="append", help="repeatable; replaces the study's list")
    p.add_argument("--outcome-model", choices=("gaussian", "logistic"))
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericError, RCTSynthError, ArithmeticError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
