"""
Command-line interface.

Subcommands:
    simulate          draw one dataset from a scenario and write it as CSV
    select            fit and select candidate models on a dataset CSV
    study             run a replicated Monte Carlo study
    report            render a summary or records CSV as a markdown table
    calibrate-copula  find the copula parameter for a target correlation

Exit codes: 0 success, 2 configuration error, 3 degenerate computation,
4 calibration failure.
"""

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Optional

from .copula_cache import CopulaCache
from .dgp import generate, resolve_copula
from .effects import study_truth
from .errors import ConfigError, DegenerateError, LimlselError
from .mcharness import (
    read_records_csv,
    read_summary_csv,
    render_markdown,
    run_study,
    summarize,
    write_study,
)
from .models import Criterion, OptimizerOptions, SelectionResult, Xi
from .modelspace import CandidateCatalog, TreatmentKind, catalogs_for
from .selection import select_2sri, select_liml
from .statlib import (
    CALIBRATION_PAIRS,
    CALIBRATION_SEED,
    CopulaFamily,
    Correlation,
    Margin,
    calibrate_copula_param,
    copula_correlation,
)
from .storage import (
    DEFAULT_CONFIG,
    load_study_config,
    read_dataset_csv,
    read_json_file,
    write_dataset_csv,
)
from .version import __version__

logger = logging.getLogger(__name__)


def _scenario_overrides(args) -> dict:
    return {
        "scenario": args.scenario,
        "treatment_kind": args.treatment_kind,
        "copula": args.copula,
        "margin": args.margin,
        "copula_df": args.copula_df,
        "n": args.n,
        "seed": args.seed,
    }


def _add_scenario_flags(parser: argparse.ArgumentParser) -> None:
    defaults = DEFAULT_CONFIG
    parser.add_argument("--config", type=Path, help="JSON study configuration file")
    parser.add_argument("--scenario", help=f"s1, s2, s3 or s4 (default {defaults['scenario']})")
    parser.add_argument(
        "--treatment-kind", help=f"continuous or dichotomous (default {defaults['treatment_kind']})"
    )
    parser.add_argument(
        "--copula", help=f"gaussian, student_t or clayton (default {defaults['copula']})"
    )
    parser.add_argument("--margin", help=f"normal or logistic (default {defaults['margin']})")
    parser.add_argument(
        "--copula-df", type=int, help=f"t-copula degrees of freedom (default {defaults['copula_df']})"
    )
    parser.add_argument("--n", type=int, help=f"sample size (default {defaults['n']})")
    parser.add_argument("--seed", type=int, help=f"base seed (default {defaults['seed']})")


# === simulate ===


def cmd_simulate(args) -> int:
    config = load_study_config(args.config, _scenario_overrides(args))
    scenario = config.scenario
    data = generate(scenario, args.rep, resolve_copula(scenario, CopulaCache()))
    write_dataset_csv(data, args.out, include_latents=args.debug_latents)
    logger.info("Wrote %d rows to %s", data.n, args.out)
    print(f"wrote {data.n} rows to {args.out}")
    return 0


# === select ===


def _split_labels(text: Optional[str]) -> Optional[list[str]]:
    if not text:
        return None
    return [label.strip() for label in text.split(",") if label.strip()]


def _restrict(catalog: CandidateCatalog, labels: Optional[list[str]], flag: str) -> CandidateCatalog:
    if labels is None:
        return catalog
    try:
        return catalog.restrict(labels)
    except ValueError as exc:
        raise ConfigError(f"{flag}: {exc}") from None


def _print_selection(result: SelectionResult) -> None:
    if result.stage1_table:
        print("first stage (aic)")
        print(f"{'treatment':<10} {'loglik':>14} {'value':>14} {'k':>3}  converged")
        for row in result.stage1_table:
            print(
                f"{row.labels[0]:<10} {_fmt(row.loglik):>14} {_fmt(row.value):>14} "
                f"{row.n_params:>3}  {'yes' if row.converged else 'no'}"
            )
        print()
    print(f"{'treatment':<10} {'outcome':<8} {'loglik':>14} {result.criterion.value:>14} {'k':>3}  converged")
    for row in result.table:
        print(
            f"{row.labels[0]:<10} {row.labels[1]:<8} {_fmt(row.loglik):>14} {_fmt(row.value):>14} "
            f"{row.n_params:>3}  {'yes' if row.converged else 'no'}"
        )
    print()
    print(f"chosen: {result.chosen[0]} {result.chosen[1]} ({result.classification.value})")


def _fmt(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.4f}"


def cmd_select(args) -> int:
    kind = TreatmentKind(args.treatment_kind) if args.treatment_kind else None
    data = read_dataset_csv(args.data, kind)
    cat_t, cat_o = catalogs_for(data.treatment_kind)
    cat_t = _restrict(cat_t, _split_labels(args.treatment_candidates), "--treatment-candidates")
    cat_o = _restrict(cat_o, _split_labels(args.outcome_candidates), "--outcome-candidates")

    if args.method == "2sri":
        if args.criterion not in (None, "aic"):
            raise ConfigError(f"--criterion {args.criterion}: 2sri selects by aic in both stages")
        result = select_2sri(data, cat_t, cat_o)
    else:
        if args.criterion == "aic":
            raise ConfigError("--criterion aic: liml selects by laic or lbic")
        xi = None
        if args.xi_mode == "fixed":
            try:
                sigma_v = args.sigma_v if data.treatment_kind is TreatmentKind.CONTINUOUS else None
                xi = Xi(Correlation(args.rho), sigma_v)
            except ValueError as exc:
                raise ConfigError(f"--rho/--sigma-v: {exc}") from None
        opts = OptimizerOptions(gtol=args.gtol, max_iter=args.max_iter)
        criterion = Criterion(args.criterion or "lbic")
        result = select_liml(data, cat_t, cat_o, criterion, args.xi_mode, opts, xi)

    if args.json:
        print(json.dumps(result.to_dict(), indent=2))
    else:
        _print_selection(result)
    return 0


# === study ===


def cmd_study(args) -> int:
    overrides = _scenario_overrides(args)
    overrides.update(
        {
            "reps": args.reps,
            "parallelism": args.parallelism,
            "xi_mode": args.xi_mode,
            "criteria": args.criterion,
            "methods": args.method,
            "output_dir": str(args.out) if args.out else None,
        }
    )
    config = load_study_config(args.config, overrides)
    scenario = config.scenario
    records, summary = run_study(
        scenario,
        config.methods,
        config.reps,
        config.criteria,
        config.parallelism,
        config.xi_mode,
        config.opts,
        cache=CopulaCache(),
    )
    truth = study_truth(scenario)
    write_study(config.output_dir, config.to_dict(), records, truth, scenario.treatment_kind)
    title = f"{scenario.scenario_id.value} {scenario.treatment_kind.value} n={scenario.n} R={config.reps}"
    print(render_markdown(summary.rows, title, summary.truth))
    return 0


# === report ===


def _header(path: Path) -> list[str]:
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            return next(csv.reader(f), [])
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}") from None


def _records_truth(path: Path, truth: Optional[float]) -> float:
    if truth is not None:
        return truth
    study_json = path.parent / "study.json"
    if not study_json.exists():
        raise ConfigError(f"{path}: pass --truth or keep study.json next to the records")
    document = read_json_file(study_json)
    try:
        return float(document["truth"]["estimate"])
    except (KeyError, TypeError, ValueError):
        raise ConfigError(f"{study_json}: missing truth.estimate") from None


def cmd_report(args) -> int:
    header = _header(args.path)
    if not header:
        raise DegenerateError(f"{args.path} is empty")
    if "rep" in header:
        records = read_records_csv(args.path)
        if not records:
            raise DegenerateError(f"{args.path} has no records")
        truth = _records_truth(args.path, args.truth)
        rows = summarize(records, truth).rows
    elif "method" in header:
        rows = read_summary_csv(args.path)
        truth = args.truth
        if not rows:
            raise DegenerateError(f"{args.path} has no summary rows")
    else:
        raise ConfigError(f"{args.path}: neither a records nor a summary CSV")
    print(render_markdown(rows, args.title, truth), end="")
    return 0


# === calibrate-copula ===


def cmd_calibrate_copula(args) -> int:
    try:
        family = CopulaFamily(args.family)
        margin = Margin(args.margins)
        if not 0.0 < args.target < 1.0:
            raise ValueError(f"target must lie in (0, 1), got {args.target}")
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    if args.df < 1 or args.pairs < 2:
        raise ConfigError("--df must be >= 1 and --pairs >= 2")
    if args.no_cache:
        spec = calibrate_copula_param(family, args.target, margin, args.df, args.pairs, args.seed)
    else:
        spec = CopulaCache().get_or_calibrate(family, args.target, margin, args.df, args.pairs, args.seed)
    achieved = copula_correlation(spec, margin, args.pairs, args.seed)
    print(f"family={family.value} margins={margin.value} df={spec.df}")
    print(f"param={spec.param:.6f} achieved_corr={achieved:.4f}")
    return 0


# === Parser ===


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="limlsel",
        description="LIML estimation and LAIC/LBIC model selection for binary-outcome IV models",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", help="write one simulated dataset")
    _add_scenario_flags(simulate)
    simulate.add_argument("--rep", type=int, default=1, help="replication stream id (default 1)")
    simulate.add_argument("--out", type=Path, required=True, help="output CSV path")
    simulate.add_argument("--debug-latents", action="store_true", help="append latent v,u columns")
    simulate.set_defaults(func=cmd_simulate)

    select = sub.add_parser("select", help="select a model pair on a dataset CSV")
    select.add_argument("data", type=Path, help="dataset CSV (y,w,x1,x2,x3,z)")
    select.add_argument("--method", choices=["liml", "2sri"], default="liml")
    select.add_argument(
        "--criterion",
        choices=["laic", "lbic", "aic"],
        help="liml: laic or lbic (default lbic); 2sri: aic only",
    )
    select.add_argument(
        "--treatment-kind", choices=["continuous", "dichotomous"], help="default: inferred from w"
    )
    select.add_argument("--xi-mode", choices=["fixed", "estimated"], default="estimated")
    select.add_argument("--rho", type=float, default=0.0, help="fixed rho (--xi-mode fixed)")
    select.add_argument("--sigma-v", type=float, default=1.0, help="fixed sigma_v (--xi-mode fixed)")
    select.add_argument("--treatment-candidates", help="comma-separated labels to search, e.g. a4")
    select.add_argument("--outcome-candidates", help="comma-separated labels to search, e.g. b2")
    select.add_argument("--gtol", type=float, default=1e-6)
    select.add_argument("--max-iter", type=int, default=500)
    select.add_argument("--json", action="store_true", help="structured output")
    select.set_defaults(func=cmd_select)

    study = sub.add_parser("study", help="run a replicated Monte Carlo study")
    _add_scenario_flags(study)
    study.add_argument("--reps", type=int, help=f"replications (default {DEFAULT_CONFIG['reps']})")
    study.add_argument(
        "--parallelism", type=int, help="worker processes (default LIMLSEL_PARALLELISM or physical cores)"
    )
    study.add_argument("--xi-mode", help="fixed or estimated (default estimated)")
    study.add_argument("--criterion", action="append", help="laic/lbic, repeatable (default both)")
    study.add_argument(
        "--method", action="append", help="2sls, 2sri, liml, 2sri_full, liml_full; repeatable (default all)"
    )
    study.add_argument("--out", type=Path, help=f"output directory (default {DEFAULT_CONFIG['output_dir']})")
    study.set_defaults(func=cmd_study)

    report = sub.add_parser("report", help="render a summary or records CSV as markdown")
    report.add_argument("path", type=Path)
    report.add_argument("--truth", type=float, help="truth for a records CSV (default: study.json)")
    report.add_argument("--title")
    report.set_defaults(func=cmd_report)

    calibrate = sub.add_parser("calibrate-copula", help="calibrate a copula to a target correlation")
    calibrate.add_argument("--family", required=True, help="gaussian, student_t or clayton")
    calibrate.add_argument("--target", type=float, required=True, help="target Pearson correlation")
    calibrate.add_argument("--margins", default="logistic", help="normal or logistic (default logistic)")
    calibrate.add_argument("--df", type=int, default=3, help="t-copula degrees of freedom")
    calibrate.add_argument("--pairs", type=int, default=CALIBRATION_PAIRS)
    calibrate.add_argument("--seed", type=int, default=CALIBRATION_SEED)
    calibrate.add_argument("--no-cache", action="store_true", help="ignore and do not update the cache")
    calibrate.set_defaults(func=cmd_calibrate_copula)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except LimlselError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
