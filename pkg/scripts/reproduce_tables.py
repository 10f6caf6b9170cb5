"""
Batch driver for the simulation tables.

Usage:
    python scripts/reproduce_tables.py                               # continuous, all cells
    python scripts/reproduce_tables.py --treatment-kind dichotomous  # normal confounders
    python scripts/reproduce_tables.py --treatment-kind dichotomous --copula student_t --margin logistic
    python scripts/reproduce_tables.py --reps 1000 --scenarios s1 --sizes 300
"""

import argparse
import logging
import sys
from pathlib import Path

ROOT = Path(__file__).parent.parent
sys.path.insert(0, str(ROOT))

from limlsel.copula_cache import CopulaCache  # noqa: E402
from limlsel.effects import study_truth  # noqa: E402
from limlsel.errors import LimlselError  # noqa: E402
from limlsel.mcharness import render_markdown, run_study, write_study  # noqa: E402
from limlsel.storage import load_study_config  # noqa: E402

SCENARIOS = ["s1", "s2", "s3", "s4"]
SIZES = [100, 300]


def run_cell(args, scenario: str, n: int, cache: CopulaCache) -> str:
    """Run one scenario x n study and return its markdown block."""
    out_dir = args.out / f"{args.treatment_kind}_{args.copula}_{scenario}_n{n}"
    config = load_study_config(
        args.config,
        {
            "scenario": scenario,
            "treatment_kind": args.treatment_kind,
            "copula": args.copula,
            "margin": args.margin,
            "n": n,
            "seed": args.seed,
            "reps": args.reps,
            "parallelism": args.parallelism,
            "output_dir": str(out_dir),
        },
    )
    records, summary = run_study(
        config.scenario,
        config.methods,
        config.reps,
        config.criteria,
        config.parallelism,
        config.xi_mode,
        config.opts,
        cache=cache,
    )
    truth = study_truth(config.scenario)
    write_study(out_dir, config.to_dict(), records, truth, config.scenario.treatment_kind)
    print(f"Finished {scenario} n={n} -> {out_dir}")
    return render_markdown(summary.rows, f"{scenario}, n={n}", summary.truth)


def main():
    parser = argparse.ArgumentParser(description="Reproduce the simulation tables")
    parser.add_argument("--config", type=Path, help="base JSON study configuration")
    parser.add_argument("--treatment-kind", default="continuous", choices=["continuous", "dichotomous"])
    parser.add_argument("--copula", default="gaussian", choices=["gaussian", "student_t", "clayton"])
    parser.add_argument("--margin", default=None, choices=["normal", "logistic"])
    parser.add_argument("--scenarios", nargs="+", default=SCENARIOS)
    parser.add_argument("--sizes", nargs="+", type=int, default=SIZES)
    parser.add_argument("--reps", type=int, default=200)
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--parallelism", type=int, default=None)
    parser.add_argument("--out", type=Path, default=ROOT / "results")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args()

    if args.margin is None:
        args.margin = "normal" if args.copula == "gaussian" else "logistic"
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    cache = CopulaCache()
    blocks = []
    try:
        for scenario in args.scenarios:
            for n in args.sizes:
                blocks.append(run_cell(args, scenario, n, cache))
    except LimlselError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code

    report = args.out / f"tables_{args.treatment_kind}_{args.copula}.md"
    report.parent.mkdir(parents=True, exist_ok=True)
    report.write_text("\n".join(blocks), encoding="utf-8")
    print(f"Wrote {report}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
