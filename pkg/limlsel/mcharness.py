"""
Monte Carlo harness.

Runs replicated studies of one scenario over the estimation methods and
aggregates descriptive statistics and model-selection rates per method.
"""

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .dgp import ScenarioConfig, generate, resolve_copula
from .effects import plug_in_effect, study_truth
from .errors import LimlselError
from .estimators import fit_2sls, fit_2sri, fit_liml
from .models import (
    RECORD_FIELDS,
    SUMMARY_FIELDS,
    Classification,
    Criterion,
    FitResult,
    MethodSummary,
    OptimizerOptions,
    ReplicationRecord,
    StudySummary,
    XiMode,
)
from .modelspace import W_TERM, CandidateCatalog, Dataset, TreatmentKind, catalogs_for
from .selection import classify, fit_candidate_pairs, select_2sri, select_from_fits
from .statlib import CopulaSpec, RngStream
from .storage import write_json_file

logger = logging.getLogger(__name__)

METHOD_LABELS = {
    "2sls": "2SLS",
    "2sri": "2SRI",
    "liml_laic": "LIMLE: LAIC",
    "liml_lbic": "LIMLE: LBIC",
    "2sri_full": "2SRI: Full model",
    "liml_full": "LIMLE: Full model",
}

ESTIMANDS = {
    TreatmentKind.CONTINUOUS: "w_coefficient",
    TreatmentKind.DICHOTOMOUS: "ate",
}


def _method_rank(method: str) -> int:
    order = list(METHOD_LABELS)
    return order.index(method) if method in order else len(order)


@dataclass
class ReplicationTask:
    """Everything one worker needs to run one replication."""

    scenario: ScenarioConfig
    copula: CopulaSpec
    rep: int
    methods: list[str]
    criteria: list[Criterion] = field(default_factory=lambda: [Criterion.LAIC, Criterion.LBIC])
    xi_mode: XiMode = XiMode.ESTIMATED
    opts: OptimizerOptions = field(default_factory=OptimizerOptions)


def _estimates(fit: FitResult, data: Dataset) -> tuple[float, Optional[float], Optional[float]]:
    """(estimate, p_y1, ate) for one fit."""
    if data.treatment_kind is TreatmentKind.CONTINUOUS:
        return fit.coefficient(W_TERM), None, None
    effect = plug_in_effect(fit, data)
    return effect.ate, effect.p_y1, effect.ate


def _record(
    rep: int,
    method: str,
    fit: FitResult,
    data: Dataset,
    classification: Optional[Classification],
    stage1_true: Optional[bool] = None,
) -> ReplicationRecord:
    estimate, p_y1, ate = _estimates(fit, data)
    return ReplicationRecord(
        rep=rep,
        method=method,
        chosen_t=fit.formula_pair[0],
        chosen_o=fit.formula_pair[1],
        converged=fit.converged,
        estimate=estimate,
        p_y1=p_y1,
        ate=ate,
        classification=classification,
        stage1_true=stage1_true,
    )


def _failed(rep: int, method: str, kind: TreatmentKind, exc: Exception) -> ReplicationRecord:
    logger.warning("Replication %d, %s failed: %s", rep, method, exc)
    dichotomous = kind is TreatmentKind.DICHOTOMOUS
    return ReplicationRecord(
        rep=rep,
        method=method,
        chosen_t="",
        chosen_o="",
        converged=False,
        estimate=math.nan,
        p_y1=math.nan if dichotomous else None,
        ate=math.nan if dichotomous else None,
    )


def _run_method(
    method: str,
    task: ReplicationTask,
    data: Dataset,
    cat_t: CandidateCatalog,
    cat_o: CandidateCatalog,
) -> list[ReplicationRecord]:
    rep = task.rep
    if method == "2sls":
        fit = fit_2sls(data, cat_t.true_formula, cat_o.true_formula)
        return [_record(rep, method, fit, data, None)]
    if method == "2sri":
        result = select_2sri(data, cat_t, cat_o)
        return [_record(rep, method, result.fit, data, result.classification, result.stage1_true)]
    if method == "2sri_full":
        fit = fit_2sri(data, cat_t.full, cat_o.full)
        return [_record(rep, method, fit, data, classify(fit.formula_pair, cat_t, cat_o))]
    if method == "liml_full":
        fit = fit_liml(data, cat_t.full, cat_o.full, task.xi_mode, task.opts)
        return [_record(rep, method, fit, data, classify(fit.formula_pair, cat_t, cat_o))]
    if method == "liml":
        fits = fit_candidate_pairs(data, cat_t, cat_o, task.xi_mode, task.opts)
        records = []
        for kind in task.criteria:
            method_id = f"liml_{kind.value}"
            try:
                result = select_from_fits(fits, cat_t, cat_o, kind, data.n)
                records.append(_record(rep, method_id, result.fit, data, result.classification))
            except LimlselError as exc:
                records.append(_failed(rep, method_id, data.treatment_kind, exc))
        return records
    raise ValueError(f"unknown method: {method}")


def run_replication(task: ReplicationTask) -> list[ReplicationRecord]:
    """Draw replication `task.rep` and run every method on the same dataset."""
    data = generate(task.scenario, RngStream(task.scenario.seed, task.rep), task.copula)
    cat_t, cat_o = catalogs_for(task.scenario.treatment_kind)
    records = []
    for method in task.methods:
        try:
            records.extend(_run_method(method, task, data, cat_t, cat_o))
        except LimlselError as exc:
            if method == "liml":
                records.extend(
                    _failed(task.rep, f"liml_{k.value}", data.treatment_kind, exc) for k in task.criteria
                )
            else:
                records.append(_failed(task.rep, method, data.treatment_kind, exc))
    return records


def run_study(
    scenario: ScenarioConfig,
    methods: Sequence[str],
    reps: int,
    criteria: Sequence[Union[Criterion, str]] = (Criterion.LAIC, Criterion.LBIC),
    parallelism: int = 1,
    xi_mode: Union[XiMode, str] = XiMode.ESTIMATED,
    opts: Optional[OptimizerOptions] = None,
    copula: Optional[CopulaSpec] = None,
    cache=None,
) -> tuple[list[ReplicationRecord], StudySummary]:
    """
    Run replications 1..reps and summarize them.

    Replication r draws from RngStream(scenario.seed, r), so the records do
    not depend on `parallelism`. Failures inside a replication become
    nonconverged records.

    Returns:
        (records ordered by rep, summary of the primary estimate)
    """
    if reps < 1:
        raise ValueError(f"reps must be >= 1, got {reps}")
    copula = copula or resolve_copula(scenario, cache)
    tasks = [
        ReplicationTask(
            scenario,
            copula,
            rep,
            list(methods),
            [Criterion(c) for c in criteria],
            XiMode(xi_mode),
            opts or OptimizerOptions(),
        )
        for rep in range(1, reps + 1)
    ]
    logger.info(
        "Study %s/%s n=%d: %d replications, parallelism %d",
        scenario.scenario_id.value,
        scenario.treatment_kind.value,
        scenario.n,
        reps,
        parallelism,
    )

    step = max(1, reps // 10)
    records: list[ReplicationRecord] = []
    if parallelism > 1 and reps > 1:
        with ProcessPoolExecutor(max_workers=min(parallelism, reps)) as pool:
            batches = pool.map(run_replication, tasks)
            for done, batch in enumerate(batches, start=1):
                records.extend(batch)
                if done % step == 0:
                    logger.info("Replication %d/%d", done, reps)
    else:
        for done, task in enumerate(tasks, start=1):
            records.extend(run_replication(task))
            if done % step == 0:
                logger.info("Replication %d/%d", done, reps)

    records.sort(key=lambda r: (r.rep, _method_rank(r.method)))
    truth = study_truth(scenario)
    summary = summarize(records, truth["estimate"], estimand=ESTIMANDS[scenario.treatment_kind])
    return records, summary


# === Summaries ===


def _value(record: ReplicationRecord, field_name: str) -> float:
    value = getattr(record, field_name)
    return math.nan if value is None else float(value)


def _pct(count: int, total: int) -> float:
    return 100.0 * count / total if total else math.nan


def _summarize_method(
    method: str, rows: list[ReplicationRecord], truth: float, field_name: str
) -> MethodSummary:
    values = np.array([_value(r, field_name) for r in rows], dtype=float)
    finite = values[~np.isnan(values)]
    nonconv = sum(1 for r in rows if not r.converged)
    total = len(rows)

    if finite.size:
        mean = float(np.mean(finite))
        sd = float(np.std(finite, ddof=1)) if finite.size > 1 else 0.0
        stats = dict(
            mean=mean,
            sd=sd,
            median=float(np.median(finite)),
            min=float(np.min(finite)),
            max=float(np.max(finite)),
            bias=mean - truth,
            rmse=float(np.sqrt(np.mean((finite - truth) ** 2))),
        )
    else:
        stats = dict.fromkeys(["mean", "sd", "median", "min", "max", "bias", "rmse"], math.nan)
    summary = MethodSummary(method=method, nonconv=nonconv, **stats)

    classified = [r.classification for r in rows if r.classification is not None]
    if classified:
        summary.true_n = sum(1 for c in classified if c is Classification.TRUE_MODEL)
        summary.true_pct = _pct(summary.true_n, total)
        summary.incl_n = sum(1 for c in classified if c.includes_true)
        summary.incl_pct = _pct(summary.incl_n, total)
    stage1 = [r.stage1_true for r in rows if r.stage1_true is not None]
    if stage1:
        # sequential search: both-true is the stage-2 including-true count
        summary.both_n = summary.incl_n
        summary.both_pct = summary.incl_pct
        summary.stage1_true_n = sum(1 for s in stage1 if s)
        summary.stage1_true_pct = _pct(summary.stage1_true_n, total)
    return summary


def summarize(
    records: Sequence[ReplicationRecord],
    truth: float,
    field_name: str = "estimate",
    converged_only: bool = False,
    estimand: str = "estimate",
) -> StudySummary:
    """
    Per-method statistics of `field_name` against `truth`.

    Headline statistics use every record with a finite value, converged or
    not; `converged_only` restricts to converged records. Percentages are
    relative to the number of records of the method in the block.
    """
    if not records:
        raise ValueError("no records to summarize")
    methods = sorted({r.method for r in records}, key=lambda m: (_method_rank(m), m))
    summary = StudySummary(truth=truth, estimand=estimand)
    for method in methods:
        rows = [r for r in records if r.method == method]
        if converged_only:
            rows = [r for r in rows if r.converged]
            if not rows:
                continue
        summary.rows.append(_summarize_method(method, rows, truth, field_name))
    return summary


# === Files ===


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_float(text: str) -> Optional[float]:
    return float(text) if text != "" else None


def _parse_int(text: str) -> Optional[int]:
    return int(text) if text != "" else None


def _parse_bool(text: str) -> Optional[bool]:
    if text == "":
        return None
    return text.lower() in ("true", "1")


def write_records_csv(records: Sequence[ReplicationRecord], path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=RECORD_FIELDS, lineterminator="\n")
        writer.writeheader()
        for record in records:
            writer.writerow({k: _cell(v) for k, v in record.to_dict().items()})


def read_records_csv(path: Union[str, Path]) -> list[ReplicationRecord]:
    records = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        for row in csv.DictReader(f):
            records.append(
                ReplicationRecord(
                    rep=int(row["rep"]),
                    method=row["method"],
                    chosen_t=row["chosen_t"],
                    chosen_o=row["chosen_o"],
                    converged=bool(_parse_bool(row["converged"])),
                    estimate=_parse_float(row["estimate"]) if row["estimate"] else math.nan,
                    p_y1=_parse_float(row["p_y1"]),
                    ate=_parse_float(row["ate"]),
                    classification=Classification(row["classification"]) if row["classification"] else None,
                    stage1_true=_parse_bool(row.get("stage1_true", "")),
                )
            )
    return records


def write_summary_csv(summary: StudySummary, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in summary.rows:
            writer.writerow({k: _cell(v) for k, v in row.to_dict().items()})


def read_summary_csv(path: Union[str, Path]) -> list[MethodSummary]:
    rows = []
    int_fields = {"true_n", "incl_n", "both_n", "stage1_true_n"}
    with open(path, "r", encoding="utf-8", newline="") as f:
        for row in csv.DictReader(f):
            values = {"method": row["method"], "nonconv": int(row["nonconv"])}
            for name in SUMMARY_FIELDS:
                if name in values:
                    continue
                text = row.get(name, "")
                values[name] = _parse_int(text) if name in int_fields else _parse_float(text)
            for name in ("mean", "sd", "median", "min", "max", "bias", "rmse"):
                if values[name] is None:
                    values[name] = math.nan
            rows.append(MethodSummary(**values))
    return rows


def write_study(
    out_dir: Union[str, Path],
    config: dict,
    records: Sequence[ReplicationRecord],
    truth: dict[str, float],
    kind: TreatmentKind,
) -> list[Path]:
    """
    Write records, summaries and study.json into `out_dir`.

    Returns:
        Paths written, in order.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    estimand = ESTIMANDS[kind]
    written = [out_dir / "records.csv"]
    write_records_csv(records, written[0])

    blocks = [("summary", "estimate", estimand)]
    if kind is TreatmentKind.DICHOTOMOUS:
        blocks.append(("summary_p_y1", "p_y1", "p_y1"))
    for stem, field_name, name in blocks:
        for suffix, converged_only in (("", False), ("_converged", True)):
            path = out_dir / f"{stem}{suffix}.csv"
            write_summary_csv(
                summarize(records, truth[field_name], field_name, converged_only, name), path
            )
            written.append(path)

    study_json = out_dir / "study.json"
    write_json_file(study_json, {"config": config, "truth": truth, "estimand": estimand})
    written.append(study_json)
    logger.info("Wrote %d files to %s", len(written), out_dir)
    return written


# === Markdown ===


def _num(value: Optional[float], digits: int = 3) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "NA"
    if abs(value) >= 1e4:
        return ">>10000" if value > 0 else "<<-10000"
    return f"{value:.{digits}f}"


def _count(n: Optional[int], pct: Optional[float]) -> str:
    if n is None:
        return "-"
    return f"{n} ({pct:.1f})"


MARKDOWN_COLUMNS = [
    "Method",
    "Mean (SD)",
    "Median (Range)",
    "Bias",
    "RMSE",
    "True model n (%)",
    "Including true model n (%)",
    "Both true model n (%)",
    "Nonconverged",
]


def render_markdown(
    rows: Sequence[MethodSummary], title: Optional[str] = None, truth: Optional[float] = None
) -> str:
    """Summary rows as a markdown table in the layout of the published tables."""
    lines = []
    if title:
        lines += [f"### {title}", ""]
    if truth is not None:
        lines += [f"Truth: {_num(truth)}", ""]
    lines.append("| " + " | ".join(MARKDOWN_COLUMNS) + " |")
    lines.append("|" + "|".join(["---"] * len(MARKDOWN_COLUMNS)) + "|")
    for row in rows:
        cells = [
            METHOD_LABELS.get(row.method, row.method),
            f"{_num(row.mean)} ({_num(row.sd)})",
            f"{_num(row.median)} ({_num(row.min, 2)}, {_num(row.max, 2)})",
            _num(row.bias),
            _num(row.rmse),
            _count(row.true_n, row.true_pct),
            _count(row.incl_n, row.incl_pct),
            _count(row.both_n, row.both_pct),
            str(row.nonconv),
        ]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
