"""
Model selection.

LAIC/LBIC over every (treatment, outcome) candidate pair for LIML, and the
sequential AIC search used with two-stage residual inclusion.
"""

import logging
import math
from typing import Optional, Sequence, Union

from .errors import LimlselError, SelectionError
from .estimators import first_stage, fit_liml, second_stage, two_sri_result
from .models import (
    CandidateScore,
    Classification,
    Criterion,
    CriterionValue,
    FitMethod,
    FitResult,
    OptimizerOptions,
    SelectionResult,
    Xi,
    XiMode,
)
from .modelspace import CandidateCatalog, Dataset, nests

logger = logging.getLogger(__name__)


def criterion(fit: FitResult, kind: Union[Criterion, str], n_obs: int) -> CriterionValue:
    """
    Information criterion of a fit.

    laic/aic: -2 loglik + 2 k.  lbic: -2 loglik + k ln(n_obs).
    """
    kind = Criterion(kind)
    if fit.loglik is None or not math.isfinite(fit.loglik):
        raise ValueError(f"fit {fit.formula_pair} has no finite log-likelihood")
    return CriterionValue(kind, _penalized(fit.loglik, fit.n_params, kind, n_obs), fit.n_params, n_obs)


def _penalized(loglik: float, n_params: int, kind: Criterion, n_obs: int) -> float:
    if kind is Criterion.LBIC:
        return -2.0 * loglik + n_params * math.log(n_obs)
    return -2.0 * loglik + 2.0 * n_params


def choose(scores: Sequence[CandidateScore]) -> CandidateScore:
    """
    Minimizer over converged rows.

    Ties go to fewer parameters, then to label order.

    Raises:
        SelectionError: no row converged.
    """
    usable = [s for s in scores if s.converged and s.value is not None]
    if not usable:
        raise SelectionError("no candidate fit converged")
    return min(usable, key=lambda s: (s.value, s.n_params, s.labels))


def classify(
    labels: tuple[str, str], cat_t: CandidateCatalog, cat_o: CandidateCatalog
) -> Classification:
    """Compare a chosen label pair with the catalogs' true models."""
    chosen_t, chosen_o = cat_t.get(labels[0]), cat_o.get(labels[1])
    if (chosen_t.label, chosen_o.label) == (cat_t.true_label, cat_o.true_label):
        return Classification.TRUE_MODEL
    if nests(chosen_t, cat_t.true_formula) and nests(chosen_o, cat_o.true_formula):
        return Classification.INCLUDING_TRUE
    return Classification.MISSPECIFIED


def fit_candidate_pairs(
    data: Dataset,
    cat_t: CandidateCatalog,
    cat_o: CandidateCatalog,
    xi_mode: Union[XiMode, str] = XiMode.ESTIMATED,
    opts: Optional[OptimizerOptions] = None,
    xi: Optional[Xi] = None,
) -> list[FitResult]:
    """LIML fits for every (treatment, outcome) pair, treatment-major order."""
    fits = []
    for f_t in cat_t.candidates:
        for f_o in cat_o.candidates:
            fits.append(fit_liml(data, f_t, f_o, xi_mode, opts, xi))
    return fits


def select_from_fits(
    fits: Sequence[FitResult],
    cat_t: CandidateCatalog,
    cat_o: CandidateCatalog,
    kind: Union[Criterion, str],
    n_obs: int,
) -> SelectionResult:
    """Rank precomputed LIML fits by one criterion."""
    kind = Criterion(kind)
    table = []
    for fit in fits:
        value = None
        if fit.loglik is not None and math.isfinite(fit.loglik):
            value = criterion(fit, kind, n_obs).value
        table.append(CandidateScore(fit.formula_pair, fit.loglik, value, fit.n_params, fit.converged))

    best = choose(table)
    excluded = sum(1 for row in table if not row.converged)
    if excluded:
        logger.debug("%d of %d candidate pairs excluded as nonconverged", excluded, len(table))
    chosen_fit = next(f for f in fits if f.formula_pair == best.labels)
    return SelectionResult(
        chosen=best.labels,
        table=table,
        classification=classify(best.labels, cat_t, cat_o),
        method=FitMethod.LIML,
        criterion=kind,
        fit=chosen_fit,
        excluded=excluded,
    )


def select_liml(
    data: Dataset,
    cat_t: CandidateCatalog,
    cat_o: CandidateCatalog,
    kind: Union[Criterion, str] = Criterion.LBIC,
    xi_mode: Union[XiMode, str] = XiMode.ESTIMATED,
    opts: Optional[OptimizerOptions] = None,
    xi: Optional[Xi] = None,
) -> SelectionResult:
    """
    Joint LIML model selection.

    Fits every candidate pair and returns the one minimizing the criterion
    among converged fits.

    Raises:
        SelectionError: every fit failed to converge.
    """
    fits = fit_candidate_pairs(data, cat_t, cat_o, xi_mode, opts, xi)
    return select_from_fits(fits, cat_t, cat_o, kind, data.n)


def select_2sri(data: Dataset, cat_t: CandidateCatalog, cat_o: CandidateCatalog) -> SelectionResult:
    """
    Sequential AIC selection for two-stage residual inclusion.

    Stage 1 picks the treatment model by its own AIC; stage 2 picks the
    outcome model given the stage-1 residuals, counting the residual
    coefficient as a parameter.
    """
    first_fits = {}
    stage1_table = []
    for f_t in cat_t.candidates:
        labels = (f_t.label, "")
        try:
            first = first_stage(data, f_t)
        except LimlselError as exc:
            logger.debug("2SRI first stage %s failed: %s", f_t.label, exc)
            stage1_table.append(CandidateScore(labels, None, None, f_t.n_terms, False))
            continue
        first_fits[f_t.label] = first
        value = _penalized(first.loglik, first.n_params, Criterion.AIC, data.n)
        stage1_table.append(CandidateScore(labels, first.loglik, value, first.n_params, first.converged))
    stage1_best = choose(stage1_table)
    f_t = cat_t.get(stage1_best.labels[0])
    first = first_fits[f_t.label]

    seconds = {}
    table = []
    for f_o in cat_o.candidates:
        labels = (f_t.label, f_o.label)
        try:
            second = second_stage(data, f_o, first.residuals)
        except LimlselError as exc:
            logger.debug("2SRI second stage %s failed: %s", f_o.label, exc)
            table.append(CandidateScore(labels, None, None, f_o.n_terms + 1, False))
            continue
        seconds[f_o.label] = second
        value = _penalized(second.loglik, second.n_params, Criterion.AIC, data.n)
        table.append(CandidateScore(labels, second.loglik, value, second.n_params, second.converged))
    best = choose(table)
    f_o = cat_o.get(best.labels[1])

    return SelectionResult(
        chosen=best.labels,
        table=table,
        classification=classify(best.labels, cat_t, cat_o),
        method=FitMethod.TWO_SRI,
        criterion=Criterion.AIC,
        fit=two_sri_result(first, seconds[f_o.label], f_t, f_o),
        excluded=sum(1 for row in table + stage1_table if not row.converged),
        stage1_table=stage1_table,
        stage1_true=f_t.label == cat_t.true_label,
    )
