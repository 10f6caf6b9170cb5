"""
Data models for limlsel.

Plain result containers shared by the estimators, the selection search and
the Monte Carlo harness.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .modelspace import ModelFormula
from .statlib import Correlation


class XiMode(Enum):
    """Whether the nuisance pair (sigma_v, rho) is estimated or held fixed."""

    FIXED = "fixed"
    ESTIMATED = "estimated"


class FitMethod(Enum):
    LIML = "liml"
    TWO_SRI = "two_sri"
    TWO_SLS = "two_sls"


class Criterion(Enum):
    """Information criterion used to rank candidate fits."""

    LAIC = "laic"
    LBIC = "lbic"
    AIC = "aic"


class Classification(Enum):
    """How a selected model pair relates to the true pair."""

    TRUE_MODEL = "true_model"
    INCLUDING_TRUE = "including_true"
    MISSPECIFIED = "misspecified"

    @property
    def includes_true(self) -> bool:
        return self is not Classification.MISSPECIFIED


@dataclass(frozen=True)
class Xi:
    """
    Nuisance parameters of the latent error pair.

    sigma_v is None for a dichotomous treatment (identified to 1).
    """

    rho: Correlation
    sigma_v: Optional[float] = 1.0

    def __post_init__(self):
        if self.sigma_v is not None and not (math.isfinite(self.sigma_v) and self.sigma_v > 0):
            raise ValueError(f"sigma_v must be > 0, got {self.sigma_v}")

    def to_dict(self) -> dict:
        return {"rho": float(self.rho), "sigma_v": self.sigma_v}


@dataclass
class Theta:
    """Coefficients of both models in formula order plus the nuisance pair."""

    alpha: np.ndarray
    beta: np.ndarray
    xi: Optional[Xi] = None
    xi_mode: XiMode = XiMode.ESTIMATED

    def to_dict(self) -> dict:
        return {
            "alpha": [float(a) for a in self.alpha],
            "beta": [float(b) for b in self.beta],
            "xi": self.xi.to_dict() if self.xi else None,
            "xi_mode": self.xi_mode.value,
        }


@dataclass(frozen=True)
class OptimizerOptions:
    """Quasi-Newton settings for the likelihood fits."""

    gtol: float = 1e-6  # max-norm of the loglik gradient
    rel_tol: float = 1e-10
    max_iter: int = 500
    fd_step: float = 1e-6
    hess_step: float = 1e-4
    newton_steps: int = 8


@dataclass
class FitResult:
    """Outcome of fitting one (treatment, outcome) formula pair."""

    theta: Theta
    loglik: Optional[float]
    converged: bool
    n_params: int
    iterations: int
    formulas: tuple[ModelFormula, ModelFormula]
    method: FitMethod
    message: str = ""
    # two-stage residual inclusion only
    resid_coef: Optional[float] = None
    residuals: Optional[np.ndarray] = None
    stage1_loglik: Optional[float] = None
    stage1_n_params: Optional[int] = None

    @property
    def formula_pair(self) -> tuple[str, str]:
        return (self.formulas[0].label, self.formulas[1].label)

    def coefficient(self, term) -> float:
        """Outcome-model coefficient of `term`."""
        return float(self.theta.beta[self.formulas[1].index_of(term)])

    def to_dict(self) -> dict:
        return {
            "method": self.method.value,
            "formula_pair": list(self.formula_pair),
            "loglik": self.loglik,
            "converged": self.converged,
            "n_params": self.n_params,
            "iterations": self.iterations,
            "theta": self.theta.to_dict(),
            "resid_coef": self.resid_coef,
            "stage1_loglik": self.stage1_loglik,
            "stage1_n_params": self.stage1_n_params,
            "message": self.message,
        }


@dataclass(frozen=True)
class CriterionValue:
    criterion: Criterion
    value: float
    n_params: int
    n_obs: int


@dataclass
class CandidateScore:
    """One row of a selection table."""

    labels: tuple[str, str]
    loglik: Optional[float]
    value: Optional[float]
    n_params: int
    converged: bool

    def to_dict(self) -> dict:
        return {
            "treatment": self.labels[0],
            "outcome": self.labels[1],
            "loglik": self.loglik,
            "value": self.value,
            "n_params": self.n_params,
            "converged": self.converged,
        }


@dataclass
class SelectionResult:
    """Chosen pair, the full candidate table and its classification."""

    chosen: tuple[str, str]
    table: list[CandidateScore]
    classification: Classification
    method: FitMethod
    criterion: Criterion
    fit: FitResult
    excluded: int = 0
    # sequential search only: first-stage table and whether it hit the truth
    stage1_table: list[CandidateScore] = field(default_factory=list)
    stage1_true: Optional[bool] = None

    def to_dict(self) -> dict:
        return {
            "method": self.method.value,
            "criterion": self.criterion.value,
            "chosen": list(self.chosen),
            "classification": self.classification.value,
            "excluded": self.excluded,
            "table": [row.to_dict() for row in self.table],
            "stage1_table": [row.to_dict() for row in self.stage1_table],
            "stage1_true": self.stage1_true,
            "fit": self.fit.to_dict(),
        }


@dataclass(frozen=True)
class EffectEstimate:
    """Mean outcome probabilities under w=1 and w=0."""

    p_y1: float
    p_y0: float

    @property
    def ate(self) -> float:
        return self.p_y1 - self.p_y0

    def to_dict(self) -> dict:
        return {"p_y1": self.p_y1, "p_y0": self.p_y0, "ate": self.ate}


RECORD_FIELDS = [
    "rep",
    "method",
    "chosen_t",
    "chosen_o",
    "converged",
    "estimate",
    "p_y1",
    "ate",
    "classification",
    "stage1_true",
]


@dataclass
class ReplicationRecord:
    """One method's result on one replication."""

    rep: int
    method: str
    chosen_t: str
    chosen_o: str
    converged: bool
    estimate: float
    p_y1: Optional[float] = None
    ate: Optional[float] = None
    classification: Optional[Classification] = None
    stage1_true: Optional[bool] = None

    def to_dict(self) -> dict:
        return {
            "rep": self.rep,
            "method": self.method,
            "chosen_t": self.chosen_t,
            "chosen_o": self.chosen_o,
            "converged": self.converged,
            "estimate": self.estimate,
            "p_y1": self.p_y1,
            "ate": self.ate,
            "classification": self.classification.value if self.classification else None,
            "stage1_true": self.stage1_true,
        }


SUMMARY_FIELDS = [
    "method",
    "mean",
    "sd",
    "median",
    "min",
    "max",
    "bias",
    "rmse",
    "true_n",
    "true_pct",
    "incl_n",
    "incl_pct",
    "both_n",
    "both_pct",
    "nonconv",
    "stage1_true_n",
    "stage1_true_pct",
]


@dataclass
class MethodSummary:
    """Descriptive statistics and selection counts for one method."""

    method: str
    mean: float
    sd: float
    median: float
    min: float
    max: float
    bias: float
    rmse: float
    nonconv: int
    true_n: Optional[int] = None
    true_pct: Optional[float] = None
    incl_n: Optional[int] = None
    incl_pct: Optional[float] = None
    both_n: Optional[int] = None
    both_pct: Optional[float] = None
    stage1_true_n: Optional[int] = None
    stage1_true_pct: Optional[float] = None

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in SUMMARY_FIELDS}


@dataclass
class StudySummary:
    """Per-method rows against one truth value."""

    truth: float
    estimand: str
    rows: list[MethodSummary] = field(default_factory=list)

    def row(self, method: str) -> MethodSummary:
        for row in self.rows:
            if row.method == method:
                return row
        raise KeyError(method)

    def to_dict(self) -> dict:
        return {
            "truth": self.truth,
            "estimand": self.estimand,
            "rows": [row.to_dict() for row in self.rows],
        }
