"""
Likelihoods and estimators.

LIML for the Rivers-Vuong model (continuous treatment, probit outcome) and
for the bivariate probit model (binary treatment), plus the two-stage least
squares and two-stage residual inclusion baselines.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy import linalg, optimize, special
from statsmodels.discrete.discrete_model import Probit
from statsmodels.tools.sm_exceptions import PerfectSeparationError

from .errors import DegenerateError, LimlselError, RankDeficiencyError
from .models import FitMethod, FitResult, OptimizerOptions, Theta, Xi, XiMode
from .modelspace import Dataset, ModelFormula, Side, TreatmentKind, Var, design_matrix, nests
from .statlib import Correlation, bvn_cdf

logger = logging.getLogger(__name__)

LOGLIK_FLOOR = -1e15
PROB_FLOOR = 1e-300
_LOG_PROB_FLOOR = math.log(PROB_FLOOR)
_RHO_BOUND = 1.0 - 1e-12


def _floor_nonfinite(value: float) -> float:
    if not math.isfinite(value):
        return LOGLIK_FLOOR
    return max(value, LOGLIK_FLOOR)


def _check_pair(data: Dataset, f_t: ModelFormula, f_o: ModelFormula, kind: TreatmentKind):
    if data.treatment_kind is not kind:
        raise ValueError(f"expected a {kind.value} treatment, got {data.treatment_kind.value}")
    if f_t.side is not Side.TREATMENT or f_o.side is not Side.OUTCOME:
        raise ValueError(
            f"formula sides must be (treatment, outcome), got ({f_t.side.value}, {f_o.side.value})"
        )


# === Log-likelihood cores ===


def _rivers_vuong_terms(alpha, beta, sigma_v, rho, X_t, X_o, y, w) -> np.ndarray:
    with np.errstate(all="ignore"):
        v = w - X_t @ alpha
        index = (X_o @ beta + rho * v) / math.sqrt(1.0 - rho * rho)
        log_p1 = np.maximum(special.log_ndtr(index), _LOG_PROB_FLOOR)
        log_p0 = np.maximum(special.log_ndtr(-index), _LOG_PROB_FLOOR)
        return (
            y * log_p1
            + (1.0 - y) * log_p0
            - v * v / (2.0 * sigma_v * sigma_v)
            - 0.5 * math.log(2.0 * math.pi * sigma_v * sigma_v)
        )


def _rivers_vuong_core(alpha, beta, sigma_v, rho, X_t, X_o, y, w) -> float:
    terms = _rivers_vuong_terms(alpha, beta, sigma_v, rho, X_t, X_o, y, w)
    return _floor_nonfinite(float(np.sum(terms)))


def _observed_cells(alpha, beta, rho, X_t, X_o, y, w) -> np.ndarray:
    """P(Y=y_i, W=w_i) per observation, outcome index taken at the observed w."""
    with np.errstate(all="ignore"):
        sign_w = 2.0 * w - 1.0
        sign_y = 2.0 * y - 1.0
        h = sign_w * (X_t @ alpha)
        k = sign_y * (X_o @ beta)
    same = sign_w * sign_y > 0
    probs = np.empty(y.shape[0])
    if same.any():
        probs[same] = bvn_cdf(h[same], k[same], rho)
    if (~same).any():
        probs[~same] = bvn_cdf(h[~same], k[~same], -rho)
    return probs


def _dichotomous_terms(alpha, beta, rho, X_t, X_o, y, w) -> np.ndarray:
    probs = _observed_cells(alpha, beta, rho, X_t, X_o, y, w)
    with np.errstate(all="ignore"):
        return np.log(np.maximum(probs, PROB_FLOOR))


def _dichotomous_core(alpha, beta, rho, X_t, X_o, y, w) -> float:
    return _floor_nonfinite(float(np.sum(_dichotomous_terms(alpha, beta, rho, X_t, X_o, y, w))))


def loglik_rivers_vuong(
    theta: Theta, data: Dataset, f_t: ModelFormula, f_o: ModelFormula
) -> float:
    """
    Joint log-likelihood of (y, w) for a continuous treatment.

    The outcome probability conditions on the first-stage error,
    U | v ~ N(rho * v, 1 - rho^2). Non-finite values map to -1e15.
    """
    _check_pair(data, f_t, f_o, TreatmentKind.CONTINUOUS)
    if theta.xi is None or theta.xi.sigma_v is None:
        raise ValueError("continuous likelihood needs sigma_v and rho")
    return _rivers_vuong_core(
        np.asarray(theta.alpha, dtype=float),
        np.asarray(theta.beta, dtype=float),
        float(theta.xi.sigma_v),
        float(theta.xi.rho),
        design_matrix(f_t, data),
        design_matrix(f_o, data),
        data.y,
        data.w,
    )


def loglik_dichotomous(
    theta: Theta, data: Dataset, f_t: ModelFormula, f_o: ModelFormula
) -> float:
    """
    Four-cell bivariate probit log-likelihood for a binary treatment.

    Each cell probability is floored at 1e-300 before the log.
    """
    _check_pair(data, f_t, f_o, TreatmentKind.DICHOTOMOUS)
    if theta.xi is None:
        raise ValueError("dichotomous likelihood needs rho")
    return _dichotomous_core(
        np.asarray(theta.alpha, dtype=float),
        np.asarray(theta.beta, dtype=float),
        float(theta.xi.rho),
        design_matrix(f_t, data),
        design_matrix(f_o, data),
        data.y,
        data.w,
    )


def cell_probabilities(
    theta: Theta, data: Dataset, f_t: ModelFormula, f_o: ModelFormula
) -> np.ndarray:
    """
    n x 4 matrix of P(Y=y, W=w) for (y, w) = (0,0), (0,1), (1,0), (1,1).

    The outcome index is evaluated at each cell's own w, so rows sum to 1.
    """
    if theta.xi is None:
        raise ValueError("cell probabilities need rho")
    rho = float(theta.xi.rho)
    phi1 = design_matrix(f_t, data) @ theta.alpha
    cells = []
    for y_val in (0.0, 1.0):
        for w_val in (0.0, 1.0):
            phi2 = design_matrix(f_o, data, {Var.W: w_val}) @ theta.beta
            sign_w = 2.0 * w_val - 1.0
            sign_y = 2.0 * y_val - 1.0
            cells.append(bvn_cdf(sign_w * phi1, sign_y * phi2, sign_w * sign_y * rho))
    return np.column_stack(cells)


# === LIML ===


@dataclass
class _Likelihood:
    """Precomputed design matrices for one formula pair, evaluated on packed vectors."""

    kind: TreatmentKind
    y: np.ndarray
    w: np.ndarray
    X_t: np.ndarray
    X_o: np.ndarray
    xi_mode: XiMode
    fixed: Xi

    @classmethod
    def build(cls, data, f_t, f_o, xi_mode, xi) -> "_Likelihood":
        _check_pair(data, f_t, f_o, data.treatment_kind)
        if xi is None:
            xi = Xi(Correlation(0.0), 1.0 if data.treatment_kind is TreatmentKind.CONTINUOUS else None)
        return cls(
            data.treatment_kind,
            data.y,
            data.w,
            design_matrix(f_t, data),
            design_matrix(f_o, data),
            xi_mode,
            xi,
        )

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def n_alpha(self) -> int:
        return self.X_t.shape[1]

    @property
    def n_beta(self) -> int:
        return self.X_o.shape[1]

    @property
    def n_xi(self) -> int:
        if self.xi_mode is XiMode.FIXED:
            return 0
        return 2 if self.kind is TreatmentKind.CONTINUOUS else 1

    @property
    def n_params(self) -> int:
        return self.n_alpha + self.n_beta + self.n_xi

    def unpack(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, float, float]:
        pa, pb = self.n_alpha, self.n_beta
        alpha, beta = x[:pa], x[pa : pa + pb]
        if self.xi_mode is XiMode.FIXED:
            sigma = self.fixed.sigma_v or 1.0
            rho = float(self.fixed.rho)
        else:
            with np.errstate(over="ignore"):
                sigma = float(np.exp(x[pa + pb])) if self.kind is TreatmentKind.CONTINUOUS else 1.0
            rho = float(np.clip(np.tanh(x[-1]), -_RHO_BOUND, _RHO_BOUND))
        return alpha, beta, sigma, rho

    def pack(self, alpha, beta, sigma: float, rho: float) -> np.ndarray:
        parts = [np.asarray(alpha, dtype=float), np.asarray(beta, dtype=float)]
        if self.xi_mode is XiMode.ESTIMATED:
            if self.kind is TreatmentKind.CONTINUOUS:
                parts.append(np.array([math.log(sigma)]))
            parts.append(np.array([math.atanh(float(np.clip(rho, -_RHO_BOUND, _RHO_BOUND)))]))
        return np.concatenate(parts)

    def terms(self, x: np.ndarray) -> np.ndarray:
        """Per-observation log contributions."""
        alpha, beta, sigma, rho = self.unpack(x)
        if self.kind is TreatmentKind.CONTINUOUS:
            return _rivers_vuong_terms(alpha, beta, sigma, rho, self.X_t, self.X_o, self.y, self.w)
        return _dichotomous_terms(alpha, beta, rho, self.X_t, self.X_o, self.y, self.w)

    def loglik(self, x: np.ndarray) -> float:
        return _floor_nonfinite(float(np.sum(self.terms(x))))

    def score(self, x: np.ndarray, step: float) -> np.ndarray:
        """
        Central-difference gradient of the loglik with step step * (1 + |x_j|).

        Differences are taken per observation before summing, so the rounding
        error of the totals does not swamp the gradient at large n.
        """
        grad = np.empty_like(x)
        for j in range(x.size):
            h = step * (1.0 + abs(x[j]))
            shift = np.zeros_like(x)
            shift[j] = h
            plus, minus = self.terms(x + shift), self.terms(x - shift)
            with np.errstate(all="ignore"):
                diff = plus - minus
            if np.all(np.isfinite(diff)):
                grad[j] = float(np.sum(diff)) / (2.0 * h)
            else:
                grad[j] = (
                    _floor_nonfinite(float(np.sum(plus))) - _floor_nonfinite(float(np.sum(minus)))
                ) / (2.0 * h)
        return grad

    def to_theta(self, x: np.ndarray) -> Theta:
        alpha, beta, sigma, rho = self.unpack(x)
        sigma_v = sigma if self.kind is TreatmentKind.CONTINUOUS else None
        if sigma_v is not None and not (math.isfinite(sigma_v) and sigma_v > 0):
            sigma_v = 1.0
        return Theta(alpha.copy(), beta.copy(), Xi(Correlation(rho), sigma_v), self.xi_mode)


@dataclass
class _Run:
    x: np.ndarray
    loglik: float
    converged: bool
    iterations: int
    message: str = ""
    rel_change: float = math.inf


def _hessian(lik: _Likelihood, x: np.ndarray, grad: np.ndarray, opts: OptimizerOptions) -> np.ndarray:
    """Forward differences of the score, symmetrized."""
    hess = np.empty((x.size, x.size))
    for j in range(x.size):
        h = opts.hess_step * (1.0 + abs(x[j]))
        shift = np.zeros_like(x)
        shift[j] = h
        hess[:, j] = (lik.score(x + shift, opts.fd_step) - grad) / h
    return 0.5 * (hess + hess.T)


def _newton_polish(lik: _Likelihood, run: _Run, grad: np.ndarray, opts: OptimizerOptions):
    """Newton steps with a numerical Hessian and step halving; stops when no step improves."""
    x, loglik, rel = run.x, run.loglik, run.rel_change
    for _ in range(opts.newton_steps):
        if np.max(np.abs(grad)) < 1e-2 * opts.gtol and rel < opts.rel_tol:
            break
        try:
            factor = linalg.cho_factor(-_hessian(lik, x, grad, opts))
        except (linalg.LinAlgError, ValueError):
            break
        direction = linalg.cho_solve(factor, grad)
        t = 1.0
        for _ in range(30):
            trial = x + t * direction
            value = lik.loglik(trial)
            if value >= loglik:
                break
            t *= 0.5
        else:
            break
        rel = abs(value - loglik) / max(abs(loglik), 1e-300)
        x, loglik = trial, value
        grad = lik.score(x, opts.fd_step)
    return x, loglik, rel, grad


def _maximize(lik: _Likelihood, x0: np.ndarray, opts: OptimizerOptions) -> _Run:
    """
    BFGS on -loglik/n, then Newton polishing on the full loglik.

    Converged when max |d loglik / d x| < gtol and the last relative loglik
    change is below rel_tol.
    """
    n = lik.n

    def objective(x):
        return -lik.loglik(x) / n

    def gradient(x):
        return -lik.score(x, opts.fd_step) / n

    state = {"prev": objective(x0), "rel": 0.0}

    def track(intermediate_result):
        current = float(intermediate_result.fun)
        previous = state["prev"]
        state["rel"] = abs(current - previous) / max(abs(previous), 1e-300)
        state["prev"] = current

    with np.errstate(all="ignore"):
        result = optimize.minimize(
            objective,
            x0,
            jac=gradient,
            method="BFGS",
            callback=track,
            options={"gtol": opts.gtol / n, "norm": np.inf, "maxiter": opts.max_iter},
        )
        x = np.asarray(result.x, dtype=float)
        run = _Run(x, lik.loglik(x), False, int(result.nit), str(result.message), state["rel"])
        if run.loglik <= LOGLIK_FLOOR or x.size == 0:
            return run
        grad = lik.score(x, opts.fd_step)
        run.x, run.loglik, run.rel_change, grad = _newton_polish(lik, run, grad, opts)

    gmax = float(np.max(np.abs(grad)))
    run.converged = bool(
        run.loglik > LOGLIK_FLOOR and gmax < opts.gtol and run.rel_change < opts.rel_tol
    )
    if not run.converged:
        run.message = f"{run.message} (max |grad| {gmax:.3g}, rel change {run.rel_change:.3g})"
    return run


def _warm_start(lik: _Likelihood, data: Dataset, f_t: ModelFormula, f_o: ModelFormula):
    """Map a two-stage residual inclusion fit onto the LIML parameterization."""
    try:
        first = first_stage(data, f_t)
        second = second_stage(data, f_o, first.residuals)
    except LimlselError as exc:
        logger.debug("No warm start for %s/%s: %s", f_t.label, f_o.label, exc)
        return None

    if lik.kind is TreatmentKind.CONTINUOUS:
        sigma = math.sqrt(float(np.mean(first.residuals**2)))
    else:
        sigma = 1.0
    if lik.xi_mode is XiMode.FIXED:
        sigma = lik.fixed.sigma_v or 1.0
        rho = float(lik.fixed.rho)
    else:
        # residual coefficient = rho / sqrt(1 - rho^2)
        scaled = second.resid_coef
        rho = float(np.clip(scaled / math.sqrt(1.0 + scaled * scaled), -0.95, 0.95))
    beta = second.beta * math.sqrt(1.0 - rho * rho)
    x0 = lik.pack(first.alpha, beta, sigma, rho)
    if not np.all(np.isfinite(x0)):
        return None
    return x0


def _liml_result(lik, run: _Run, f_t, f_o) -> FitResult:
    return FitResult(
        theta=lik.to_theta(run.x),
        loglik=run.loglik,
        converged=run.converged,
        n_params=lik.n_params,
        iterations=run.iterations,
        formulas=(f_t, f_o),
        method=FitMethod.LIML,
        message=run.message,
    )


def fit_liml(
    data: Dataset,
    f_t: ModelFormula,
    f_o: ModelFormula,
    xi_mode: Union[XiMode, str] = XiMode.ESTIMATED,
    opts: Optional[OptimizerOptions] = None,
    xi: Optional[Xi] = None,
) -> FitResult:
    """
    Maximize the joint log-likelihood for one formula pair.

    Optimizes over (alpha, beta, log sigma_v, atanh rho) by BFGS with central
    difference gradients, finished by Newton steps on a numerical Hessian.
    Converged means max |grad loglik| < opts.gtol and a relative loglik change
    below opts.rel_tol. Starts from the two-stage residual inclusion
    estimates, then from zeros if that run does not converge; the returned
    parameters are the best of all runs and starting points.

    Args:
        data: Observed sample.
        f_t: Treatment formula.
        f_o: Outcome formula.
        xi_mode: Estimate (sigma_v, rho) or hold them at `xi`.
        opts: Optimizer settings.
        xi: Fixed nuisance values; defaults to rho=0, sigma_v=1.

    Returns:
        FitResult with converged=False instead of raising on failure.
    """
    opts = opts or OptimizerOptions()
    lik = _Likelihood.build(data, f_t, f_o, XiMode(xi_mode), xi)
    zeros = lik.pack(np.zeros(lik.n_alpha), np.zeros(lik.n_beta), 1.0, 0.0)

    degenerate = np.all(data.y == data.y[0])
    if data.treatment_kind is TreatmentKind.DICHOTOMOUS:
        degenerate = degenerate or np.all(data.w == data.w[0])
    if degenerate:
        logger.warning("LIML %s/%s: response without variation", f_t.label, f_o.label)
        run = _Run(zeros, lik.loglik(zeros), False, 0, "response without variation")
        return _liml_result(lik, run, f_t, f_o)

    starts = []
    warm = _warm_start(lik, data, f_t, f_o)
    if warm is not None:
        starts.append(warm)
    starts.append(zeros)

    runs = []
    for x0 in starts:
        run = _maximize(lik, x0, opts)
        runs.append(run)
        if run.converged:
            break

    candidates = runs + [_Run(x0, lik.loglik(x0), False, 0, "starting point") for x0 in starts]
    best = max(candidates, key=lambda r: (r.loglik, r.converged))
    best.iterations = sum(r.iterations for r in runs)
    if not best.converged:
        logger.info(
            "LIML %s/%s did not converge (loglik=%.6g): %s",
            f_t.label,
            f_o.label,
            best.loglik,
            best.message,
        )
    return _liml_result(lik, best, f_t, f_o)


# === Least squares ===


def least_squares(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Solve min ||A x - b|| by column-pivoted QR.

    Raises:
        RankDeficiencyError: a pivot of R falls below 1e-10 * ||A||.
    """
    n, p = A.shape
    if n < p:
        raise RankDeficiencyError(f"{n} observations for {p} columns")
    q, r, piv = linalg.qr(A, mode="economic", pivoting=True)
    tol = 1e-10 * np.linalg.norm(A)
    if np.min(np.abs(np.diag(r))) <= tol:
        raise RankDeficiencyError("design matrix is not of full column rank")
    solution = linalg.solve_triangular(r, q.T @ b)
    coef = np.empty(p)
    coef[piv] = solution
    return coef


def fit_2sls(data: Dataset, f_t: ModelFormula, f_o: ModelFormula) -> FitResult:
    """Two-stage least squares: w on the treatment design, then y on the outcome design with w
    replaced by its fit."""
    _check_pair(data, f_t, f_o, TreatmentKind.CONTINUOUS)
    X_t = design_matrix(f_t, data)
    alpha = least_squares(X_t, data.w)
    w_hat = X_t @ alpha
    X_o = design_matrix(f_o, data, {Var.W: w_hat})
    beta = least_squares(X_o, data.y)
    return FitResult(
        theta=Theta(alpha, beta),
        loglik=None,
        converged=True,
        n_params=X_t.shape[1] + X_o.shape[1],
        iterations=0,
        formulas=(f_t, f_o),
        method=FitMethod.TWO_SLS,
    )


# === Two-stage residual inclusion ===


@dataclass
class FirstStage:
    """Treatment-model fit and its residuals."""

    alpha: np.ndarray
    residuals: np.ndarray
    loglik: float
    n_params: int
    converged: bool
    iterations: int = 0


@dataclass
class SecondStage:
    """Probit outcome fit augmented with the first-stage residual."""

    beta: np.ndarray
    resid_coef: float
    loglik: float
    n_params: int
    converged: bool
    iterations: int = 0


@dataclass
class _ProbitFit:
    params: np.ndarray
    loglik: float
    converged: bool
    iterations: int


def _probit(endog: np.ndarray, exog: np.ndarray, what: str) -> _ProbitFit:
    if np.all(endog == endog[0]):
        raise DegenerateError(f"{what} has no variation")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            result = Probit(endog, exog).fit(disp=0, maxiter=100)
        except (np.linalg.LinAlgError, PerfectSeparationError) as exc:
            raise DegenerateError(f"{what} probit failed: {exc}") from exc
    params = np.asarray(result.params, dtype=float)
    converged = bool(result.mle_retvals.get("converged", False)) and bool(
        np.all(np.isfinite(params))
    )
    if not converged:
        logger.debug("%s probit did not converge", what)
    return _ProbitFit(
        params, float(result.llf), converged, int(result.mle_retvals.get("iterations", 0))
    )


def first_stage(data: Dataset, f_t: ModelFormula) -> FirstStage:
    """
    Fit the treatment model.

    Continuous w: least squares with the Gaussian profile loglik (sigma
    counted as a parameter). Binary w: probit, residual w - Phi(fit).
    """
    X = design_matrix(f_t, data)
    if data.treatment_kind is TreatmentKind.CONTINUOUS:
        alpha = least_squares(X, data.w)
        residuals = data.w - X @ alpha
        s2 = float(np.mean(residuals**2))
        if s2 <= 0.0:
            raise DegenerateError("treatment model reproduces w exactly")
        loglik = -0.5 * data.n * (math.log(2.0 * math.pi * s2) + 1.0)
        return FirstStage(alpha, residuals, loglik, X.shape[1] + 1, True)
    fit = _probit(data.w, X, "treatment")
    residuals = data.w - special.ndtr(X @ fit.params)
    return FirstStage(fit.params, residuals, fit.loglik, X.shape[1], fit.converged, fit.iterations)


def second_stage(data: Dataset, f_o: ModelFormula, residuals: np.ndarray) -> SecondStage:
    """Probit of y on the outcome design plus the residual column."""
    X = np.column_stack([design_matrix(f_o, data), residuals])
    fit = _probit(data.y, X, "outcome")
    return SecondStage(
        fit.params[:-1], float(fit.params[-1]), fit.loglik, X.shape[1], fit.converged, fit.iterations
    )


def two_sri_result(
    first: FirstStage, second: SecondStage, f_t: ModelFormula, f_o: ModelFormula
) -> FitResult:
    return FitResult(
        theta=Theta(first.alpha, second.beta),
        loglik=second.loglik,
        converged=first.converged and second.converged,
        n_params=second.n_params,
        iterations=first.iterations + second.iterations,
        formulas=(f_t, f_o),
        method=FitMethod.TWO_SRI,
        resid_coef=second.resid_coef,
        residuals=first.residuals,
        stage1_loglik=first.loglik,
        stage1_n_params=first.n_params,
    )


def fit_2sri(data: Dataset, f_t: ModelFormula, f_o: ModelFormula) -> FitResult:
    """Two-stage residual inclusion on one formula pair."""
    _check_pair(data, f_t, f_o, data.treatment_kind)
    first = first_stage(data, f_t)
    second = second_stage(data, f_o, first.residuals)
    return two_sri_result(first, second, f_t, f_o)


def lr_statistic(fit_small: FitResult, fit_big: FitResult) -> float:
    """
    Likelihood-ratio statistic -2 (l_small - l_big), floored at 0.

    Raises:
        ValueError: the pairs are not nested, or a fit lacks a converged loglik.
    """
    for fit in (fit_small, fit_big):
        if not fit.converged or fit.loglik is None:
            raise ValueError(f"fit {fit.formula_pair} has no converged log-likelihood")
    (small_t, small_o), (big_t, big_o) = fit_small.formulas, fit_big.formulas
    if not (nests(big_t, small_t) and nests(big_o, small_o)):
        raise ValueError(f"{fit_small.formula_pair} is not nested in {fit_big.formula_pair}")
    return max(0.0, -2.0 * (fit_small.loglik - fit_big.loglik))
