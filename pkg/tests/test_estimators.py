import math

import numpy as np
import pytest
from scipy import integrate, special, stats

from limlsel.dgp import ScenarioConfig, ScenarioId, generate
from limlsel.errors import RankDeficiencyError
from limlsel.estimators import (
    cell_probabilities,
    fit_2sls,
    fit_2sri,
    fit_liml,
    least_squares,
    loglik_dichotomous,
    loglik_rivers_vuong,
    lr_statistic,
)
from limlsel.models import FitMethod, FitResult, Theta, Xi, XiMode
from limlsel.modelspace import (
    W_TERM,
    Dataset,
    TreatmentKind,
    catalog_continuous,
    catalogs_for,
    design_matrix,
)
from limlsel.statlib import Correlation

from .conftest import make_dataset

CAT_T, CAT_O = catalog_continuous()
A1, A4, A7 = CAT_T.get("a1"), CAT_T.get("a4"), CAT_T.get("a7")
B1, B2, B3 = CAT_O.get("b1"), CAT_O.get("b2"), CAT_O.get("b3")
DICH_T, DICH_O = catalogs_for(TreatmentKind.DICHOTOMOUS)


def random_theta(rng, f_t, f_o, continuous=True):
    alpha = rng.normal(0.0, 0.5, f_t.n_terms)
    beta = rng.normal(0.0, 0.5, f_o.n_terms)
    rho = rng.uniform(-0.8, 0.8)
    sigma = rng.uniform(0.5, 2.0) if continuous else None
    return Theta(alpha, beta, Xi(Correlation(rho), sigma))


def rivers_vuong_oracle(theta, data, f_t, f_o):
    """Integrate U | v ~ N(rho v, 1 - rho^2) row by row."""
    rho, sigma = float(theta.xi.rho), theta.xi.sigma_v
    v = data.w - design_matrix(f_t, data) @ theta.alpha
    index = design_matrix(f_o, data) @ theta.beta
    total = 0.0
    for i in range(data.n):
        cond = stats.norm(loc=rho * v[i], scale=math.sqrt(1.0 - rho * rho))
        p1, _ = integrate.quad(cond.pdf, -index[i], np.inf, epsabs=1e-13)
        p = p1 if data.y[i] == 1.0 else 1.0 - p1
        total += math.log(p) + stats.norm.logpdf(v[i], scale=sigma)
    return total


def quadrant_oracle(theta, data, f_t, f_o):
    """Integrate the bivariate normal density over each observed quadrant."""
    rho = float(theta.xi.rho)
    s = math.sqrt(1.0 - rho * rho)
    phi1 = design_matrix(f_t, data) @ theta.alpha
    phi2 = design_matrix(f_o, data) @ theta.beta
    total = 0.0
    for i in range(data.n):
        lo, hi = (-phi1[i], np.inf) if data.w[i] == 1.0 else (-np.inf, -phi1[i])

        def p_u(v, i=i):
            upper = special.ndtr((phi2[i] + rho * v) / s)
            return upper if data.y[i] == 1.0 else 1.0 - upper

        p, _ = integrate.quad(lambda v: stats.norm.pdf(v) * p_u(v), lo, hi, epsabs=1e-14)
        total += math.log(p)
    return total


def fake_fit(f_t, f_o, loglik, converged=True):
    return FitResult(
        theta=Theta(np.zeros(f_t.n_terms), np.zeros(f_o.n_terms)),
        loglik=loglik,
        converged=converged,
        n_params=f_t.n_terms + f_o.n_terms,
        iterations=0,
        formulas=(f_t, f_o),
        method=FitMethod.LIML,
    )


# --- log-likelihoods ---


def test_rivers_vuong_single_observation():
    data = Dataset([1.0], [0.0], [0.0], [0.0], [0.0], [0.0], TreatmentKind.CONTINUOUS)
    theta = Theta(np.zeros(2), np.zeros(2), Xi(Correlation(0.0), 1.0))
    value = loglik_rivers_vuong(theta, data, A1, B1)
    assert value == pytest.approx(math.log(0.5) - 0.5 * math.log(2.0 * math.pi), abs=1e-12)
    assert value == pytest.approx(-1.612086, abs=1e-6)


def test_rivers_vuong_index_uses_raw_first_stage_error():
    data = Dataset([1.0], [1.0], [0.0], [0.0], [0.0], [0.0], TreatmentKind.CONTINUOUS)
    theta = Theta(np.zeros(2), np.zeros(2), Xi(Correlation(0.6), 2.0))
    expected = special.log_ndtr(0.6 / 0.8) - 1.0 / 8.0 - 0.5 * math.log(2.0 * math.pi * 4.0)
    assert loglik_rivers_vuong(theta, data, A1, B1) == pytest.approx(expected, abs=1e-12)


def test_rivers_vuong_decouples_at_zero_correlation():
    data = make_dataset(n=40, seed=5)
    rng = np.random.default_rng(1)
    theta = random_theta(rng, A4, B2)
    theta.xi = Xi(Correlation(0.0), 1.3)
    v = data.w - design_matrix(A4, data) @ theta.alpha
    index = design_matrix(B2, data) @ theta.beta
    probit = np.sum(data.y * special.log_ndtr(index) + (1 - data.y) * special.log_ndtr(-index))
    normal = np.sum(stats.norm.logpdf(v, scale=1.3))
    assert loglik_rivers_vuong(theta, data, A4, B2) == pytest.approx(probit + normal, abs=1e-9)


def test_rivers_vuong_matches_quadrature_oracle():
    rng = np.random.default_rng(2024)
    for draw in range(50):
        data = make_dataset(n=10, seed=draw)
        theta = random_theta(rng, A4, B2)
        expected = rivers_vuong_oracle(theta, data, A4, B2)
        assert abs(loglik_rivers_vuong(theta, data, A4, B2) - expected) < 1e-6


def test_dichotomous_single_observation():
    data = Dataset([1.0], [1.0], [0.0], [0.0], [0.0], [0.0], TreatmentKind.DICHOTOMOUS)
    theta = Theta(np.zeros(4), np.zeros(5), Xi(Correlation(0.0), None))
    value = loglik_dichotomous(theta, data, DICH_T.get("a4"), DICH_O.get("b5"))
    assert value == pytest.approx(math.log(0.25), abs=1e-12)


def test_dichotomous_matches_quadrant_oracle():
    rng = np.random.default_rng(7)
    f_t, f_o = DICH_T.get("a4"), DICH_O.get("b5")
    for draw in range(50):
        data = make_dataset(TreatmentKind.DICHOTOMOUS, n=10, seed=100 + draw)
        theta = random_theta(rng, f_t, f_o, continuous=False)
        expected = quadrant_oracle(theta, data, f_t, f_o)
        assert abs(loglik_dichotomous(theta, data, f_t, f_o) - expected) < 1e-6


def test_cell_probabilities_sum_to_one():
    rng = np.random.default_rng(3)
    f_t, f_o = DICH_T.get("a4"), DICH_O.get("b7")
    data = make_dataset(TreatmentKind.DICHOTOMOUS, n=25, seed=3)
    for _ in range(10):
        cells = cell_probabilities(random_theta(rng, f_t, f_o, False), data, f_t, f_o)
        assert cells.shape == (25, 4)
        assert np.all(cells >= 0.0)
        np.testing.assert_allclose(cells.sum(axis=1), 1.0, atol=1e-10)


def test_loglik_rejects_wrong_treatment_kind():
    data = make_dataset(TreatmentKind.DICHOTOMOUS, n=5)
    theta = Theta(np.zeros(4), np.zeros(4), Xi(Correlation(0.0), 1.0))
    with pytest.raises(ValueError):
        loglik_rivers_vuong(theta, data, A4, B2)


def test_loglik_invariant_to_row_order(continuous_data):
    rng = np.random.default_rng(9)
    theta = random_theta(rng, A4, B2)
    perm = np.random.default_rng(10).permutation(continuous_data.n)
    before = loglik_rivers_vuong(theta, continuous_data, A4, B2)
    after = loglik_rivers_vuong(theta, continuous_data.take(perm), A4, B2)
    assert abs(before - after) < 1e-8


# --- LIML ---


def test_fit_liml_degenerate_outcome_does_not_raise():
    data = make_dataset(n=30, seed=1, y=np.ones(30))
    fit = fit_liml(data, A4, B2)
    assert not fit.converged
    assert math.isfinite(fit.loglik)


def test_fit_liml_improves_on_start(continuous_data):
    fit = fit_liml(continuous_data, A4, B2)
    zeros = Theta(np.zeros(4), np.zeros(4), Xi(Correlation(0.0), 1.0))
    assert fit.converged
    assert fit.n_params == 10
    assert fit.loglik >= loglik_rivers_vuong(zeros, continuous_data, A4, B2)
    assert fit.loglik == pytest.approx(
        loglik_rivers_vuong(fit.theta, continuous_data, A4, B2), abs=1e-9
    )


def test_fit_liml_row_order_invariant(continuous_data):
    perm = np.random.default_rng(4).permutation(continuous_data.n)
    a = fit_liml(continuous_data, A4, B2)
    b = fit_liml(continuous_data.take(perm), A4, B2)
    assert abs(a.loglik - b.loglik) < 1e-6


def test_fit_liml_fixed_xi_recovers_effect():
    config = ScenarioConfig(ScenarioId.S1, TreatmentKind.CONTINUOUS, n=5000, seed=3)
    data = generate(config, 1)
    xi = Xi(Correlation(config.rho), 1.0)
    fit = fit_liml(data, A4, B2, XiMode.FIXED, xi=xi)
    assert fit.n_params == 8
    assert fit.theta.xi == xi
    assert abs(fit.coefficient(W_TERM) - 0.6) < 0.1


def test_fit_liml_dichotomous_counts_parameters(dichotomous_data):
    f_t, f_o = DICH_T.get("a4"), DICH_O.get("b5")
    fit = fit_liml(dichotomous_data, f_t, f_o)
    zeros = Theta(np.zeros(4), np.zeros(5), Xi(Correlation(0.0), None))
    assert fit.n_params == 10
    assert fit.theta.xi.sigma_v is None
    assert fit.loglik >= loglik_dichotomous(zeros, dichotomous_data, f_t, f_o)


def natural_gradient(loglik, theta, data, f_t, f_o, step=1e-5):
    """Central differences of the loglik over (alpha, beta, sigma_v, rho)."""
    sigma = theta.xi.sigma_v
    flat = np.concatenate([theta.alpha, theta.beta, [float(theta.xi.rho)]])
    if sigma is not None:
        flat = np.append(flat, sigma)
    pa, pb = theta.alpha.size, theta.beta.size

    def at(x):
        sigma_v = x[pa + pb + 1] if sigma is not None else None
        xi = Xi(Correlation(x[pa + pb]), sigma_v)
        return loglik(Theta(x[:pa], x[pa : pa + pb], xi), data, f_t, f_o)

    grad = np.empty_like(flat)
    for j in range(flat.size):
        h = step * (1.0 + abs(flat[j]))
        shift = np.zeros_like(flat)
        shift[j] = h
        grad[j] = (at(flat + shift) - at(flat - shift)) / (2.0 * h)
    return grad


@pytest.mark.parametrize("f_t, f_o", [(A4, B2), (A7, CAT_O.get("b5"))])
def test_converged_fits_have_zero_gradient(f_t, f_o):
    config = ScenarioConfig(ScenarioId.S1, TreatmentKind.CONTINUOUS, n=300, seed=17)
    converged = 0
    for rep in range(1, 4):
        data = generate(config, rep)
        fit = fit_liml(data, f_t, f_o)
        if not fit.converged:
            continue
        converged += 1
        grad = natural_gradient(loglik_rivers_vuong, fit.theta, data, f_t, f_o)
        assert np.max(np.abs(grad)) < 1e-6
    assert converged > 0


def test_converged_dichotomous_fit_has_zero_gradient(dichotomous_data):
    f_t, f_o = DICH_T.get("a4"), DICH_O.get("b5")
    fit = fit_liml(dichotomous_data, f_t, f_o)
    assert fit.converged
    grad = natural_gradient(loglik_dichotomous, fit.theta, dichotomous_data, f_t, f_o)
    assert np.max(np.abs(grad)) < 1e-6


# --- 2SLS ---


def test_least_squares_rank_deficiency():
    A = np.column_stack([np.ones(5), 2.0 * np.ones(5)])
    with pytest.raises(RankDeficiencyError):
        least_squares(A, np.arange(5.0))


def test_fit_2sls_exact_recovery():
    rng = np.random.default_rng(12)
    n = 50
    z, x1, x3 = rng.integers(0, 2, n).astype(float), rng.normal(size=n), rng.normal(size=n)
    x2 = rng.integers(0, 2, n).astype(float)
    w = 1.0 + 2.0 * z + 0.5 * x2 - x3
    data = Dataset(x2, w, x1, x2, x3, z, TreatmentKind.CONTINUOUS)
    fit = fit_2sls(data, A4, B2)
    np.testing.assert_allclose(fit.theta.alpha, [1.0, 2.0, 0.5, -1.0], atol=1e-10)
    np.testing.assert_allclose(fit.theta.beta, [0.0, 0.0, 0.0, 1.0], atol=1e-10)


def test_fit_2sls_matches_normal_equations():
    z = np.array([0.0, 0.0, 0.0, 1.0, 1.0, 1.0])
    w = np.array([0.5, 1.0, 2.0, 2.5, 3.5, 4.0])
    y = np.array([0.0, 1.0, 0.0, 1.0, 1.0, 0.0])
    zeros = np.zeros(6)
    data = Dataset(y, w, zeros, zeros, zeros, z, TreatmentKind.CONTINUOUS)

    X_t = np.column_stack([np.ones(6), z])
    alpha = np.linalg.solve(X_t.T @ X_t, X_t.T @ w)
    X_o = np.column_stack([np.ones(6), X_t @ alpha])
    beta = np.linalg.solve(X_o.T @ X_o, X_o.T @ y)

    fit = fit_2sls(data, A1, B1)
    np.testing.assert_allclose(fit.theta.alpha, alpha, atol=1e-10)
    np.testing.assert_allclose(fit.theta.beta, beta, atol=1e-10)
    assert fit.loglik is None


def test_fit_2sls_constant_fitted_treatment():
    z = np.array([0.0, 0.0, 0.0, 1.0, 1.0, 1.0])
    w = np.array([1.0, 2.0, 3.0, 1.0, 2.0, 3.0])
    y = np.array([0.0, 1.0, 0.0, 1.0, 1.0, 0.0])
    zeros = np.zeros(6)
    data = Dataset(y, w, zeros, zeros, zeros, z, TreatmentKind.CONTINUOUS)
    with pytest.raises(RankDeficiencyError):
        fit_2sls(data, A1, B1)


def test_fit_2sls_row_order_invariant(continuous_data):
    perm = np.random.default_rng(6).permutation(continuous_data.n)
    a = fit_2sls(continuous_data, A4, B2)
    b = fit_2sls(continuous_data.take(perm), A4, B2)
    np.testing.assert_allclose(a.theta.beta, b.theta.beta, atol=1e-10)


# --- 2SRI ---


def test_fit_2sri_residual_coefficient_without_confounding():
    rng = np.random.default_rng(21)
    n = 5000
    x1, x3 = rng.normal(size=n), rng.normal(size=n)
    x2, z = rng.integers(0, 2, n).astype(float), rng.integers(0, 2, n).astype(float)
    w = 1.0 + z + x2 + x3 + rng.normal(size=n)
    y = (0.5 + 0.6 * w + 0.5 * x1 + 0.5 * x2 + rng.normal(size=n) >= 0).astype(float)
    data = Dataset(y, w, x1, x2, x3, z, TreatmentKind.CONTINUOUS)
    fit = fit_2sri(data, A4, B2)
    assert abs(fit.resid_coef) < 0.1
    assert fit.n_params == 5
    assert fit.stage1_n_params == 5


def test_fit_2sri_dichotomous_residuals(dichotomous_data):
    f_t, f_o = DICH_T.get("a4"), DICH_O.get("b5")
    fit = fit_2sri(dichotomous_data, f_t, f_o)
    fitted = special.ndtr(design_matrix(f_t, dichotomous_data) @ fit.theta.alpha)
    np.testing.assert_allclose(fit.residuals, dichotomous_data.w - fitted, atol=1e-12)
    assert fit.n_params == 6
    assert fit.stage1_n_params == 4
    assert fit.method is FitMethod.TWO_SRI


# --- likelihood ratio ---


def test_lr_statistic_contract():
    small = fake_fit(A4, B2, -100.0)
    big = fake_fit(A7, B3, -97.5)
    assert lr_statistic(small, small) == 0.0
    assert lr_statistic(small, big) == pytest.approx(5.0)
    assert lr_statistic(small, fake_fit(A7, B3, -100.2)) == 0.0
    with pytest.raises(ValueError):
        lr_statistic(small, fake_fit(A1, B3, -90.0))
    with pytest.raises(ValueError):
        lr_statistic(small, fake_fit(A7, B3, -90.0, converged=False))
