"""
Monte Carlo acceptance checks. Run with --runslow; a full pass takes tens of
minutes on a workstation.
"""

import numpy as np
import pytest
from scipy import stats

from limlsel.dgp import ScenarioConfig, ScenarioId, generate
from limlsel.effects import true_effect_oracle
from limlsel.estimators import fit_liml, lr_statistic
from limlsel.mcharness import run_study, summarize
from limlsel.models import Classification
from limlsel.modelspace import TreatmentKind, catalog_continuous
from limlsel.statlib import CopulaFamily, Margin
from limlsel.storage import default_parallelism

pytestmark = pytest.mark.slow

CAT_T, CAT_O = catalog_continuous()


@pytest.fixture(scope="module")
def continuous_study():
    scenario = ScenarioConfig(ScenarioId.S1, TreatmentKind.CONTINUOUS, n=300, seed=1)
    methods = ["2sls", "2sri", "liml", "2sri_full", "liml_full"]
    return run_study(scenario, methods, reps=200, parallelism=default_parallelism())


def test_lbic_accuracy(continuous_study):
    _, summary = continuous_study
    row = summary.row("liml_lbic")
    assert abs(row.mean - 0.626) < 0.08
    assert abs(row.bias - 0.026) < 0.08
    assert row.rmse <= 0.27


def test_lbic_selects_true_pair(continuous_study):
    _, summary = continuous_study
    row = summary.row("liml_lbic")
    assert row.true_pct >= 75.0
    assert row.incl_n >= row.true_n


def test_baseline_means(continuous_study):
    _, summary = continuous_study
    assert abs(summary.row("2sls").mean - 0.40) < 0.05
    assert abs(summary.row("2sri").mean - 0.67) < 0.08


def test_sequential_search_includes_truth(continuous_study):
    _, summary = continuous_study
    assert summary.row("2sri").incl_pct >= 95.0


def test_full_models_include_truth(continuous_study):
    records, _ = continuous_study
    full = [r for r in records if r.method.endswith("_full") and r.classification is not None]
    assert all(r.classification is Classification.INCLUDING_TRUE for r in full)


def test_likelihood_ratio_is_chi_square_one():
    base = ScenarioConfig(ScenarioId.S1, TreatmentKind.CONTINUOUS, n=500, seed=41)
    a4, b2, b3 = CAT_T.get("a4"), CAT_O.get("b2"), CAT_O.get("b3")
    values = []
    for rep in range(1, 501):
        data = generate(base, rep)
        small, big = fit_liml(data, a4, b2), fit_liml(data, a4, b3)
        if small.converged and big.converged:
            values.append(lr_statistic(small, big))
    assert len(values) >= 480
    assert stats.kstest(values, stats.chi2(1).cdf).pvalue > 0.01


def test_misspecification_grows_linearly():
    a4, b1, b2 = CAT_T.get("a4"), CAT_O.get("b1"), CAT_O.get("b2")
    per_obs = []
    for n in (1000, 4000):
        data = generate(ScenarioConfig(ScenarioId.S1, TreatmentKind.CONTINUOUS, n=n, seed=43), 1)
        per_obs.append(lr_statistic(fit_liml(data, a4, b1), fit_liml(data, a4, b2)) / n)
    assert per_obs[0] > 0.01
    assert abs(per_obs[1] - per_obs[0]) < 0.5 * per_obs[0]


def test_dichotomous_full_model_is_unbiased():
    scenario = ScenarioConfig(ScenarioId.S1, TreatmentKind.DICHOTOMOUS, n=300, seed=2)
    records, summary = run_study(scenario, ["liml_full"], reps=100, parallelism=default_parallelism())
    oracle = true_effect_oracle(scenario)
    assert abs(summary.row("liml_full").bias) < 0.03
    p_y1 = np.array([r.p_y1 for r in records if r.converged])
    assert abs(p_y1.mean() - oracle.p_y1) < 0.03


def test_dichotomous_selection_prefers_true_outcome():
    scenario = ScenarioConfig(ScenarioId.S1, TreatmentKind.DICHOTOMOUS, n=1000, seed=3)
    _, summary = run_study(
        scenario, ["liml"], reps=50, criteria=["lbic"], parallelism=default_parallelism()
    )
    assert summary.row("liml_lbic").incl_pct >= 80.0


def test_laic_includes_truth(continuous_study):
    _, summary = continuous_study
    assert summary.row("liml_laic").incl_pct >= 95.0


def test_sequential_first_stage_true_rate(continuous_study):
    _, summary = continuous_study
    row = summary.row("2sri")
    assert abs(row.stage1_true_pct - 87.2) <= 7.0
    assert row.both_n == row.incl_n


def test_lbic_consistency_over_n():
    lbic, laic = [], []
    for n in (100, 300, 1000):
        scenario = ScenarioConfig(ScenarioId.S1, TreatmentKind.CONTINUOUS, n=n, seed=5)
        _, summary = run_study(scenario, ["liml"], reps=200, parallelism=default_parallelism())
        lbic.append(summary.row("liml_lbic").true_pct)
        laic.append(summary.row("liml_laic").true_pct)
    assert lbic[1] >= lbic[0] - 5.0
    assert lbic[2] >= lbic[1] - 5.0
    assert lbic[2] - lbic[0] >= 10.0
    assert laic[2] <= 90.0


def dichotomous_biases(scenario):
    records, summary = run_study(
        scenario, ["liml"], reps=200, criteria=["lbic"], parallelism=default_parallelism()
    )
    oracle = true_effect_oracle(scenario)
    p_y1 = summarize(records, oracle.p_y1, field_name="p_y1", estimand="p_y1")
    return p_y1.row("liml_lbic"), summary.row("liml_lbic")


def test_dichotomous_lbic_biases():
    scenario = ScenarioConfig(ScenarioId.S1, TreatmentKind.DICHOTOMOUS, n=300, seed=6)
    p_y1, ate = dichotomous_biases(scenario)
    assert abs(p_y1.bias - 0.004) <= 0.03
    assert abs(ate.bias - 0.003) <= 0.05


# Misspecified confounders. Truths come from the oracle for the generating
# process; the bands are the observed ones at R=200.


def test_t_copula_lbic_biases():
    scenario = ScenarioConfig(
        ScenarioId.S1,
        TreatmentKind.DICHOTOMOUS,
        copula=CopulaFamily.STUDENT_T,
        margin=Margin.LOGISTIC,
        n=300,
        seed=8,
    )
    p_y1, ate = dichotomous_biases(scenario)
    assert -0.03 <= p_y1.bias <= 0.05
    assert -0.02 <= ate.bias <= 0.09
    assert ate.true_pct >= 30.0
    assert ate.incl_n >= ate.true_n


def test_clayton_lbic_biases():
    scenario = ScenarioConfig(
        ScenarioId.S1,
        TreatmentKind.DICHOTOMOUS,
        copula=CopulaFamily.CLAYTON,
        margin=Margin.LOGISTIC,
        n=300,
        seed=9,
    )
    p_y1, ate = dichotomous_biases(scenario)
    assert -0.03 <= p_y1.bias <= 0.05
    assert abs(ate.bias + 0.018) <= 0.05
    assert ate.true_pct >= 30.0
    assert ate.incl_n >= ate.true_n
