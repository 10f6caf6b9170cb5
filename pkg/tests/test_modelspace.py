import numpy as np
import pytest

from limlsel.modelspace import (
    CandidateCatalog,
    Dataset,
    ModelFormula,
    Side,
    Term,
    TreatmentKind,
    Var,
    catalog_continuous,
    catalog_dichotomous,
    catalogs_for,
    design_matrix,
    design_row,
    nests,
)

from .conftest import make_dataset


def one_row(kind=TreatmentKind.CONTINUOUS, **values):
    columns = {"y": 1.0, "w": 0.0, "x1": 0.0, "x2": 0.0, "x3": 0.0, "z": 0.0}
    columns.update(values)
    return Dataset(treatment_kind=kind, **{k: [v] for k, v in columns.items()})


def test_design_row_examples():
    cat_t, cat_o = catalog_continuous()
    np.testing.assert_array_equal(design_row(cat_t.get("a1"), one_row(z=1.0), 0), [1.0, 1.0])
    np.testing.assert_array_equal(design_row(cat_o.get("b1"), one_row(w=0.0), 0), [1.0, 0.0])

    b5 = catalog_dichotomous().get("b5")
    row = one_row(TreatmentKind.DICHOTOMOUS, w=1.0, x1=2.0, x2=0.0)
    np.testing.assert_array_equal(design_row(b5, row, 0), [1.0, 1.0, 2.0, 0.0, 2.0])


def test_design_row_all_zero_covariates():
    _, cat_o = catalog_continuous()
    b5 = cat_o.get("b5")
    row = design_row(b5, one_row(), 0)
    assert row[0] == 1.0
    assert np.all(row[1:] == 0.0)


def test_design_row_out_of_range():
    cat_t, _ = catalog_continuous()
    with pytest.raises(IndexError):
        design_row(cat_t.get("a1"), one_row(), 1)


def test_design_matrix_override_reaches_interactions():
    data = make_dataset(TreatmentKind.DICHOTOMOUS, n=6, seed=2)
    b5 = catalog_dichotomous().get("b5")
    X = design_matrix(b5, data, {Var.W: 1.0})
    np.testing.assert_array_equal(X[:, 1], np.ones(6))
    np.testing.assert_array_equal(X[:, 4], data.x1)


def test_continuous_catalogs():
    cat_t, cat_o = catalog_continuous()
    assert len(cat_t) == 7
    assert len(cat_o) == 5
    assert cat_t.true_label == "a4"
    assert cat_o.true_label == "b2"
    assert cat_t.full.label == "a7"
    assert cat_o.full.label == "b5"
    assert nests(cat_t.get("a7"), cat_t.get("a4"))


def test_dichotomous_catalog():
    cat_o = catalog_dichotomous()
    assert len(cat_o) == 7
    assert cat_o.true_label == "b5"
    assert set(cat_o.get("b5").names()) == {"1", "w", "x1", "x2", "w*x1"}
    assert nests(cat_o.get("b6"), cat_o.get("b5"))
    assert cat_o.full.label == "b7"
    cat_t, _ = catalogs_for(TreatmentKind.DICHOTOMOUS)
    assert cat_t.labels == ["a4"]


def test_catalogs_are_deterministic():
    first_t, first_o = catalog_continuous()
    second_t, second_o = catalog_continuous()
    assert first_t == second_t
    assert first_o == second_o


def test_nests_examples():
    cat_t, _ = catalog_continuous()
    a2, a4, a5 = cat_t.get("a2"), cat_t.get("a4"), cat_t.get("a5")
    assert nests(a4, a4)
    assert nests(a4, a2)
    assert not nests(a5, a4)


def test_nests_rejects_mixed_sides():
    cat_t, cat_o = catalog_continuous()
    with pytest.raises(ValueError):
        nests(cat_t.get("a4"), cat_o.get("b2"))


def test_formula_invariants():
    one, w, z = Term.intercept(), Term.main(Var.W), Term.main(Var.Z)
    with pytest.raises(ValueError):
        ModelFormula(Side.TREATMENT, (z,), "no-intercept")
    with pytest.raises(ValueError):
        ModelFormula(Side.TREATMENT, (one, w), "w-in-treatment")
    with pytest.raises(ValueError):
        ModelFormula(Side.OUTCOME, (one, z), "z-in-outcome")
    with pytest.raises(ValueError):
        ModelFormula(Side.OUTCOME, (one, w, w), "repeat")
    with pytest.raises(ValueError):
        Term.interaction(Var.X1, Var.X1)


def test_formula_lookup():
    _, cat_o = catalog_continuous()
    b2 = cat_o.get("b2")
    assert b2.index_of(Term.main(Var.W)) == 1
    assert b2.has_w
    with pytest.raises(ValueError):
        b2.index_of(Term.main(Var.X3))
    with pytest.raises(ValueError):
        cat_o.get("b9")


def test_restrict_keeps_true_formula_resolvable():
    cat_t, _ = catalog_continuous()
    small = cat_t.restrict(["a7"])
    assert small.labels == ["a7"]
    assert small.true_formula.label == "a4"
    assert len(small) == 1
    with pytest.raises(ValueError):
        cat_t.restrict([])


def test_catalog_rejects_duplicates_and_foreign_sides():
    cat_t, cat_o = catalog_continuous()
    a1 = cat_t.get("a1")
    with pytest.raises(ValueError):
        CandidateCatalog(Side.TREATMENT, (a1, a1), "a1")
    with pytest.raises(ValueError):
        CandidateCatalog(Side.TREATMENT, (a1, cat_o.get("b1")), "a1")
    with pytest.raises(ValueError):
        CandidateCatalog(Side.TREATMENT, (a1,), "a4")


def test_dataset_validation():
    with pytest.raises(ValueError):
        make_dataset(y=np.array([0.0, 0.5, 1.0]), n=3)
    with pytest.raises(ValueError):
        make_dataset(TreatmentKind.DICHOTOMOUS, n=3, w=np.array([0.0, 2.0, 1.0]))
    with pytest.raises(ValueError):
        make_dataset(n=3, x1=np.zeros(4))


def test_dataset_take_and_latents():
    data = make_dataset(n=5, seed=4, v=np.arange(5.0), u=np.arange(5.0))
    assert data.has_latents
    flipped = data.take([4, 3, 2, 1, 0])
    np.testing.assert_array_equal(flipped.x1, data.x1[::-1])
    np.testing.assert_array_equal(flipped.v, data.v[::-1])
    assert not data.without_latents().has_latents
