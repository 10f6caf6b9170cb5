"""
Datasets, model formulas and candidate catalogs.

A formula is an ordered tuple of terms over the closed variable set
{z, w, x1, x2, x3}; its term order fixes the coefficient order of every fit.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Mapping, Optional, Sequence, Union

import numpy as np


class TreatmentKind(Enum):
    """Type of the treatment variable W."""

    CONTINUOUS = "continuous"
    DICHOTOMOUS = "dichotomous"


class Side(Enum):
    """Which model of the pair a formula belongs to."""

    TREATMENT = "treatment"
    OUTCOME = "outcome"


class Var(Enum):
    """Variables a term may reference."""

    Z = "z"
    W = "w"
    X1 = "x1"
    X2 = "x2"
    X3 = "x3"


class TermKind(Enum):
    INTERCEPT = "intercept"
    MAIN = "main"
    INTERACTION = "interaction"


@dataclass(frozen=True)
class Term:
    """A single regressor: intercept, a main effect or a two-way interaction."""

    kind: TermKind
    vars: tuple[Var, ...] = ()

    def __post_init__(self):
        expected = {TermKind.INTERCEPT: 0, TermKind.MAIN: 1, TermKind.INTERACTION: 2}
        if len(self.vars) != expected[self.kind]:
            raise ValueError(f"{self.kind.value} term takes {expected[self.kind]} variables")
        if self.kind is TermKind.INTERACTION and self.vars[0] == self.vars[1]:
            raise ValueError("interaction operands must be distinct")

    @classmethod
    def intercept(cls) -> "Term":
        return cls(TermKind.INTERCEPT)

    @classmethod
    def main(cls, var: Var) -> "Term":
        return cls(TermKind.MAIN, (var,))

    @classmethod
    def interaction(cls, first: Var, second: Var) -> "Term":
        return cls(TermKind.INTERACTION, (first, second))

    @property
    def name(self) -> str:
        if self.kind is TermKind.INTERCEPT:
            return "1"
        return "*".join(v.value for v in self.vars)

    def uses(self, var: Var) -> bool:
        return var in self.vars

    def evaluate(self, columns: Mapping[Var, np.ndarray], n: int) -> np.ndarray:
        """Column of term values for n observations."""
        if self.kind is TermKind.INTERCEPT:
            return np.ones(n)
        values = np.ones(n)
        for var in self.vars:
            values = values * columns[var]
        return values

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class ModelFormula:
    """Ordered term list for one side of the model pair."""

    side: Side
    terms: tuple[Term, ...]
    label: str

    def __post_init__(self):
        if not self.terms or self.terms[0].kind is not TermKind.INTERCEPT:
            raise ValueError(f"formula {self.label} must start with the intercept")
        if len(set(self.terms)) != len(self.terms):
            raise ValueError(f"formula {self.label} repeats a term")
        forbidden = Var.W if self.side is Side.TREATMENT else Var.Z
        if any(t.uses(forbidden) for t in self.terms):
            raise ValueError(
                f"{self.side.value} formula {self.label} may not reference {forbidden.value}"
            )

    @property
    def term_set(self) -> frozenset[Term]:
        return frozenset(self.terms)

    @property
    def n_terms(self) -> int:
        return len(self.terms)

    @property
    def has_w(self) -> bool:
        return any(t.uses(Var.W) for t in self.terms)

    def index_of(self, term: Term) -> int:
        """Coefficient position of `term`; ValueError if absent."""
        try:
            return self.terms.index(term)
        except ValueError:
            raise ValueError(f"formula {self.label} has no term {term.name}") from None

    def names(self) -> list[str]:
        return [t.name for t in self.terms]

    def __str__(self) -> str:
        return f"{self.label}: " + " + ".join(self.names())


@dataclass(frozen=True)
class CandidateCatalog:
    """
    Candidate formulas for one side plus the label of the true model.

    `reference` holds formulas that resolve by label but are not searched;
    `restrict` parks the true formula there so classification still works.
    """

    side: Side
    candidates: tuple[ModelFormula, ...]
    true_label: str
    reference: tuple[ModelFormula, ...] = field(default=())

    def __post_init__(self):
        if not self.candidates:
            raise ValueError("catalog needs at least one candidate")
        labels = [f.label for f in self.candidates]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate candidate labels: {labels}")
        for formula in self.candidates + self.reference:
            if formula.side is not self.side:
                raise ValueError(f"formula {formula.label} is not a {self.side.value} formula")
        if self.true_label not in labels + [f.label for f in self.reference]:
            raise ValueError(f"true label {self.true_label} not in catalog")

    @property
    def labels(self) -> list[str]:
        return [f.label for f in self.candidates]

    def get(self, label: str) -> ModelFormula:
        for formula in self.candidates + self.reference:
            if formula.label == label:
                return formula
        raise ValueError(f"unknown {self.side.value} model label: {label}")

    @property
    def true_formula(self) -> ModelFormula:
        return self.get(self.true_label)

    @property
    def full(self) -> ModelFormula:
        """The largest candidate (first one on ties)."""
        return max(self.candidates, key=lambda f: f.n_terms)

    def restrict(self, labels: Sequence[str]) -> "CandidateCatalog":
        """Catalog searching only `labels`, keeping the true formula resolvable."""
        chosen = tuple(self.get(label) for label in labels)
        if not chosen:
            raise ValueError("restriction must keep at least one candidate")
        reference = () if self.true_label in labels else (self.true_formula,)
        return CandidateCatalog(self.side, chosen, self.true_label, reference)

    def __len__(self) -> int:
        return len(self.candidates)


def nests(outer: ModelFormula, inner: ModelFormula) -> bool:
    """True iff every term of `inner` appears in `outer`."""
    if outer.side is not inner.side:
        raise ValueError(
            f"cannot compare {outer.side.value} formula with {inner.side.value} formula"
        )
    return inner.term_set <= outer.term_set


# === Dataset ===


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Observed sample (y, w, x1, x2, x3, z).

    `v` and `u` carry the latent confounders when the data came from a
    generator; estimators never read them.
    """

    y: np.ndarray
    w: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    x3: np.ndarray
    z: np.ndarray
    treatment_kind: TreatmentKind
    v: Optional[np.ndarray] = None
    u: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("y", "w", "x1", "x2", "x3", "z", "v", "u"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, np.asarray(value, dtype=float).reshape(-1))
        n = self.y.shape[0]
        if n == 0:
            raise ValueError("dataset is empty")
        for name in ("w", "x1", "x2", "x3", "z", "v", "u"):
            value = getattr(self, name)
            if value is not None and value.shape[0] != n:
                raise ValueError(f"column {name} has length {value.shape[0]}, expected {n}")
        if not np.all((self.y == 0.0) | (self.y == 1.0)):
            raise ValueError("y must be binary 0/1")
        if self.treatment_kind is TreatmentKind.DICHOTOMOUS and not np.all(
            (self.w == 0.0) | (self.w == 1.0)
        ):
            raise ValueError("w must be binary 0/1 for a dichotomous treatment")

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    @property
    def has_latents(self) -> bool:
        return self.v is not None and self.u is not None

    def column(self, var: Var) -> np.ndarray:
        return getattr(self, var.value)

    def columns(self) -> dict[Var, np.ndarray]:
        return {var: self.column(var) for var in Var}

    def take(self, index: Union[Sequence[int], np.ndarray]) -> "Dataset":
        """Rows selected (or permuted) by `index`."""
        idx = np.asarray(index, dtype=int)
        return replace(
            self,
            y=self.y[idx],
            w=self.w[idx],
            x1=self.x1[idx],
            x2=self.x2[idx],
            x3=self.x3[idx],
            z=self.z[idx],
            v=None if self.v is None else self.v[idx],
            u=None if self.u is None else self.u[idx],
        )

    def without_latents(self) -> "Dataset":
        return replace(self, v=None, u=None)


def design_matrix(
    formula: ModelFormula,
    dataset: Dataset,
    overrides: Optional[Mapping[Var, Union[float, np.ndarray]]] = None,
) -> np.ndarray:
    """
    n x p matrix of term values in formula order.

    `overrides` substitutes variables before evaluation, e.g. a counterfactual
    or fitted w; every term containing the variable sees the substitute.
    """
    columns = dataset.columns()
    for var, value in (overrides or {}).items():
        columns[var] = np.broadcast_to(np.asarray(value, dtype=float), (dataset.n,))
    return np.column_stack([term.evaluate(columns, dataset.n) for term in formula.terms])


def design_row(formula: ModelFormula, dataset: Dataset, i: int) -> np.ndarray:
    """Term values for observation i, first entry 1."""
    if not 0 <= i < dataset.n:
        raise IndexError(f"row {i} out of range for n={dataset.n}")
    columns = {var: dataset.column(var)[i : i + 1] for var in Var}
    return np.array([term.evaluate(columns, 1)[0] for term in formula.terms])


# === Catalogs ===

_ONE = Term.intercept()
_Z = Term.main(Var.Z)
_W = Term.main(Var.W)
_X1 = Term.main(Var.X1)
_X2 = Term.main(Var.X2)
_X3 = Term.main(Var.X3)
_ZX2 = Term.interaction(Var.Z, Var.X2)
_ZX3 = Term.interaction(Var.Z, Var.X3)
_WX1 = Term.interaction(Var.W, Var.X1)
_X1X2 = Term.interaction(Var.X1, Var.X2)
_X1X3 = Term.interaction(Var.X1, Var.X3)
_X2X3 = Term.interaction(Var.X2, Var.X3)

W_TERM = _W


def _catalog(side: Side, rows: dict[str, tuple[Term, ...]], true_label: str) -> CandidateCatalog:
    formulas = tuple(ModelFormula(side, (_ONE,) + terms, label) for label, terms in rows.items())
    return CandidateCatalog(side, formulas, true_label)


def catalog_continuous() -> tuple[CandidateCatalog, CandidateCatalog]:
    """Treatment candidates a1-a7 (a4 true) and outcome candidates b1-b5 (b2 true)."""
    treatment = _catalog(
        Side.TREATMENT,
        {
            "a1": (_Z,),
            "a2": (_Z, _X2),
            "a3": (_Z, _X3),
            "a4": (_Z, _X2, _X3),
            "a5": (_Z, _X2, _ZX2),
            "a6": (_Z, _X3, _ZX3),
            "a7": (_Z, _X2, _X3, _ZX2, _ZX3, _X2X3),
        },
        "a4",
    )
    outcome = _catalog(
        Side.OUTCOME,
        {
            "b1": (_W,),
            "b2": (_W, _X1, _X2),
            "b3": (_W, _X1, _X2, _X3),
            "b4": (_W, _X1, _X2, _X1X2),
            "b5": (_W, _X1, _X2, _X3, _X1X2, _X1X3, _X2X3),
        },
        "b2",
    )
    return treatment, outcome


def catalog_dichotomous() -> CandidateCatalog:
    """Outcome candidates b1-b7 for binary treatment (b5 true)."""
    return _catalog(
        Side.OUTCOME,
        {
            "b1": (_W,),
            "b2": (_W, _X1, _X2),
            "b3": (_W, _X1, _X2, _X3),
            "b4": (_W, _X1, _X2, _X3, _X1X2, _X1X3, _X2X3),
            "b5": (_W, _X1, _X2, _WX1),
            "b6": (_W, _X1, _X2, _X3, _WX1),
            "b7": (_W, _X1, _X2, _X3, _WX1, _X1X2, _X1X3, _X2X3),
        },
        "b5",
    )


def treatment_catalog_dichotomous() -> CandidateCatalog:
    """Binary-treatment studies only select the outcome model: a4 is fixed."""
    return _catalog(Side.TREATMENT, {"a4": (_Z, _X2, _X3)}, "a4")


def catalogs_for(kind: TreatmentKind) -> tuple[CandidateCatalog, CandidateCatalog]:
    if kind is TreatmentKind.CONTINUOUS:
        return catalog_continuous()
    return treatment_catalog_dichotomous(), catalog_dichotomous()
