"""
Simulation data generators.

Scenario s1-s4 settings for a continuous or binary treatment with latent
confounders (V, U) drawn from a gaussian, t or Clayton copula.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

import numpy as np

from .modelspace import Dataset, TreatmentKind
from .statlib import (
    CopulaFamily,
    CopulaSpec,
    Margin,
    RngStream,
    calibrate_copula_param,
    copula_latents,
)

logger = logging.getLogger(__name__)


class ScenarioId(Enum):
    S1 = "s1"
    S2 = "s2"
    S3 = "s3"
    S4 = "s4"


class Strength(Enum):
    WEAK = "weak"
    STRONG = "strong"


# scenario -> (confounder correlation, IV strength, treatment effect)
SCENARIO_LEVELS = {
    ScenarioId.S1: (Strength.WEAK, Strength.STRONG, Strength.STRONG),
    ScenarioId.S2: (Strength.WEAK, Strength.WEAK, Strength.STRONG),
    ScenarioId.S3: (Strength.STRONG, Strength.STRONG, Strength.STRONG),
    ScenarioId.S4: (Strength.WEAK, Strength.STRONG, Strength.WEAK),
}

CORRELATION = {Strength.WEAK: 0.3, Strength.STRONG: 0.6}

# continuous treatment: W = 1 + alpha_z Z + X2 + X3 + V
CONTINUOUS_ALPHA_Z = {Strength.WEAK: 0.5, Strength.STRONG: 1.0}
CONTINUOUS_BETA_W = {Strength.WEAK: 0.2, Strength.STRONG: 0.6}

# binary treatment: W = 1{alpha_0 + alpha_z Z + X2 + X3 + V >= 0}
DICHOTOMOUS_ALPHA = {Strength.WEAK: (0.05, 0.6), Strength.STRONG: (-0.2, 1.2)}
DICHOTOMOUS_BETA_W = {Strength.WEAK: 0.5, Strength.STRONG: 1.5}


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to draw one simulated dataset."""

    scenario_id: ScenarioId = ScenarioId.S1
    treatment_kind: TreatmentKind = TreatmentKind.CONTINUOUS
    copula: CopulaFamily = CopulaFamily.GAUSSIAN
    margin: Margin = Margin.NORMAL
    copula_df: int = 3
    n: int = 300
    seed: int = 1

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")
        if self.copula_df < 1:
            raise ValueError(f"copula_df must be >= 1, got {self.copula_df}")
        if self.treatment_kind is TreatmentKind.CONTINUOUS and (
            self.copula is not CopulaFamily.GAUSSIAN or self.margin is not Margin.NORMAL
        ):
            raise ValueError("continuous-treatment scenarios use a gaussian copula with normal margins")

    @property
    def corr_level(self) -> Strength:
        return SCENARIO_LEVELS[self.scenario_id][0]

    @property
    def iv_strength(self) -> Strength:
        return SCENARIO_LEVELS[self.scenario_id][1]

    @property
    def effect_size(self) -> Strength:
        return SCENARIO_LEVELS[self.scenario_id][2]

    @property
    def rho(self) -> float:
        return CORRELATION[self.corr_level]

    @property
    def alpha_0(self) -> float:
        if self.treatment_kind is TreatmentKind.CONTINUOUS:
            return 1.0
        return DICHOTOMOUS_ALPHA[self.iv_strength][0]

    @property
    def alpha_z(self) -> float:
        if self.treatment_kind is TreatmentKind.CONTINUOUS:
            return CONTINUOUS_ALPHA_Z[self.iv_strength]
        return DICHOTOMOUS_ALPHA[self.iv_strength][1]

    @property
    def beta_w(self) -> float:
        if self.treatment_kind is TreatmentKind.CONTINUOUS:
            return CONTINUOUS_BETA_W[self.effect_size]
        return DICHOTOMOUS_BETA_W[self.effect_size]

    def outcome_index(self, w, x1, x2) -> np.ndarray:
        """Structural outcome index; Y = 1{index + U >= 0}."""
        w, x1, x2 = (np.asarray(a, dtype=float) for a in (w, x1, x2))
        if self.treatment_kind is TreatmentKind.CONTINUOUS:
            return 0.5 + self.beta_w * w + 0.5 * x1 + 0.5 * x2
        return -0.2 + self.beta_w * w - w * x1 + 0.5 * x1 + 0.5 * x2

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario_id.value,
            "treatment_kind": self.treatment_kind.value,
            "copula": self.copula.value,
            "margin": self.margin.value,
            "copula_df": self.copula_df,
            "n": self.n,
            "seed": self.seed,
        }


def resolve_copula(config: ScenarioConfig, cache=None) -> CopulaSpec:
    """
    Copula whose margin-transformed correlation hits the scenario level.

    A gaussian copula with normal margins needs no calibration. Other
    combinations go through `cache` (a CopulaCache) when given.
    """
    if config.copula is CopulaFamily.GAUSSIAN and config.margin is Margin.NORMAL:
        return CopulaSpec(CopulaFamily.GAUSSIAN, config.rho)
    if cache is not None:
        return cache.get_or_calibrate(config.copula, config.rho, config.margin, config.copula_df)
    return calibrate_copula_param(config.copula, config.rho, config.margin, config.copula_df)


def _covariates(config: ScenarioConfig, rng: RngStream):
    n = config.n
    x1 = rng.normal(n)
    x2 = rng.bernoulli(0.5, n)
    x3 = rng.normal(n)
    z = rng.bernoulli(0.5, n)
    return x1, x2, x3, z


def gen_continuous(
    config: ScenarioConfig, rng: RngStream, copula: Optional[CopulaSpec] = None
) -> Dataset:
    """W = 1 + alpha_z Z + X2 + X3 + V;  Y = 1{0.5 + beta_w W + 0.5 X1 + 0.5 X2 + U >= 0}."""
    if config.treatment_kind is not TreatmentKind.CONTINUOUS:
        raise ValueError("gen_continuous needs a continuous-treatment scenario")
    copula = copula or resolve_copula(config)
    x1, x2, x3, z = _covariates(config, rng)
    v, u = copula_latents(copula, config.margin, rng, config.n)
    w = config.alpha_0 + config.alpha_z * z + x2 + x3 + v
    y = (config.outcome_index(w, x1, x2) + u >= 0.0).astype(float)
    return Dataset(y, w, x1, x2, x3, z, TreatmentKind.CONTINUOUS, v=v, u=u)


def gen_dichotomous(
    config: ScenarioConfig, rng: RngStream, copula: Optional[CopulaSpec] = None
) -> Dataset:
    """
    W = 1{alpha_0 + alpha_z Z + X2 + X3 + V >= 0}
    Y = 1{-0.2 + beta_w W - W X1 + 0.5 X1 + 0.5 X2 + U >= 0}.
    """
    if config.treatment_kind is not TreatmentKind.DICHOTOMOUS:
        raise ValueError("gen_dichotomous needs a dichotomous-treatment scenario")
    copula = copula or resolve_copula(config)
    x1, x2, x3, z = _covariates(config, rng)
    v, u = copula_latents(copula, config.margin, rng, config.n)
    w = (config.alpha_0 + config.alpha_z * z + x2 + x3 + v >= 0.0).astype(float)
    y = (config.outcome_index(w, x1, x2) + u >= 0.0).astype(float)
    return Dataset(y, w, x1, x2, x3, z, TreatmentKind.DICHOTOMOUS, v=v, u=u)


def generate(
    config: ScenarioConfig,
    rng: Union[RngStream, int],
    copula: Optional[CopulaSpec] = None,
) -> Dataset:
    """Dispatch on the treatment kind; an int `rng` is a stream id under config.seed."""
    if not isinstance(rng, RngStream):
        rng = RngStream(config.seed, rng)
    if config.treatment_kind is TreatmentKind.CONTINUOUS:
        return gen_continuous(config, rng, copula)
    return gen_dichotomous(config, rng, copula)
