"""
Distribution utilities.

Special functions, the bivariate normal CDF, copula samplers and the seeded
random-stream contract shared by the data generators and the estimators.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Union

import numpy as np
from scipy import optimize, special, stats

from .errors import CalibrationError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

CALIBRATION_SEED = 20240607
CALIBRATION_PAIRS = 200_000
DEFAULT_T_DF = 3

_TWO_PI = 2.0 * math.pi

# Gauss-Legendre abscissae/weights (half rules) for 6, 12 and 20 points
_GL_NODES = (
    np.array([-0.9324695142031522, -0.6612093864662647, -0.2386191860831970]),
    np.array(
        [
            -0.9815606342467191,
            -0.9041172563704750,
            -0.7699026741943050,
            -0.5873179542866171,
            -0.3678314989981802,
            -0.1252334085114692,
        ]
    ),
    np.array(
        [
            -0.9931285991850949,
            -0.9639719272779138,
            -0.9122344282513259,
            -0.8391169718222188,
            -0.7463319064601508,
            -0.6360536807265150,
            -0.5108670019508271,
            -0.3737060887154196,
            -0.2277858511416451,
            -0.07652652113349733,
        ]
    ),
)
_GL_WEIGHTS = (
    np.array([0.1713244923791705, 0.3607615730481384, 0.4679139345726904]),
    np.array(
        [
            0.04717533638651177,
            0.1069393259953183,
            0.1600783285433464,
            0.2031674267230659,
            0.2334925365383547,
            0.2491470458134029,
        ]
    ),
    np.array(
        [
            0.01761400713915212,
            0.04060142980038694,
            0.06267204833410906,
            0.08327674157670475,
            0.1019301198172404,
            0.1181945319615184,
            0.1316886384491766,
            0.1420961093183821,
            0.1491729864726037,
            0.1527533871307259,
        ]
    ),
)


@dataclass(frozen=True)
class Correlation:
    """A correlation coefficient strictly inside (-1, 1)."""

    rho: float

    def __post_init__(self):
        if not (math.isfinite(self.rho) and -1.0 < self.rho < 1.0):
            raise ValueError(f"correlation must lie in (-1, 1), got {self.rho}")

    def __float__(self) -> float:
        return float(self.rho)


class CopulaFamily(Enum):
    """Copula families available to the confounder generator."""

    GAUSSIAN = "gaussian"
    STUDENT_T = "student_t"
    CLAYTON = "clayton"


class Margin(Enum):
    """Marginal distribution of the latent confounders."""

    NORMAL = "normal"
    LOGISTIC = "logistic"


@dataclass(frozen=True)
class CopulaSpec:
    """
    A bivariate copula.

    `param` is the correlation parameter for gaussian/student_t and theta for
    clayton. `df` is only read by the student_t family.
    """

    family: CopulaFamily
    param: float
    df: int = DEFAULT_T_DF

    def __post_init__(self):
        if self.family is CopulaFamily.CLAYTON:
            if not (math.isfinite(self.param) and self.param > 0):
                raise ValueError(f"clayton theta must be > 0, got {self.param}")
        elif not -1.0 < self.param < 1.0:
            raise ValueError(
                f"{self.family.value} correlation must lie in (-1, 1), got {self.param}"
            )
        if self.family is CopulaFamily.STUDENT_T and int(self.df) < 1:
            raise ValueError(f"t-copula degrees of freedom must be >= 1, got {self.df}")

    def to_dict(self) -> dict:
        return {"family": self.family.value, "param": self.param, "df": self.df}


class RngStream:
    """
    Seeded random stream.

    The pair (seed, stream_id) fully determines the draw sequence. Distinct
    stream ids map to distinct SeedSequence spawn keys, which numpy guarantees
    to be independent. A stream is single-owner state: never share one
    between threads or processes.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        if seed < 0 or stream_id < 0:
            raise ValueError("seed and stream_id must be non-negative")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        self.generator = np.random.Generator(np.random.PCG64(sequence))

    def normal(self, size: int) -> np.ndarray:
        return self.generator.standard_normal(size)

    def uniform(self, size: int) -> np.ndarray:
        return self.generator.random(size)

    def bernoulli(self, p: float, size: int) -> np.ndarray:
        return (self.generator.random(size) < p).astype(float)

    def exponential(self, size: int) -> np.ndarray:
        return self.generator.standard_exponential(size)

    def gamma(self, shape: float, size: int) -> np.ndarray:
        return self.generator.standard_gamma(shape, size)

    def chisquare(self, df: float, size: int) -> np.ndarray:
        return self.generator.chisquare(df, size)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def _as_output(values: np.ndarray, like: ArrayLike) -> ArrayLike:
    if np.ndim(like) == 0:
        return float(values)
    return values


# === Univariate distributions ===


def norm_cdf(x: ArrayLike) -> ArrayLike:
    """Standard normal CDF."""
    return _as_output(special.ndtr(np.asarray(x, dtype=float)), x)


def norm_logcdf(x: ArrayLike) -> ArrayLike:
    """log of the standard normal CDF, accurate far into the lower tail."""
    return _as_output(special.log_ndtr(np.asarray(x, dtype=float)), x)


def logistic_cdf(x: ArrayLike) -> ArrayLike:
    """Standard logistic CDF."""
    return _as_output(special.expit(np.asarray(x, dtype=float)), x)


def logistic_quantile(p: ArrayLike) -> ArrayLike:
    """Inverse of the standard logistic CDF; p must lie in (0, 1)."""
    arr = np.asarray(p, dtype=float)
    if not np.all((arr > 0.0) & (arr < 1.0)):
        raise ValueError("logistic_quantile requires p in (0, 1)")
    return _as_output(special.logit(arr), p)


def t_cdf(x: ArrayLike, df: float) -> ArrayLike:
    """Student t CDF."""
    return _as_output(stats.t.cdf(np.asarray(x, dtype=float), df), x)


def margin_cdf(margin: Margin, x: ArrayLike) -> ArrayLike:
    if margin is Margin.NORMAL:
        return norm_cdf(x)
    return logistic_cdf(x)


def margin_quantile(margin: Margin, p: ArrayLike) -> ArrayLike:
    if margin is Margin.NORMAL:
        arr = np.asarray(p, dtype=float)
        if not np.all((arr > 0.0) & (arr < 1.0)):
            raise ValueError("normal quantile requires p in (0, 1)")
        return _as_output(special.ndtri(arr), p)
    return logistic_quantile(p)


# === Bivariate normal ===


def _bvnu(h: np.ndarray, k: np.ndarray, r: float) -> np.ndarray:
    """
    Upper orthant probability P(X > h, Y > k) for finite h, k.

    Drezner-Wesolowsky / Genz fixed-order Gauss-Legendre scheme with the
    |r| >= 0.925 branch integrating the asymptotic expansion.
    """
    if abs(r) < 0.3:
        ng = 0
    elif abs(r) < 0.75:
        ng = 1
    else:
        ng = 2
    x, w = _GL_NODES[ng], _GL_WEIGHTS[ng]
    hk = h * k

    if abs(r) < 0.925:
        hs = (h * h + k * k) / 2.0
        asr = math.asin(r)
        total = np.zeros_like(h)
        for nodes in ((1.0 - x) / 2.0, (1.0 + x) / 2.0):
            sn = np.sin(asr * nodes)
            total += np.sum(
                w * np.exp((sn * hk[:, None] - hs[:, None]) / (1.0 - sn * sn)), axis=1
            )
        bvn = total * asr / (2.0 * _TWO_PI) + special.ndtr(-h) * special.ndtr(-k)
        return np.clip(bvn, 0.0, 1.0)

    if r < 0:
        k = -k
        hk = -hk
    bvn = np.zeros_like(h)
    if abs(r) < 1.0:
        with np.errstate(over="ignore", invalid="ignore"):
            as_ = (1.0 - r) * (1.0 + r)
            a = math.sqrt(as_)
            bs = (h - k) ** 2
            c = (4.0 - hk) / 8.0
            d = (12.0 - hk) / 16.0
            asr = -(bs / as_ + hk) / 2.0
            lead = a * np.exp(asr) * (
                1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as_ * as_ / 5.0
            )
            bvn = np.where(asr > -100.0, lead, 0.0)
            b = np.sqrt(bs)
            tail = (
                np.exp(-hk / 2.0)
                * math.sqrt(_TWO_PI)
                * special.ndtr(-b / a)
                * b
                * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0)
            )
            bvn = bvn - np.where(hk > -100.0, tail, 0.0)
            half = a / 2.0
            for sign in (-1.0, 1.0):
                xs = (half * (sign * x + 1.0)) ** 2
                rs = np.sqrt(1.0 - xs)
                asr_i = -(bs[:, None] / xs + hk[:, None]) / 2.0
                sp = 1.0 + c[:, None] * xs * (1.0 + d[:, None] * xs)
                ep = np.exp(-hk[:, None] * (1.0 - rs) / (2.0 * (1.0 + rs))) / rs
                term = np.where(asr_i > -100.0, half * w * np.exp(asr_i) * (ep - sp), 0.0)
                bvn = bvn + term.sum(axis=1)
            bvn = -bvn / _TWO_PI

    if r > 0:
        bvn = bvn + special.ndtr(-np.maximum(h, k))
    else:
        gap = np.where(
            h < 0, special.ndtr(k) - special.ndtr(h), special.ndtr(-h) - special.ndtr(-k)
        )
        bvn = np.where(h >= k, -bvn, gap - bvn)
    return np.clip(bvn, 0.0, 1.0)


def bvn_cdf(h: ArrayLike, k: ArrayLike, rho: Union[Correlation, float]) -> ArrayLike:
    """
    Standard bivariate normal CDF P(V <= h, U <= k) with correlation rho.

    h and k broadcast against each other and may hold +-inf sentinels, so
    bvn_cdf(h, inf, rho) == norm_cdf(h).
    """
    r = float(rho)
    if not -1.0 < r < 1.0:
        raise ValueError(f"correlation must lie in (-1, 1), got {r}")

    h_arr, k_arr = np.broadcast_arrays(np.asarray(h, dtype=float), np.asarray(k, dtype=float))
    shape = h_arr.shape
    hf = h_arr.ravel()
    kf = k_arr.ravel()

    out = np.full(hf.shape, np.nan)
    finite = np.isfinite(hf) & np.isfinite(kf)
    if finite.any():
        out[finite] = _bvnu(-hf[finite], -kf[finite], r)

    infinite = ~finite & ~np.isnan(hf) & ~np.isnan(kf)
    if infinite.any():
        hi, ki = hf[infinite], kf[infinite]
        out[infinite] = np.where(
            (hi == -np.inf) | (ki == -np.inf),
            0.0,
            np.where(hi == np.inf, special.ndtr(ki), special.ndtr(hi)),
        )

    if shape == ():
        return float(out[0])
    return out.reshape(shape)


# === Copulas ===


def sample_copula(spec: CopulaSpec, rng: RngStream, size: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Draw `size` pairs with uniform margins from the copula.

    gaussian: correlated normals through norm_cdf.
    student_t: correlated bivariate t through the univariate t CDF.
    clayton: Marshall-Olkin frailty with a Gamma(1/theta) mixing variable.
    """
    if spec.family is CopulaFamily.CLAYTON:
        e1 = rng.exponential(size)
        e2 = rng.exponential(size)
        frailty = rng.gamma(1.0 / spec.param, size)
        with np.errstate(divide="ignore"):
            u1 = np.exp(-np.log1p(e1 / frailty) / spec.param)
            u2 = np.exp(-np.log1p(e2 / frailty) / spec.param)
        return u1, u2

    rho = spec.param
    z1 = rng.normal(size)
    z2 = rho * z1 + math.sqrt(1.0 - rho * rho) * rng.normal(size)
    if spec.family is CopulaFamily.GAUSSIAN:
        return special.ndtr(z1), special.ndtr(z2)

    scale = np.sqrt(rng.chisquare(spec.df, size) / spec.df)
    return stats.t.cdf(z1 / scale, spec.df), stats.t.cdf(z2 / scale, spec.df)


def sample_copula_pair(spec: CopulaSpec, rng: RngStream) -> tuple[float, float]:
    """Draw a single (u1, u2) pair."""
    u1, u2 = sample_copula(spec, rng, 1)
    return float(u1[0]), float(u2[0])


def clayton_cdf(u1: ArrayLike, u2: ArrayLike, theta: float) -> ArrayLike:
    """Clayton copula C(u1, u2) = (u1^-t + u2^-t - 1)^(-1/t)."""
    if not theta > 0:
        raise ValueError(f"clayton theta must be > 0, got {theta}")
    a, b = np.broadcast_arrays(np.asarray(u1, dtype=float), np.asarray(u2, dtype=float))
    with np.errstate(divide="ignore", over="ignore"):
        s = a ** (-theta) + b ** (-theta) - 1.0
        c = s ** (-1.0 / theta)
    c = np.where((a == 0.0) | (b == 0.0), 0.0, c)
    c = np.clip(c, 0.0, np.minimum(a, b))
    if c.shape == ():
        return float(c)
    return c


def _clip_unit(u: np.ndarray) -> np.ndarray:
    return np.clip(u, 1e-15, 1.0 - 1e-15)


def copula_latents(
    spec: CopulaSpec, margin: Margin, rng: RngStream, size: int
) -> tuple[np.ndarray, np.ndarray]:
    """
    Copula draws pushed through the margin quantile function.

    A gaussian copula with normal margins is sampled as correlated normals
    directly, skipping the CDF/quantile round trip.
    """
    if spec.family is CopulaFamily.GAUSSIAN and margin is Margin.NORMAL:
        z1 = rng.normal(size)
        z2 = spec.param * z1 + math.sqrt(1.0 - spec.param**2) * rng.normal(size)
        return z1, z2
    u1, u2 = sample_copula(spec, rng, size)
    return margin_quantile(margin, _clip_unit(u1)), margin_quantile(margin, _clip_unit(u2))


def copula_correlation(
    spec: CopulaSpec,
    margin: Margin,
    n_pairs: int = CALIBRATION_PAIRS,
    seed: int = CALIBRATION_SEED,
) -> float:
    """Pearson correlation of margin-transformed copula draws on a fixed stream."""
    x, y = copula_latents(spec, margin, RngStream(seed, 0), n_pairs)
    return float(np.corrcoef(x, y)[0, 1])


_PARAM_BRACKETS = {
    CopulaFamily.GAUSSIAN: (1e-6, 0.999),
    CopulaFamily.STUDENT_T: (1e-6, 0.999),
    CopulaFamily.CLAYTON: (1e-4, 20.0),
}


def calibrate_copula_param(
    family: Union[CopulaFamily, str],
    target_corr: float,
    margins: Union[Margin, str],
    df: int = DEFAULT_T_DF,
    n_pairs: int = CALIBRATION_PAIRS,
    seed: int = CALIBRATION_SEED,
    tolerance: float = 0.01,
) -> CopulaSpec:
    """
    Find the copula parameter whose margin-transformed Pearson correlation
    matches target_corr.

    Bisection over the parameter; every evaluation reuses the same seeded
    stream so the evaluator is a deterministic function of the parameter.

    Raises:
        CalibrationError: the bracket does not straddle the target, or the
            achieved correlation misses it by more than `tolerance`.
    """
    family = CopulaFamily(family)
    margins = Margin(margins)
    if not 0.0 < target_corr < 1.0:
        raise ValueError(f"target correlation must lie in (0, 1), got {target_corr}")

    def gap(param: float) -> float:
        spec = CopulaSpec(family, param, df)
        return copula_correlation(spec, margins, n_pairs, seed) - target_corr

    lo, hi = _PARAM_BRACKETS[family]
    try:
        param = optimize.bisect(gap, lo, hi, xtol=1e-5, maxiter=100)
    except ValueError as exc:
        raise CalibrationError(
            f"cannot bracket {family.value} parameter for correlation {target_corr} "
            f"with {margins.value} margins in [{lo}, {hi}]"
        ) from exc

    spec = CopulaSpec(family, float(param), df)
    achieved = gap(spec.param) + target_corr
    if abs(achieved - target_corr) > tolerance:
        raise CalibrationError(
            f"{family.value} calibration reached {achieved:.4f}, target {target_corr}"
        )
    logger.info(
        "Calibrated %s copula (%s margins): param=%.5f corr=%.4f",
        family.value,
        margins.value,
        spec.param,
        achieved,
    )
    return spec
