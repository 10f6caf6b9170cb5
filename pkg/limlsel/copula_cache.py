"""
Calibrated copula parameter cache.

Calibration runs a bisection over fixed-seed Monte Carlo correlations, so
each (family, margin, target) result is stored in the data directory and
reused by later studies.
"""

import logging
from datetime import datetime
from typing import Optional, Union

from .statlib import (
    CALIBRATION_PAIRS,
    CALIBRATION_SEED,
    DEFAULT_T_DF,
    CopulaFamily,
    CopulaSpec,
    Margin,
    calibrate_copula_param,
)
from .storage import load_json, save_json

logger = logging.getLogger(__name__)


class CopulaCache:
    """
    Manages the local calibration database.

    Entries are stored as:
    {
        "clayton|logistic|0.3|3|200000|20240607": {
            "param": 0.812,
            "updated_at": "2024-01-15T10:30:00"
        }
    }
    """

    FILENAME = "copula_params.json"

    def __init__(self):
        self._params: dict[str, dict] = {}
        self._load()

    def _load(self) -> None:
        """Load cached parameters from disk."""
        self._params = load_json(self.FILENAME, {})

    def _save(self) -> None:
        """Save cached parameters to disk."""
        save_json(self.FILENAME, self._params)

    @staticmethod
    def key(
        family: CopulaFamily,
        target: float,
        margin: Margin,
        df: int = DEFAULT_T_DF,
        n_pairs: int = CALIBRATION_PAIRS,
        seed: int = CALIBRATION_SEED,
    ) -> str:
        return f"{family.value}|{margin.value}|{target:g}|{df}|{n_pairs}|{seed}"

    def get(
        self, family, target, margin, df=DEFAULT_T_DF, n_pairs=CALIBRATION_PAIRS, seed=CALIBRATION_SEED
    ) -> Optional[CopulaSpec]:
        """
        Get a cached copula.

        Returns:
            CopulaSpec or None if this calibration was never stored
        """
        family, margin = CopulaFamily(family), Margin(margin)
        entry = self._params.get(self.key(family, target, margin, df, n_pairs, seed))
        if entry and "param" in entry:
            return CopulaSpec(family, float(entry["param"]), df)
        return None

    def put(
        self, spec: CopulaSpec, target: float, margin: Margin, n_pairs=CALIBRATION_PAIRS, seed=CALIBRATION_SEED
    ) -> None:
        self._params[self.key(spec.family, target, Margin(margin), spec.df, n_pairs, seed)] = {
            "param": spec.param,
            "updated_at": datetime.now().isoformat(),
        }
        self._save()

    def get_or_calibrate(
        self,
        family: Union[CopulaFamily, str],
        target: float,
        margin: Union[Margin, str],
        df: int = DEFAULT_T_DF,
        n_pairs: int = CALIBRATION_PAIRS,
        seed: int = CALIBRATION_SEED,
    ) -> CopulaSpec:
        """Cached copula, calibrating and storing it on a miss."""
        family, margin = CopulaFamily(family), Margin(margin)
        spec = self.get(family, target, margin, df, n_pairs, seed)
        if spec is not None:
            logger.debug("Copula cache hit: %s", self.key(family, target, margin, df, n_pairs, seed))
            return spec
        spec = calibrate_copula_param(family, target, margin, df, n_pairs, seed)
        self.put(spec, target, margin, n_pairs, seed)
        return spec

    def clear(self) -> None:
        self._params = {}
        self._save()
