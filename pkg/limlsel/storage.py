"""
File storage utilities.

Handles the data directory, JSON documents, study configuration files and
dataset CSV files.
"""

import csv
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
import psutil

from .dgp import ScenarioConfig, ScenarioId
from .errors import ConfigError
from .models import Criterion, OptimizerOptions, XiMode
from .modelspace import Dataset, TreatmentKind
from .statlib import CopulaFamily, Margin

logger = logging.getLogger(__name__)

DATA_DIR_ENV = "LIMLSEL_DATA_DIR"
PARALLELISM_ENV = "LIMLSEL_PARALLELISM"


def get_app_dir() -> Path:
    """Repository root (the folder holding the package)."""
    return Path(__file__).parent.parent


def get_data_dir() -> Path:
    """Data directory for cached values; LIMLSEL_DATA_DIR overrides <repo>/data."""
    override = os.environ.get(DATA_DIR_ENV)
    if override:
        return Path(override)
    return get_app_dir() / "data"


def ensure_data_dir() -> Path:
    """Ensure the data directory exists and return its path."""
    data_dir = get_data_dir()
    data_dir.mkdir(parents=True, exist_ok=True)
    return data_dir


def load_json(filename: str, default: Any = None) -> Any:
    """
    Load JSON data from a file in the data directory.

    Args:
        filename: Name of the JSON file (e.g., "copula_params.json")
        default: Default value if file doesn't exist or is invalid

    Returns:
        Parsed JSON data or default value
    """
    filepath = ensure_data_dir() / filename

    if not filepath.exists():
        return default if default is not None else {}

    try:
        with open(filepath, "r", encoding="utf-8") as f:
            return json.load(f)
    except (json.JSONDecodeError, IOError) as exc:
        logger.warning("Ignoring unreadable %s: %s", filepath, exc)
        return default if default is not None else {}


def save_json(filename: str, data: Any) -> bool:
    """
    Save data to a JSON file in the data directory.

    Returns:
        True if successful, False otherwise
    """
    try:
        write_json_file(ensure_data_dir() / filename, data)
        return True
    except IOError as exc:
        logger.warning("Could not save %s: %s", filename, exc)
        return False


def write_json_file(path: Union[str, Path], data: Any) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, ensure_ascii=False, default=str)


def read_json_file(path: Union[str, Path]) -> Any:
    """Read a JSON document; unreadable or malformed files raise ConfigError."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


# === Study configuration ===

METHODS = ["2sls", "2sri", "liml", "2sri_full", "liml_full"]

DEFAULT_CONFIG = {
    "scenario": "s1",
    "treatment_kind": "continuous",
    "copula": "gaussian",
    "margin": "normal",
    "copula_df": 3,
    "n": 300,
    "seed": 1,
    "reps": 200,
    "methods": list(METHODS),
    "criteria": ["laic", "lbic"],
    "xi_mode": "estimated",
    "output_dir": "results",
    "parallelism": None,  # LIMLSEL_PARALLELISM, else physical cores
    "gtol": 1e-6,
    "max_iter": 500,
}


def default_parallelism() -> int:
    """LIMLSEL_PARALLELISM if set, else the physical core count."""
    value = os.environ.get(PARALLELISM_ENV)
    if value:
        try:
            parsed = int(value)
        except ValueError:
            raise ConfigError(f"{PARALLELISM_ENV} must be an integer, got {value!r}") from None
        if parsed < 1:
            raise ConfigError(f"{PARALLELISM_ENV} must be >= 1, got {parsed}")
        return parsed
    return psutil.cpu_count(logical=False) or 1


@dataclass
class StudyConfig:
    """A resolved study configuration."""

    scenario: ScenarioConfig
    reps: int
    methods: list[str]
    criteria: list[Criterion]
    xi_mode: XiMode
    output_dir: Path
    parallelism: int
    opts: OptimizerOptions = field(default_factory=OptimizerOptions)

    def to_dict(self) -> dict:
        data = self.scenario.to_dict()
        data.update(
            {
                "reps": self.reps,
                "methods": list(self.methods),
                "criteria": [c.value for c in self.criteria],
                "xi_mode": self.xi_mode.value,
                "output_dir": str(self.output_dir),
                "parallelism": self.parallelism,
                "gtol": self.opts.gtol,
                "max_iter": self.opts.max_iter,
            }
        )
        return data


def _enum(name: str, cls, value):
    try:
        return cls(value)
    except ValueError:
        choices = ", ".join(m.value for m in cls)
        raise ConfigError(f"{name}: invalid value {value!r} (choose from {choices})") from None


def _int(name: str, value, minimum: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{name}: expected an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(f"{name}: must be >= {minimum}, got {value}")
    return value


def _float(name: str, value) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not value > 0:
        raise ConfigError(f"{name}: expected a positive number, got {value!r}")
    return float(value)


def _string_list(name: str, value, allowed: list[str]) -> list[str]:
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{name}: expected a non-empty list")
    for item in value:
        if item not in allowed:
            raise ConfigError(f"{name}: unknown entry {item!r} (choose from {', '.join(allowed)})")
    return list(dict.fromkeys(value))


def parse_study_config(raw: dict) -> StudyConfig:
    """
    Validate a flat configuration document against DEFAULT_CONFIG.

    Missing keys take their defaults; unknown keys and invalid values raise
    ConfigError naming the key.
    """
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    for key in raw:
        if key not in DEFAULT_CONFIG:
            raise ConfigError(f"unknown config key: {key}")
    config = {**DEFAULT_CONFIG, **raw}

    kind = _enum("treatment_kind", TreatmentKind, config["treatment_kind"])
    try:
        scenario = ScenarioConfig(
            scenario_id=_enum("scenario", ScenarioId, config["scenario"]),
            treatment_kind=kind,
            copula=_enum("copula", CopulaFamily, config["copula"]),
            margin=_enum("margin", Margin, config["margin"]),
            copula_df=_int("copula_df", config["copula_df"], 1),
            n=_int("n", config["n"], 1),
            seed=_int("seed", config["seed"], 0),
        )
    except ValueError as exc:
        raise ConfigError(f"copula: {exc}") from None

    methods = _string_list("methods", config["methods"], METHODS)
    if kind is TreatmentKind.DICHOTOMOUS and "2sls" in methods:
        logger.info("Dropping 2sls: it needs a continuous treatment")
        methods.remove("2sls")
        if not methods:
            raise ConfigError("methods: nothing left to run for a dichotomous treatment")
    criteria = [
        _enum("criteria", Criterion, c)
        for c in _string_list("criteria", config["criteria"], ["laic", "lbic"])
    ]

    parallelism = config["parallelism"]
    parallelism = default_parallelism() if parallelism is None else _int("parallelism", parallelism, 1)

    return StudyConfig(
        scenario=scenario,
        reps=_int("reps", config["reps"], 1),
        methods=methods,
        criteria=criteria,
        xi_mode=_enum("xi_mode", XiMode, config["xi_mode"]),
        output_dir=Path(str(config["output_dir"])),
        parallelism=parallelism,
        opts=OptimizerOptions(
            gtol=_float("gtol", config["gtol"]), max_iter=_int("max_iter", config["max_iter"], 1)
        ),
    )


def load_study_config(path: Optional[Union[str, Path]], overrides: Optional[dict] = None) -> StudyConfig:
    """Read a JSON study configuration (or defaults when path is None) and apply overrides."""
    raw = read_json_file(path) if path else {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: configuration must be a JSON object")
    raw = dict(raw)
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return parse_study_config(raw)


# === Dataset CSV ===

DATASET_FIELDS = ["y", "w", "x1", "x2", "x3", "z"]
LATENT_FIELDS = ["v", "u"]


def _format(value: float) -> str:
    return repr(float(value))


def write_dataset_csv(
    dataset: Dataset, path: Union[str, Path], include_latents: bool = False
) -> None:
    """
    Write `y,w,x1,x2,x3,z` (plus `v,u` with include_latents) with round-trip floats.
    """
    fieldnames = DATASET_FIELDS + (LATENT_FIELDS if include_latents else [])
    if include_latents and not dataset.has_latents:
        raise ValueError("dataset carries no latent columns")
    binary_w = dataset.treatment_kind is TreatmentKind.DICHOTOMOUS
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for i in range(dataset.n):
            row = {
                "y": int(dataset.y[i]),
                "w": int(dataset.w[i]) if binary_w else _format(dataset.w[i]),
            }
            for name in fieldnames[2:]:
                row[name] = _format(getattr(dataset, name)[i])
            writer.writerow(row)


def read_dataset_csv(
    path: Union[str, Path], treatment_kind: Optional[TreatmentKind] = None
) -> Dataset:
    """
    Read a dataset CSV.

    The treatment kind is inferred from w (all 0/1 means dichotomous) unless
    given. Layout and value problems raise ConfigError.
    """
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            reader = csv.DictReader(f)
            header = reader.fieldnames or []
            missing = [c for c in DATASET_FIELDS if c not in header]
            if missing:
                raise ConfigError(f"{path}: missing column(s) {', '.join(missing)}")
            extra = [c for c in header if c not in DATASET_FIELDS + LATENT_FIELDS]
            if extra:
                raise ConfigError(f"{path}: unknown column(s) {', '.join(extra)}")
            names = [c for c in DATASET_FIELDS + LATENT_FIELDS if c in header]
            columns: dict[str, list[float]] = {c: [] for c in names}
            for line, row in enumerate(reader, start=2):
                for name in names:
                    try:
                        columns[name].append(float(row[name]))
                    except (TypeError, ValueError):
                        raise ConfigError(f"{path}:{line}: bad value for {name}: {row[name]!r}") from None
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}") from None

    if not columns["y"]:
        raise ConfigError(f"{path}: no observations")
    arrays = {name: np.array(values) for name, values in columns.items()}
    if treatment_kind is None:
        binary = np.all((arrays["w"] == 0.0) | (arrays["w"] == 1.0))
        treatment_kind = TreatmentKind.DICHOTOMOUS if binary else TreatmentKind.CONTINUOUS
    try:
        return Dataset(
            arrays["y"],
            arrays["w"],
            arrays["x1"],
            arrays["x2"],
            arrays["x3"],
            arrays["z"],
            treatment_kind,
            v=arrays.get("v"),
            u=arrays.get("u"),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
