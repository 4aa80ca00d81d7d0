"""
Experiment configuration and per-row results.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from pydantic import BaseModel, ValidationError, root_validator, validator

from app.calibration.quantile import QuantileMode
from app.simulation.forest import MIN_TRAINING_ROWS, REGRESSORS
from app.simulation.system import DEFAULT_INPUT_DIM, DEFAULT_INTERMEDIATE_DIM, NoiseSpec
from app.utils.config import (
    DEFAULT_CLUSTER_QUANTILE_MODE,
    DEFAULT_QUANTILE_MODE,
    DEFAULT_SEED,
    DEFAULT_TRIALS,
    DEFAULT_WORKERS,
)
from app.utils.errors import ConfigError

logger = logging.getLogger(__name__)

# Canonical method order; output rows follow it
METHODS = ("wcp", "aci", "end2end", "set_level", "cluster_level")
SWEEP_AXES = ("noise_std", "noise_mean", "data_size", "k_clusters")
DEFAULT_ALPHAS = [0.5, 0.6, 0.7, 0.8, 0.9]


class ExperimentConfig(BaseModel):
    """Everything a run needs; a run is deterministic given this object."""

    seed: int = DEFAULT_SEED
    trials: int = DEFAULT_TRIALS
    n_train: int = 500
    n_cal_upstream: int = 500
    n_cal_downstream: int = 500
    n_cal_end2end: int = 500
    n_test: int = 5000
    n_aci_stream: int = 1000
    alphas: List[float] = DEFAULT_ALPHAS
    noise: NoiseSpec = NoiseSpec()
    methods: List[str] = list(METHODS)
    k_clusters: Union[int, str] = "auto"
    quantile_mode: QuantileMode = DEFAULT_QUANTILE_MODE
    cluster_quantile_mode: QuantileMode = DEFAULT_CLUSTER_QUANTILE_MODE
    m: int = DEFAULT_INPUT_DIM
    l: int = DEFAULT_INTERMEDIATE_DIM
    nonlinear: bool = False
    regressor: str = "forest"
    n_estimators: int = 100
    min_samples_leaf: int = 5
    aci_gamma: float = 0.005
    aci_method: str = "simple"
    workers: int = DEFAULT_WORKERS
    output: Optional[Path] = None
    verbose: bool = False

    class Config:
        extra = "forbid"
        validate_all = True

    @validator(
        "trials", "n_cal_upstream", "n_cal_downstream", "n_cal_end2end", "n_test",
        "n_aci_stream", "m", "l", "n_estimators", "min_samples_leaf", "workers",
    )
    def positive_count(cls, value, field):
        if value < 1:
            raise ValueError(f"{field.name} must be at least 1, got {value}")
        return value

    @validator("n_train")
    def enough_training_rows(cls, value):
        if value < MIN_TRAINING_ROWS:
            raise ValueError(f"n_train must be at least {MIN_TRAINING_ROWS}, got {value}")
        return value

    @validator("alphas")
    def alphas_in_unit_interval(cls, value):
        if not value:
            raise ValueError("alphas must not be empty")
        for alpha in value:
            if not (0.0 < alpha < 1.0):
                raise ValueError(f"every alpha must lie in (0, 1), got {alpha}")
        return list(dict.fromkeys(value))

    @validator("methods")
    def known_methods(cls, value):
        unknown = sorted(set(value) - set(METHODS))
        if unknown:
            raise ValueError(f"unknown methods {unknown}; choose from {list(METHODS)}")
        if not value:
            raise ValueError("methods must not be empty")
        return [method for method in METHODS if method in value]

    @validator("k_clusters")
    def valid_cluster_count(cls, value):
        if isinstance(value, str):
            if value != "auto":
                raise ValueError(f"k_clusters must be a positive integer or 'auto', got {value!r}")
            return value
        if value < 1:
            raise ValueError(f"k_clusters must be at least 1, got {value}")
        return value

    @validator("regressor")
    def known_regressor(cls, value):
        if value not in REGRESSORS:
            raise ValueError(f"unknown regressor {value!r}; choose from {sorted(REGRESSORS)}")
        return value

    @validator("aci_gamma")
    def nonnegative_gamma(cls, value):
        if value < 0:
            raise ValueError(f"aci_gamma must be nonnegative, got {value}")
        return value

    @validator("aci_method")
    def known_aci_method(cls, value):
        if value not in ("simple", "momentum"):
            raise ValueError(f"aci_method must be 'simple' or 'momentum', got {value!r}")
        return value

    @root_validator(skip_on_failure=True)
    def clusters_fit_in_validation_sets(cls, values):
        k = values.get("k_clusters")
        if "cluster_level" in values.get("methods", []) and isinstance(k, int):
            smallest = min(values["n_cal_upstream"], values["n_cal_downstream"])
            if k > smallest:
                raise ValueError(f"k_clusters={k} exceeds the module validation size {smallest}")
        return values

    @property
    def cluster_count(self) -> Optional[int]:
        """Explicit cluster count, or None for ceil(n/10)."""
        return None if self.k_clusters == "auto" else int(self.k_clusters)


class TrialResult(BaseModel):
    """One output row: a (trial, method, alpha) evaluation on the system test split."""

    trial: int
    method: str
    alpha_target: float
    coverage: float
    avg_width_finite: Optional[float] = None
    finite_fraction: float
    q_hat: Optional[float] = None
    seed: int
    axis_name: Optional[str] = None
    axis_value: Optional[Union[float, str]] = None


def _format_errors(error: ValidationError) -> str:
    return "; ".join(
        f"{'.'.join(str(part) for part in e['loc'])}: {e['msg']}" for e in error.errors()
    )


def build_config(values: Dict[str, Any]) -> ExperimentConfig:
    """Validate a plain mapping; validation problems become ConfigError."""
    try:
        return ExperimentConfig(**values)
    except ValidationError as e:
        raise ConfigError(f"invalid experiment config: {_format_errors(e)}") from e


def override_config(cfg: ExperimentConfig, **updates) -> ExperimentConfig:
    """
    Apply overrides to a config and re-validate.

    `noise_std` and `noise_mean` update the matching NoiseSpec field; None values
    are ignored.
    """
    values = cfg.dict()
    noise = dict(values["noise"])
    for key, value in updates.items():
        if value is None:
            continue
        if key == "noise_std":
            noise["std"] = value
        elif key == "noise_mean":
            noise["mean"] = value
        else:
            values[key] = value
    values["noise"] = noise
    return build_config(values)


def load_config(path: Optional[Union[str, Path]] = None, **overrides) -> ExperimentConfig:
    """
    Load a flat JSON config file (optional) and apply overrides on top.

    Args:
        path: JSON file whose keys mirror ExperimentConfig fields
        **overrides: Values that take precedence over the file (None is skipped)

    Returns:
        Validated ExperimentConfig
    """
    if path is None:
        cfg = build_config({})
    else:
        try:
            cfg = ExperimentConfig.parse_file(path)
        except ValidationError as e:
            raise ConfigError(f"invalid config file {path}: {_format_errors(e)}") from e
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from e
        logger.info(f"Loaded experiment config from {path}")
    return override_config(cfg, **overrides)


def sweep_updates(axis: str, value) -> Dict[str, Any]:
    """Config overrides that set one sweep axis to `value`."""
    try:
        return _axis_updates(axis, value)
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"invalid value {value!r} for sweep axis {axis}") from e


def _axis_updates(axis: str, value) -> Dict[str, Any]:
    if axis == "noise_std":
        return {"noise_std": float(value)}
    if axis == "noise_mean":
        return {"noise_mean": float(value)}
    if axis == "data_size":
        size = int(value)
        return {
            "n_train": size,
            "n_cal_upstream": size,
            "n_cal_downstream": size,
            "n_cal_end2end": size,
        }
    if axis == "k_clusters":
        return {"k_clusters": value if value == "auto" else int(value)}
    raise ConfigError(f"unknown sweep axis {axis!r}; choose from {list(SWEEP_AXES)}")
