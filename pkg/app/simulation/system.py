"""
Synthetic cascaded system: random linear oracles, an upstream module simulated
by additive Gaussian noise on the oracle output, and dataset materialization.
"""

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, validator

from app.calibration.validation import DownstreamValidationSet, Predictor, UpstreamValidationSet

logger = logging.getLogger(__name__)

DEFAULT_INPUT_DIM = 64
DEFAULT_INTERMEDIATE_DIM = 32
CSV_FLOAT_FORMAT = "%.17g"


class NoiseSpec(BaseModel):
    """Isotropic Gaussian noise added to upstream predictions."""

    mean: float = 0.0
    std: float = 1.0

    class Config:
        allow_mutation = False

    @validator("std")
    def std_nonnegative(cls, value):
        if value < 0:
            raise ValueError("noise std must be nonnegative")
        return value

    @property
    def is_zero(self) -> bool:
        return self.mean == 0.0 and self.std == 0.0


@dataclass(frozen=True)
class CascadeSystem:
    """
    Oracle pair (f, g) with f(x) = A x and g(y) = b . y (or b . tanh(y)).

    The learned downstream module is attached with `with_regressor`; the learned
    upstream module is materialized per dataset (see SimulatedDataset.f_hat).
    """

    A: np.ndarray
    b: np.ndarray
    noise: NoiseSpec
    nonlinear: bool
    seed: int
    g_hat: Optional[Predictor] = None

    @property
    def input_dim(self) -> int:
        return self.A.shape[1]

    @property
    def intermediate_dim(self) -> int:
        return self.A.shape[0]

    def oracle_f(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.A.T

    def oracle_g(self, Y) -> np.ndarray:
        Y = np.asarray(Y, dtype=float)
        return (np.tanh(Y) if self.nonlinear else Y) @ self.b

    def with_regressor(self, g_hat: Predictor) -> "CascadeSystem":
        return replace(self, g_hat=g_hat)


def gen_system(
    seed: int,
    m: int = DEFAULT_INPUT_DIM,
    l: int = DEFAULT_INTERMEDIATE_DIM,
    noise: Optional[NoiseSpec] = None,
    nonlinear: bool = False,
) -> CascadeSystem:
    """
    Draw a random cascade with fan-in scaled Gaussian weights.

    Args:
        seed: Seed for the oracle weights
        m: Input dimension
        l: Intermediate dimension
        noise: Upstream prediction noise (default: zero mean, unit std)
        nonlinear: Use z = b . tanh(y) for the downstream oracle

    Returns:
        CascadeSystem with A ~ N(0, 1/m) of shape (l, m) and b ~ N(0, 1/l)
    """
    if int(m) < 1 or int(l) < 1:
        raise ValueError(f"dimensions must be positive, got m={m}, l={l}")
    rng = np.random.default_rng(seed)
    A = rng.normal(0.0, 1.0 / np.sqrt(m), size=(l, m))
    b = rng.normal(0.0, 1.0 / np.sqrt(l), size=l)
    A.setflags(write=False)
    b.setflags(write=False)
    return CascadeSystem(A=A, b=b, noise=noise or NoiseSpec(), nonlinear=nonlinear, seed=seed)


class CachedUpstream:
    """
    The simulated upstream module f_hat: returns the noisy prediction drawn once
    per materialized row. Rows that were never materialized are rejected.
    """

    def __init__(self, X: np.ndarray, Y_hat: np.ndarray):
        self._X = X
        self._Y_hat = Y_hat
        self._index: Dict[bytes, int] = {}
        for i, row in enumerate(X):
            self._index.setdefault(row.tobytes(), i)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X is self._X:
            return self._Y_hat.copy()
        if X.ndim == 1:
            X = X.reshape(1, -1)
        try:
            rows = [self._index[row.tobytes()] for row in np.ascontiguousarray(X)]
        except KeyError:
            raise ValueError("f_hat queried on a row outside the materialized dataset")
        return self._Y_hat[rows].copy()


@dataclass(frozen=True)
class SimulatedDataset:
    X: np.ndarray
    Y: np.ndarray
    Y_hat: np.ndarray
    Z: np.ndarray

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def upstream(self) -> UpstreamValidationSet:
        return UpstreamValidationSet(self.X, self.Y)

    def downstream(self) -> DownstreamValidationSet:
        return DownstreamValidationSet(self.Y, self.Z)

    def f_hat(self) -> CachedUpstream:
        return CachedUpstream(self.X, self.Y_hat)


def gen_dataset(system: CascadeSystem, n: int, seed: int) -> SimulatedDataset:
    """
    Materialize n iid rows: X ~ N(0, I_m), Y = f(X), Y_hat = Y + noise, Z = g(Y).

    The noise realization is drawn here, once per row, from the dataset seed.
    """
    if int(n) < 1:
        raise ValueError(f"dataset size must be at least 1, got {n}")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, system.input_dim))
    Y = system.oracle_f(X)
    noise = system.noise.mean + system.noise.std * rng.standard_normal(Y.shape)
    Y_hat = Y + noise
    Z = system.oracle_g(Y)
    for arr in (X, Y, Y_hat, Z):
        arr.setflags(write=False)
    return SimulatedDataset(X=X, Y=Y, Y_hat=Y_hat, Z=Z)


def _column_names(m: int, l: int):
    return (
        [f"x_{i}" for i in range(m)]
        + [f"y_{i}" for i in range(l)]
        + [f"yhat_{i}" for i in range(l)]
        + ["z"]
    )


def save_dataset_csv(ds: SimulatedDataset, path: Union[str, Path]) -> Path:
    """Write a dataset as CSV with 17 significant digits (locale independent)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    m, l = ds.X.shape[1], ds.Y.shape[1]
    frame = pd.DataFrame(
        np.hstack((ds.X, ds.Y, ds.Y_hat, ds.Z.reshape(-1, 1))), columns=_column_names(m, l)
    )
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    logger.info(f"Saved {ds.n} rows to {path}")
    return path


def load_dataset_csv(path: Union[str, Path]) -> SimulatedDataset:
    frame = pd.read_csv(path, float_precision="round_trip")
    columns = list(frame.columns)
    x_cols = [c for c in columns if c.startswith("x_")]
    y_cols = [c for c in columns if c.startswith("y_")]
    yhat_cols = [c for c in columns if c.startswith("yhat_")]
    if "z" not in columns or not x_cols or not y_cols or len(yhat_cols) != len(y_cols):
        raise ValueError(f"{path} is not a dataset CSV")
    return SimulatedDataset(
        X=frame[x_cols].to_numpy(dtype=float),
        Y=frame[y_cols].to_numpy(dtype=float),
        Y_hat=frame[yhat_cols].to_numpy(dtype=float),
        Z=frame["z"].to_numpy(dtype=float),
    )
