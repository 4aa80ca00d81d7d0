"""
Module-level validation sets and the predictor interface the calibrators consume.
"""

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from app.utils.errors import NumericalError


class Predictor(Protocol):
    """Anything with a deterministic batch `predict`."""

    def predict(self, inputs: np.ndarray) -> np.ndarray:
        ...


def _as_matrix(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be two-dimensional, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class UpstreamValidationSet:
    """Pairs (x_i, y_i) drawn from the upstream module's distribution P_{X,Y}."""

    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = _as_matrix(self.X, "X")
        Y = _as_matrix(self.Y, "Y")
        if X.shape[0] == 0:
            raise ValueError("upstream validation set is empty")
        if X.shape[0] != Y.shape[0]:
            raise ValueError(f"row count mismatch: X has {X.shape[0]}, Y has {Y.shape[0]}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def input_dim(self) -> int:
        return self.X.shape[1]

    @property
    def intermediate_dim(self) -> int:
        return self.Y.shape[1]


@dataclass(frozen=True)
class DownstreamValidationSet:
    """Pairs (y_j, z_j) drawn from the downstream module's distribution P_{Y,Z}."""

    Y: np.ndarray
    Z: np.ndarray

    def __post_init__(self):
        Y = _as_matrix(self.Y, "Y")
        Z = np.asarray(self.Z, dtype=float).ravel()
        if Y.shape[0] == 0:
            raise ValueError("downstream validation set is empty")
        if Y.shape[0] != Z.shape[0]:
            raise ValueError(f"row count mismatch: Y has {Y.shape[0]}, Z has {Z.shape[0]}")
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "Z", Z)

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def intermediate_dim(self) -> int:
        return self.Y.shape[1]


def predict_checked(predictor: Predictor, inputs: np.ndarray, out_dim: int, name: str) -> np.ndarray:
    """
    Run a batch prediction and verify its shape.

    out_dim of 0 means a scalar output per row.
    """
    outputs = np.asarray(predictor.predict(inputs), dtype=float)
    n = inputs.shape[0]
    if out_dim == 0:
        outputs = outputs.reshape(-1) if outputs.ndim == 2 and outputs.shape[1] == 1 else outputs
        if outputs.shape != (n,):
            raise ValueError(f"{name} returned shape {outputs.shape}, expected ({n},)")
    elif outputs.shape != (n, out_dim):
        raise ValueError(f"{name} returned shape {outputs.shape}, expected ({n}, {out_dim})")
    if not np.all(np.isfinite(outputs)):
        raise NumericalError(f"{name} produced non-finite predictions")
    return outputs
