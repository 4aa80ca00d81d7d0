"""
Downstream regressors: an abstract interface, a from-scratch random forest
(the default) and a scikit-learn adapter.
"""

import logging
import math
from abc import ABC, abstractmethod
from typing import List, Optional

import numpy as np

from app.calibration.validation import DownstreamValidationSet

logger = logging.getLogger(__name__)

MIN_TRAINING_ROWS = 10


class Regressor(ABC):
    """Downstream predictor R^l -> R; deterministic after fit."""

    n_features_: Optional[int] = None

    @abstractmethod
    def fit(self, Y: np.ndarray, z: np.ndarray) -> "Regressor":
        ...

    @abstractmethod
    def _predict(self, Y: np.ndarray) -> np.ndarray:
        ...

    def predict(self, Y) -> np.ndarray:
        if self.n_features_ is None:
            raise RuntimeError(f"{type(self).__name__} is not fitted")
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 1:
            Y = Y.reshape(1, -1)
        if Y.shape[1] != self.n_features_:
            raise ValueError(f"expected {self.n_features_} features, got {Y.shape[1]}")
        return self._predict(Y)


class _RegressionTree:
    """Array-backed CART tree grown with variance-reduction splits."""

    def __init__(self, max_features: int, min_samples_leaf: int, max_depth: Optional[int], rng: np.random.Generator):
        self.max_features = max_features
        self.min_samples_leaf = min_samples_leaf
        self.max_depth = max_depth
        self.rng = rng
        self.feature: List[int] = []
        self.threshold: List[float] = []
        self.left: List[int] = []
        self.right: List[int] = []
        self.value: List[float] = []

    def _new_node(self, value: float) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.value) - 1

    def _best_split(self, X: np.ndarray, y: np.ndarray):
        n, n_features = X.shape
        leaf = self.min_samples_leaf
        features = self.rng.choice(n_features, size=min(self.max_features, n_features), replace=False)
        order = np.argsort(X[:, features], axis=0, kind="stable")
        xs = np.take_along_axis(X[:, features], order, axis=0)
        ys = y[order]

        left_n = np.arange(1, n)[:, np.newaxis]
        right_n = n - left_n
        left_sum = np.cumsum(ys, axis=0)[:-1]
        left_sq = np.cumsum(ys * ys, axis=0)[:-1]
        total_sum, total_sq = ys[:, 0].sum(), (ys[:, 0] ** 2).sum()
        sse = (left_sq - left_sum ** 2 / left_n) + (
            (total_sq - left_sq) - (total_sum - left_sum) ** 2 / right_n
        )

        valid = (left_n >= leaf) & (right_n >= leaf) & (xs[1:] > xs[:-1])
        if not valid.any():
            return None
        sse = np.where(valid, sse, np.inf)
        pos, col = np.unravel_index(int(np.argmin(sse)), sse.shape)
        parent_sse = total_sq - total_sum ** 2 / n
        if not sse[pos, col] < parent_sse - 1e-12 * max(1.0, abs(parent_sse)):
            return None
        threshold = 0.5 * (xs[pos, col] + xs[pos + 1, col])
        return int(features[col]), float(threshold)

    def fit(self, X: np.ndarray, y: np.ndarray) -> "_RegressionTree":
        root = self._new_node(float(y.mean()))
        stack = [(root, np.arange(X.shape[0]), 0)]
        while stack:
            node, rows, depth = stack.pop()
            if rows.size < 2 * self.min_samples_leaf:
                continue
            if self.max_depth is not None and depth >= self.max_depth:
                continue
            split = self._best_split(X[rows], y[rows])
            if split is None:
                continue
            feature, threshold = split
            goes_left = X[rows, feature] <= threshold
            left_rows, right_rows = rows[goes_left], rows[~goes_left]
            left = self._new_node(float(y[left_rows].mean()))
            right = self._new_node(float(y[right_rows].mean()))
            self.feature[node], self.threshold[node] = feature, threshold
            self.left[node], self.right[node] = left, right
            stack.append((right, right_rows, depth + 1))
            stack.append((left, left_rows, depth + 1))

        self.feature = np.asarray(self.feature, dtype=int)
        self.threshold = np.asarray(self.threshold, dtype=float)
        self.left = np.asarray(self.left, dtype=int)
        self.right = np.asarray(self.right, dtype=int)
        self.value = np.asarray(self.value, dtype=float)
        self.rng = None
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        nodes = np.zeros(X.shape[0], dtype=int)
        active = self.feature[nodes] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            current = nodes[idx]
            go_left = X[idx, self.feature[current]] <= self.threshold[current]
            nodes[idx] = np.where(go_left, self.left[current], self.right[current])
            active = self.feature[nodes] >= 0
        return self.value[nodes]


class RandomForestRegressor(Regressor):
    """
    Bagged regression trees.

    Each tree draws its bootstrap sample and feature subsets from its own stream
    seeded by (seed, tree index); predictions average the trees.
    """

    def __init__(
        self,
        n_estimators: int = 100,
        max_features: Optional[int] = None,
        min_samples_leaf: int = 5,
        max_depth: Optional[int] = None,
        bootstrap: bool = True,
        seed: int = 0,
    ):
        if n_estimators < 1:
            raise ValueError("n_estimators must be at least 1")
        if min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be at least 1")
        self.n_estimators = n_estimators
        self.max_features = max_features
        self.min_samples_leaf = min_samples_leaf
        self.max_depth = max_depth
        self.bootstrap = bootstrap
        self.seed = seed
        self.trees_: List[_RegressionTree] = []

    def fit(self, Y: np.ndarray, z: np.ndarray) -> "RandomForestRegressor":
        Y = np.asarray(Y, dtype=float)
        z = np.asarray(z, dtype=float).ravel()
        n, l = Y.shape
        max_features = self.max_features or max(1, math.ceil(l / 3))
        self.trees_ = []
        for t in range(self.n_estimators):
            rng = np.random.default_rng([self.seed, t])
            rows = rng.integers(0, n, size=n) if self.bootstrap else np.arange(n)
            tree = _RegressionTree(max_features, self.min_samples_leaf, self.max_depth, rng)
            self.trees_.append(tree.fit(Y[rows], z[rows]))
        self.n_features_ = l
        return self

    def _predict(self, Y: np.ndarray) -> np.ndarray:
        total = np.zeros(Y.shape[0])
        for tree in self.trees_:
            total += tree.predict(Y)
        return total / len(self.trees_)


class SklearnForestRegressor(Regressor):
    """scikit-learn RandomForestRegressor behind the Regressor interface."""

    def __init__(self, n_estimators: int = 100, min_samples_leaf: int = 5, seed: int = 0):
        from sklearn.ensemble import RandomForestRegressor as _SkForest

        self.model = _SkForest(
            n_estimators=n_estimators,
            min_samples_leaf=min_samples_leaf,
            bootstrap=True,
            random_state=seed,
            n_jobs=1,
        )

    def fit(self, Y: np.ndarray, z: np.ndarray) -> "SklearnForestRegressor":
        Y = np.asarray(Y, dtype=float)
        self.model.set_params(max_features=max(1, math.ceil(Y.shape[1] / 3)))
        self.model.fit(Y, np.asarray(z, dtype=float).ravel())
        self.n_features_ = Y.shape[1]
        return self

    def _predict(self, Y: np.ndarray) -> np.ndarray:
        return self.model.predict(Y)


REGRESSORS = {
    "forest": RandomForestRegressor,
    "sklearn": SklearnForestRegressor,
}


def fit_regressor(
    train: DownstreamValidationSet,
    seed: int = 0,
    kind: str = "forest",
    n_estimators: int = 100,
    min_samples_leaf: int = 5,
) -> Regressor:
    """
    Train the downstream module on ground-truth (Y, Z) pairs.

    Args:
        train: Downstream training pairs (at least 10 rows)
        seed: Seed for bootstrap and feature sampling
        kind: "forest" (NumPy, default) or "sklearn"
        n_estimators: Number of trees
        min_samples_leaf: Minimum rows per leaf

    Returns:
        Fitted Regressor
    """
    if train.n < MIN_TRAINING_ROWS:
        raise ValueError(f"need at least {MIN_TRAINING_ROWS} training rows, got {train.n}")
    if kind not in REGRESSORS:
        raise ValueError(f"unknown regressor {kind!r}; choose from {sorted(REGRESSORS)}")
    regressor = REGRESSORS[kind](n_estimators=n_estimators, min_samples_leaf=min_samples_leaf, seed=seed)
    logger.debug(f"Fitting {kind} regressor on {train.n} rows")
    return regressor.fit(train.Y, train.Z)
