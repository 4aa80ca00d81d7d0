"""
Empirical and weighted quantiles of nonconformity scores.

Quantiles follow the order-statistic rule used by split conformal prediction:
Q_p(S) = S_(ceil((n+1)p)) when that index is at most n, otherwise +inf
("strict" mode) or the largest score ("clamped" mode).
"""

import math
from enum import Enum
from typing import Iterable, NamedTuple, Optional

import numpy as np

# Extended reals are plain floats; math.inf marks the overflow branch.
ExtendedReal = float
INF: ExtendedReal = math.inf

# p within this many ulps of k/(n+1) is read as exactly k/(n+1).
_INDEX_ULPS = 8
# Tolerance on normalized cumulative weights.
_WEIGHT_EPS = 1e-12


class QuantileMode(str, Enum):
    STRICT = "strict"
    CLAMPED = "clamped"


def _check_probability(p: float, name: str = "p") -> float:
    p = float(p)
    if not (0.0 < p < 1.0):
        raise ValueError(f"{name} must lie in (0, 1), got {p}")
    return p


class ScoreSet:
    """
    Immutable, ascending collection of nonnegative nonconformity scores.

    Ties are kept as-is (stable sort).
    """

    __slots__ = ("_scores",)

    def __init__(self, scores: Iterable[float]):
        arr = np.array(scores, dtype=float).ravel()
        if arr.size == 0:
            raise ValueError("ScoreSet requires at least one score")
        if not np.all(np.isfinite(arr)):
            raise ValueError("ScoreSet scores must be finite")
        if np.any(arr < 0):
            raise ValueError("ScoreSet scores must be nonnegative")
        arr = np.sort(arr, kind="stable")
        arr.setflags(write=False)
        self._scores = arr

    @property
    def scores(self) -> np.ndarray:
        return self._scores

    @property
    def n(self) -> int:
        return int(self._scores.size)

    def __len__(self) -> int:
        return self.n

    def __repr__(self) -> str:
        return f"ScoreSet(n={self.n}, max={self._scores[-1]:.4g})"

    def quantile(self, p: float, mode: QuantileMode = QuantileMode.STRICT) -> ExtendedReal:
        return empirical_quantile(self, p, mode)


def _ceil_indices(n: int, ps: np.ndarray) -> np.ndarray:
    positions = (n + 1) * np.asarray(ps, dtype=float)
    nearest = np.rint(positions)
    # p within a few ulps of k/(n+1) is round-off and maps to k, not k+1.
    snap = np.abs(positions - nearest) <= _INDEX_ULPS * np.finfo(float).eps * (n + 1)
    return np.maximum(1, np.where(snap, nearest, np.ceil(positions)).astype(int))


def order_index(n: int, p: float) -> int:
    """1-based order-statistic index ceil((n+1)p), at least 1."""
    return int(_ceil_indices(n, np.asarray([p], dtype=float))[0])


def _order_statistic(sorted_scores: np.ndarray, p: float, mode: QuantileMode) -> ExtendedReal:
    # p may equal 1 here: the quantile-sum bound evaluates the closed beta range.
    n = sorted_scores.size
    k = order_index(n, p)
    if k <= n:
        return float(sorted_scores[k - 1])
    if QuantileMode(mode) is QuantileMode.CLAMPED:
        return float(sorted_scores[-1])
    return INF


def _order_statistics(sorted_scores: np.ndarray, ps: np.ndarray, mode: QuantileMode) -> np.ndarray:
    """Vectorized _order_statistic over an array of probabilities in (0, 1]."""
    n = sorted_scores.size
    ks = _ceil_indices(n, ps)
    overflow = sorted_scores[-1] if QuantileMode(mode) is QuantileMode.CLAMPED else INF
    padded = np.append(sorted_scores, overflow)
    return padded[np.minimum(ks, n + 1) - 1]


def empirical_quantile(
    s: ScoreSet, p: float, mode: QuantileMode = QuantileMode.STRICT
) -> ExtendedReal:
    """
    Empirical quantile of a score set at probability p.

    Args:
        s: Score set (nonempty by construction)
        p: Probability in (0, 1); values at or outside the bounds are rejected
        mode: STRICT returns +inf on index overflow, CLAMPED returns the max score

    Returns:
        The ceil((n+1)p)-th order statistic, or the overflow value
    """
    p = _check_probability(p)
    return _order_statistic(s.scores, p, mode)


class WeightedScoreSet:
    """
    Scores with positive density-ratio weights plus the weight of a test point
    whose score is +inf.
    """

    __slots__ = ("_scores", "_weights", "_test_weight", "_cumulative", "_total")

    def __init__(self, scores: Iterable[float], weights: Iterable[float], test_weight: float):
        scores = np.array(scores, dtype=float).ravel()
        weights = np.array(weights, dtype=float).ravel()
        test_weight = float(test_weight)
        if scores.size == 0:
            raise ValueError("WeightedScoreSet requires at least one score")
        if scores.size != weights.size:
            raise ValueError(
                f"scores and weights differ in length ({scores.size} vs {weights.size})"
            )
        if not np.all(np.isfinite(scores)):
            raise ValueError("WeightedScoreSet scores must be finite")
        if not (np.all(np.isfinite(weights)) and np.all(weights > 0)):
            raise ValueError("weights must be finite and strictly positive")
        if not (math.isfinite(test_weight) and test_weight > 0):
            raise ValueError("test_weight must be finite and strictly positive")

        order = np.argsort(scores, kind="stable")
        self._scores = scores[order]
        self._weights = weights[order]
        self._test_weight = test_weight
        self._cumulative = np.cumsum(self._weights)
        self._total = float(self._cumulative[-1] + test_weight)
        for arr in (self._scores, self._weights, self._cumulative):
            arr.setflags(write=False)

        normalized_sum = float(self._cumulative[-1] / self._total + test_weight / self._total)
        if not math.isfinite(normalized_sum) or abs(normalized_sum - 1.0) > 1e-9:
            raise ValueError(f"normalized weights sum to {normalized_sum}, not 1")

    @property
    def scores(self) -> np.ndarray:
        return self._scores

    @property
    def weights(self) -> np.ndarray:
        return self._weights

    @property
    def test_weight(self) -> float:
        return self._test_weight

    @property
    def cumulative(self) -> np.ndarray:
        """Running sum of the calibration weights in score order."""
        return self._cumulative

    @property
    def total(self) -> float:
        """Calibration weight plus the test weight."""
        return self._total

    @property
    def normalized_weights(self) -> np.ndarray:
        return self._weights / self._total


def weighted_order_statistic(
    sorted_scores: np.ndarray, cumulative: np.ndarray, total, p: float
) -> np.ndarray:
    """
    Smallest score whose normalized cumulative weight reaches p.

    `total` may be an array (one normalizer per test point); the result then has
    the same shape. Points where only the test mass at +inf reaches p get +inf.
    """
    total = np.asarray(total, dtype=float)
    targets = p * total - _WEIGHT_EPS * total
    idx = np.searchsorted(cumulative, targets, side="left")
    padded = np.append(sorted_scores, INF)
    return padded[np.minimum(idx, sorted_scores.size)]


def weighted_quantile(ws: WeightedScoreSet, p: float) -> ExtendedReal:
    """
    Weighted quantile with the test point's mass placed at +inf.

    Args:
        ws: Weighted score set
        p: Probability in (0, 1)

    Returns:
        Smallest score s with normalized cumulative weight of {scores <= s} >= p,
        or +inf when only the test-point mass reaches p
    """
    p = _check_probability(p)
    value = weighted_order_statistic(ws.scores, ws.cumulative, ws.total, p)
    return float(value)


class SumBound(NamedTuple):
    value: ExtendedReal
    beta: float


def _beta_candidates(n_u: int, n_w: int, alpha: float) -> np.ndarray:
    ks = np.arange(1, n_u + 2) / (n_u + 1)
    js = 1.0 + alpha - np.arange(1, n_w + 2) / (n_w + 1)
    points = np.concatenate(([alpha], ks, js))
    points = points[(points >= alpha) & (points < 1.0)]
    points = np.unique(points)
    # Midpoints cover the open pieces between breakpoints, including the last one below 1.
    upper = np.append(points[1:], 1.0)
    mids = 0.5 * (points + upper)
    return np.unique(np.concatenate((points, mids)))


def minimize_quantile_sum(
    u: ScoreSet, w: ScoreSet, alpha: float, mode: QuantileMode = QuantileMode.STRICT
) -> SumBound:
    """
    Minimize Q_beta(u) + Q_{1-beta+alpha}(w) over beta in [alpha, 1).

    Both terms are step functions of beta, so scanning every breakpoint together
    with the midpoints between consecutive breakpoints is exhaustive. Ties in the
    minimum resolve to the smallest beta.

    Args:
        u: Upstream (propagated) error scores
        w: Downstream error scores
        alpha: Target coverage in (0, 1)
        mode: Quantile overflow handling for both terms

    Returns:
        SumBound(value, beta) with value possibly +inf
    """
    alpha = _check_probability(alpha, "alpha")
    betas = _beta_candidates(u.n, w.n, alpha)
    first = _order_statistics(u.scores, betas, mode)
    second = _order_statistics(w.scores, np.minimum(1.0, 1.0 - betas + alpha), mode)
    totals = first + second
    best = int(np.argmin(totals))
    return SumBound(float(totals[best]), float(betas[best]))


def quantile_sum_bound(
    u: ScoreSet, w: ScoreSet, alpha: float, mode: QuantileMode = QuantileMode.STRICT
) -> ExtendedReal:
    """Upper bound on the alpha-quantile of U + W from the two marginal score sets."""
    return minimize_quantile_sum(u, w, alpha, mode).value


def max_feasible_alpha(
    u: ScoreSet, w: ScoreSet, mode: QuantileMode = QuantileMode.STRICT
) -> Optional[float]:
    """
    Largest coverage level for which the quantile-sum bound is finite.

    In strict mode both terms are finite iff some beta satisfies
    beta <= n_u/(n_u+1) and 1 - beta + alpha <= n_w/(n_w+1), which holds up to
    alpha = 1 - 1/(n_u+1) - 1/(n_w+1). Returns None when that level is not
    positive. Clamped bounds are finite at every level, so 1.0 is returned.
    """
    if QuantileMode(mode) is QuantileMode.CLAMPED:
        return 1.0
    level = 1.0 - 1.0 / (u.n + 1) - 1.0 / (w.n + 1)
    return level if level > 0.0 else None
