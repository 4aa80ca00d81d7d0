"""
Split conformal calibration and the interval/metric primitives shared by every
calibration method.
"""

import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence

import numpy as np

from app.calibration.quantile import (
    INF,
    ExtendedReal,
    QuantileMode,
    ScoreSet,
    empirical_quantile,
)


@dataclass(frozen=True)
class PredictionInterval:
    """Closed symmetric interval [center - half_width, center + half_width]."""

    center: float
    half_width: ExtendedReal

    def __post_init__(self):
        if math.isnan(self.center) or math.isnan(self.half_width) or self.half_width < 0:
            raise ValueError(f"invalid interval: center={self.center}, half_width={self.half_width}")

    @property
    def lower(self) -> float:
        return -INF if math.isinf(self.half_width) else self.center - self.half_width

    @property
    def upper(self) -> float:
        return INF if math.isinf(self.half_width) else self.center + self.half_width

    @property
    def is_finite(self) -> bool:
        return math.isfinite(self.half_width)

    def contains(self, z: float) -> bool:
        return abs(z - self.center) <= self.half_width


@dataclass(frozen=True)
class SplitCalibrator:
    half_width: ExtendedReal
    alpha: float
    n_cal: int
    mode: QuantileMode = QuantileMode.STRICT


@dataclass(frozen=True)
class CoverageReport:
    """
    Coverage and width summary for a batch of intervals.

    Widths are interval half-widths (the calibrated correction Q). avg_width is
    +inf as soon as one interval is unbounded; avg_width_finite averages the
    bounded ones and is None when there are none.
    """

    target_alpha: float
    empirical_coverage: float
    avg_width: ExtendedReal
    avg_width_finite: Optional[float]
    n_test: int
    finite_fraction: float
    upper_target: Optional[float] = None


def absolute_residuals(predictions: Sequence[float], truths: Sequence[float]) -> np.ndarray:
    """Nonconformity scores |z - prediction|."""
    predictions = np.asarray(predictions, dtype=float)
    truths = np.asarray(truths, dtype=float)
    if predictions.shape != truths.shape:
        raise ValueError(f"shape mismatch: {predictions.shape} vs {truths.shape}")
    return np.abs(truths - predictions)


def fit_split(
    residuals: ScoreSet, alpha: float, mode: QuantileMode = QuantileMode.STRICT
) -> SplitCalibrator:
    """
    Fit a split conformal calibrator on system-level validation residuals.

    Args:
        residuals: Calibration scores |Z_i - mu_hat(X_i)|
        alpha: Target coverage in (0, 1)
        mode: Quantile overflow handling

    Returns:
        Calibrator whose half-width is the empirical alpha-quantile of the residuals
    """
    if not isinstance(residuals, ScoreSet):
        residuals = ScoreSet(residuals)
    half_width = empirical_quantile(residuals, alpha, mode)
    return SplitCalibrator(half_width=half_width, alpha=alpha, n_cal=residuals.n, mode=mode)


def predict_interval(c: SplitCalibrator, prediction: float) -> PredictionInterval:
    return PredictionInterval(center=float(prediction), half_width=c.half_width)


def evaluate_arrays(
    centers: Sequence[float],
    half_widths: Sequence[float],
    truths: Sequence[float],
    alpha: float,
    upper_target: Optional[float] = None,
) -> CoverageReport:
    """
    Vectorized coverage evaluation; half_widths may be a scalar or contain +inf.
    """
    centers = np.asarray(centers, dtype=float).ravel()
    truths = np.asarray(truths, dtype=float).ravel()
    if centers.size != truths.size:
        raise ValueError(f"length mismatch: {centers.size} intervals vs {truths.size} truths")
    if centers.size == 0:
        raise ValueError("cannot evaluate an empty batch of intervals")
    half_widths = np.broadcast_to(np.asarray(half_widths, dtype=float), centers.shape)

    covered = np.abs(truths - centers) <= half_widths
    finite = np.isfinite(half_widths)
    n_finite = int(finite.sum())
    avg_width_finite = float(half_widths[finite].mean()) if n_finite else None
    avg_width = avg_width_finite if n_finite == centers.size else INF

    return CoverageReport(
        target_alpha=float(alpha),
        empirical_coverage=int(covered.sum()) / centers.size,
        avg_width=avg_width,
        avg_width_finite=avg_width_finite,
        n_test=int(centers.size),
        finite_fraction=n_finite / centers.size,
        upper_target=upper_target,
    )


def evaluate(
    intervals: Iterable[PredictionInterval], truths: Sequence[float], alpha: float
) -> CoverageReport:
    """
    Empirical coverage and average width of a list of intervals.

    Args:
        intervals: Prediction intervals, one per test point
        truths: Ground-truth outputs aligned with the intervals
        alpha: Target coverage the intervals were calibrated for

    Returns:
        CoverageReport with exact containment counts
    """
    intervals: List[PredictionInterval] = list(intervals)
    truths = list(truths)
    if len(intervals) != len(truths):
        raise ValueError(f"length mismatch: {len(intervals)} intervals vs {len(truths)} truths")
    return evaluate_arrays(
        [i.center for i in intervals],
        [i.half_width for i in intervals],
        truths,
        alpha,
    )


def split_upper_target(alpha: float, n_cal: int) -> float:
    """Upper end alpha + 1/(n+1) of the coverage window for distinct scores."""
    return min(1.0, alpha + 1.0 / (n_cal + 1))
