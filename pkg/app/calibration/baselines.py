"""
Downstream-only calibration baselines: weighted conformal prediction under
covariate shift and adaptive conformal inference.

Both calibrate the downstream module alone; evaluated against system-level
ground truth they under-cover whenever the upstream module is imperfect.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.calibration.conformal import PredictionInterval
from app.calibration.density_ratio import DensityRatioModel
from app.calibration.quantile import (
    INF,
    ExtendedReal,
    ScoreSet,
    WeightedScoreSet,
    empirical_quantile,
    weighted_order_statistic,
    weighted_quantile,
)

logger = logging.getLogger(__name__)

DEFAULT_GAMMA = 0.005
MOMENTUM_BANDWIDTH = 0.95


def wcp_interval(
    cal_scores: Sequence[float],
    cal_y,
    ratio: DensityRatioModel,
    y_test,
    g_prediction: float,
    alpha: float,
) -> PredictionInterval:
    """
    Weighted split-conformal interval for one test point.

    Args:
        cal_scores: Downstream calibration residuals W_j
        cal_y: Intermediate features y_j of the calibration rows
        ratio: Fitted density-ratio model
        y_test: Intermediate feature of the test point (an upstream prediction)
        g_prediction: Downstream prediction at y_test
        alpha: Target coverage

    Returns:
        Interval centered at g_prediction; the half-width may be +inf
    """
    ws = WeightedScoreSet(cal_scores, ratio.weights(cal_y), ratio.weight(y_test))
    return PredictionInterval(center=float(g_prediction), half_width=weighted_quantile(ws, alpha))


def wcp_half_widths(
    cal_scores: Sequence[float], cal_weights: Sequence[float], test_weights: Sequence[float], alpha: float
) -> np.ndarray:
    """Batch version of the weighted quantile: one half-width per test weight."""
    reference = WeightedScoreSet(cal_scores, cal_weights, 1.0)
    test_weights = np.asarray(test_weights, dtype=float)
    if not np.all(test_weights > 0):
        raise ValueError("test weights must be strictly positive")
    totals = reference.cumulative[-1] + test_weights
    return weighted_order_statistic(reference.scores, reference.cumulative, totals, alpha)


@dataclass
class AciState:
    """
    Online miscoverage tracker.

    alpha_t is the effective miscoverage level; the interval at step t uses the
    (1 - alpha_t) quantile of the calibration residuals.
    """

    alpha_t: float
    gamma: float
    target_miscoverage: float
    method: str = "simple"
    err_history: List[int] = field(default_factory=list)
    alpha_history: List[float] = field(default_factory=list)

    def update(self, err_t: int) -> float:
        self.alpha_history.append(self.alpha_t)
        self.err_history.append(int(err_t))
        if self.method == "momentum":
            t = len(self.err_history)
            w = MOMENTUM_BANDWIDTH ** np.arange(t, 0, -1, dtype=float)
            observed = float(np.dot(w / w.sum(), self.err_history))
        else:
            observed = float(err_t)
        self.alpha_t = float(np.clip(self.alpha_t + self.gamma * (self.target_miscoverage - observed), 0.0, 1.0))
        return self.alpha_t

    @property
    def miscoverage_rate(self) -> Optional[float]:
        return float(np.mean(self.err_history)) if self.err_history else None


def aci_half_width(cal_residuals: ScoreSet, alpha_t: float) -> ExtendedReal:
    """(1 - alpha_t) quantile; alpha_t = 0 gives +inf and alpha_t = 1 an empty-width interval."""
    coverage = 1.0 - alpha_t
    if coverage <= 0.0:
        return 0.0
    if coverage >= 1.0:
        return INF
    return empirical_quantile(cal_residuals, coverage)


def aci_run(
    residual_stream: Sequence[Tuple[float, float]],
    cal_residuals: ScoreSet,
    alpha_target: float,
    gamma: float = DEFAULT_GAMMA,
    initial_alpha: Optional[float] = None,
    method: str = "simple",
) -> Tuple[List[PredictionInterval], AciState]:
    """
    Adaptive conformal inference over a stream of (prediction, truth) pairs.

    Args:
        residual_stream: Module-level (prediction, truth) pairs in arrival order
        cal_residuals: Calibration residuals the quantiles are read from
        alpha_target: Target coverage in (0, 1)
        gamma: Step size (>= 0); 0 freezes alpha_t
        initial_alpha: Starting miscoverage level, default 1 - alpha_target
        method: "simple" or "momentum" error averaging

    Returns:
        The per-step intervals and the terminal tracker state
    """
    if not isinstance(cal_residuals, ScoreSet):
        cal_residuals = ScoreSet(cal_residuals)
    if gamma < 0:
        raise ValueError(f"gamma must be nonnegative, got {gamma}")
    if not (0.0 < alpha_target < 1.0):
        raise ValueError(f"alpha_target must lie in (0, 1), got {alpha_target}")
    if method not in ("simple", "momentum"):
        raise ValueError(f"method must be 'simple' or 'momentum', got {method!r}")
    stream = list(residual_stream)
    if not stream:
        raise ValueError("ACI needs a nonempty adaptation stream")

    target_miscoverage = 1.0 - alpha_target
    start = target_miscoverage if initial_alpha is None else float(initial_alpha)
    state = AciState(
        alpha_t=float(np.clip(start, 0.0, 1.0)),
        gamma=float(gamma),
        target_miscoverage=target_miscoverage,
        method=method,
    )
    intervals = []
    for prediction, truth in stream:
        interval = PredictionInterval(center=float(prediction), half_width=aci_half_width(cal_residuals, state.alpha_t))
        intervals.append(interval)
        state.update(0 if interval.contains(truth) else 1)

    logger.debug(
        f"ACI adapted over {len(stream)} steps: alpha_t {start:.4f} -> {state.alpha_t:.4f}, "
        f"stream miscoverage {state.miscoverage_rate:.4f}"
    )
    return intervals, state


def aci_frozen_half_width(state: AciState, cal_residuals: ScoreSet) -> ExtendedReal:
    """Half-width applied to system-level test points once adaptation has stopped."""
    if math.isnan(state.alpha_t):
        raise ValueError("ACI state has no valid alpha_t")
    return aci_half_width(cal_residuals, state.alpha_t)
