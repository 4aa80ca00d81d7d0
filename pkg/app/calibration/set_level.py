"""
Set-level system calibration from module-level validation data only.

Upstream errors are propagated through the downstream predictor (U scores),
downstream errors are measured on ground-truth intermediates (W scores), and the
interval half-width is the quantile-sum bound of the two marginal score sets.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from app.calibration.conformal import PredictionInterval
from app.calibration.quantile import (
    ExtendedReal,
    QuantileMode,
    ScoreSet,
    max_feasible_alpha,
    minimize_quantile_sum,
)
from app.calibration.validation import (
    DownstreamValidationSet,
    Predictor,
    UpstreamValidationSet,
    predict_checked,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SetLevelCalibrator:
    q_hat: ExtendedReal
    alpha: float
    beta_star: float
    n_upstream: int
    n_downstream: int
    mode: QuantileMode = QuantileMode.STRICT
    max_feasible_alpha: Optional[float] = None

    @property
    def is_finite(self) -> bool:
        return math.isfinite(self.q_hat)


def propagated_error_values(
    d: UpstreamValidationSet, f_hat: Predictor, g_hat: Predictor
) -> np.ndarray:
    """Row-aligned U scores (unsorted)."""
    y_pred = predict_checked(f_hat, d.X, d.intermediate_dim, "f_hat")
    through_prediction = predict_checked(g_hat, y_pred, 0, "g_hat")
    through_truth = predict_checked(g_hat, d.Y, 0, "g_hat")
    return np.abs(through_prediction - through_truth)


def downstream_error_values(d: DownstreamValidationSet, g_hat: Predictor) -> np.ndarray:
    """Row-aligned W scores (unsorted)."""
    return np.abs(predict_checked(g_hat, d.Y, 0, "g_hat") - d.Z)


def upstream_propagated_errors(
    d: UpstreamValidationSet, f_hat: Predictor, g_hat: Predictor
) -> ScoreSet:
    """
    U_i = |g_hat(f_hat(x_i)) - g_hat(y_i)| for every upstream validation row.

    Both predictors are treated as deterministic; stochastic ones must be seeded
    (or cached) before calibration.
    """
    return ScoreSet(propagated_error_values(d, f_hat, g_hat))


def downstream_errors(d: DownstreamValidationSet, g_hat: Predictor) -> ScoreSet:
    """W_j = |g_hat(y_j) - z_j| for every downstream validation row."""
    return ScoreSet(downstream_error_values(d, g_hat))


def fit_set_level(
    u: ScoreSet, w: ScoreSet, alpha: float, mode: QuantileMode = QuantileMode.STRICT
) -> SetLevelCalibrator:
    """
    Fit the set-level calibrator.

    Args:
        u: Propagated upstream error scores
        w: Downstream error scores
        alpha: Target coverage in (0, 1)
        mode: Quantile overflow handling for both terms

    Returns:
        SetLevelCalibrator; q_hat = +inf signals too few samples for alpha
    """
    bound = minimize_quantile_sum(u, w, alpha, mode)
    feasible = None
    if math.isinf(bound.value):
        feasible = max_feasible_alpha(u, w, mode)
        if feasible is None:
            logger.warning(
                f"Set-level bound is infinite at alpha={alpha} and at every level "
                f"(n_u={u.n}, n_w={w.n})"
            )
        else:
            logger.warning(
                f"Set-level bound is infinite at alpha={alpha} (n_u={u.n}, n_w={w.n}); "
                f"largest level with a finite bound is {feasible:.4f}"
            )
    return SetLevelCalibrator(
        q_hat=bound.value,
        alpha=float(alpha),
        beta_star=bound.beta,
        n_upstream=u.n,
        n_downstream=w.n,
        mode=QuantileMode(mode),
        max_feasible_alpha=feasible,
    )


def predict_set_level(c: SetLevelCalibrator, system_prediction: float) -> PredictionInterval:
    return PredictionInterval(center=float(system_prediction), half_width=c.q_hat)
