"""
Discriminative density-ratio estimation for covariate-shift weighting.

A logistic classifier separates source samples (label 0) from target samples
(label 1); the odds p/(1-p), corrected by the sample-size prior
n_source/n_target, estimate dP_target/dP_source.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

logger = logging.getLogger(__name__)

WEIGHT_CLIP = (1e-3, 1e3)


@dataclass(frozen=True)
class DensityRatioModel:
    coef: np.ndarray
    intercept: float
    mean: np.ndarray
    scale: np.ndarray
    n_source: int
    n_target: int
    clip: tuple = WEIGHT_CLIP

    @property
    def prior(self) -> float:
        return self.n_source / self.n_target

    def logits(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            y = y.reshape(1, -1) if y.size == self.coef.size else y.reshape(-1, 1)
        if y.shape[1] != self.coef.size:
            raise ValueError(f"expected {self.coef.size} features, got {y.shape[1]}")
        return ((y - self.mean) / self.scale) @ self.coef + self.intercept

    def weights(self, y) -> np.ndarray:
        """Clipped density-ratio weights w(y) > 0, one per row."""
        odds = np.exp(np.clip(self.logits(y), -700.0, 700.0))
        return np.clip(odds * self.prior, *self.clip)

    def weight(self, y) -> float:
        return float(self.weights(np.asarray(y, dtype=float).reshape(1, -1))[0])


def _log_loss_gradient(Z: np.ndarray, labels: np.ndarray, theta: np.ndarray, l2: float):
    margins = Z @ theta
    probs = expit(margins)
    grad = Z.T @ (probs - labels) / Z.shape[0]
    grad[1:] += l2 * theta[1:]
    return grad


def fit_density_ratio(
    source_y,
    target_y,
    seed: int = 0,
    l2: float = 1e-3,
    learning_rate: float = 0.5,
    max_iter: int = 2000,
    tol: float = 1e-7,
) -> DensityRatioModel:
    """
    Fit a regularized logistic source-vs-target discriminator by gradient descent.

    Args:
        source_y: (n_source, l) samples from the source distribution
        target_y: (n_target, l) samples from the target distribution
        seed: Seed for the initial coefficients
        l2: Ridge penalty on the (standardized) coefficients
        learning_rate: Gradient-descent step size
        max_iter: Iteration cap
        tol: Stop once the gradient norm falls below this value

    Returns:
        DensityRatioModel whose weights(y) estimate dP_target/dP_source
    """
    source = np.asarray(source_y, dtype=float)
    target = np.asarray(target_y, dtype=float)
    source = source.reshape(-1, 1) if source.ndim == 1 else source
    target = target.reshape(-1, 1) if target.ndim == 1 else target
    if source.shape[0] == 0 or target.shape[0] == 0:
        raise ValueError("density-ratio estimation needs nonempty source and target samples")
    if source.shape[1] != target.shape[1]:
        raise ValueError(f"dimension mismatch: source {source.shape[1]} vs target {target.shape[1]}")

    pooled = np.vstack((source, target))
    mean = pooled.mean(axis=0)
    scale = pooled.std(axis=0)
    scale[scale == 0] = 1.0
    Z = np.hstack((np.ones((pooled.shape[0], 1)), (pooled - mean) / scale))
    labels = np.concatenate((np.zeros(source.shape[0]), np.ones(target.shape[0])))

    rng = np.random.default_rng(seed)
    theta = rng.normal(scale=0.01, size=Z.shape[1])
    for iteration in range(max_iter):
        grad = _log_loss_gradient(Z, labels, theta, l2)
        theta -= learning_rate * grad
        if np.linalg.norm(grad) < tol:
            break
    logger.debug(f"Density-ratio discriminator stopped after {iteration + 1} iterations")

    model = DensityRatioModel(
        coef=theta[1:].copy(),
        intercept=float(theta[0]),
        mean=mean,
        scale=scale,
        n_source=source.shape[0],
        n_target=target.shape[0],
    )
    clipped = np.mean(np.isin(model.weights(target), WEIGHT_CLIP))
    if clipped > 0.05:
        logger.warning(f"{clipped:.1%} of target density-ratio weights hit the clip bounds")
    return model
