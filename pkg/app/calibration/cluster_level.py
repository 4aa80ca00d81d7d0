"""
Cluster-level system calibration.

Each module validation set is clustered on its intermediate values Y; every
upstream cluster is matched to the downstream cluster with the nearest centroid,
and the quantile-sum bound is computed per matched pair. Test points are routed
to an upstream cluster through the nearest centroid of their predicted
intermediate f_hat(x).
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from app.calibration.clustering import (
    ClusterModel,
    assign_cluster,
    assign_clusters,
    kmeans,
    match_clusters,
)
from app.calibration.conformal import PredictionInterval
from app.calibration.quantile import QuantileMode, ScoreSet, minimize_quantile_sum
from app.calibration.set_level import downstream_error_values, fit_set_level, propagated_error_values
from app.calibration.validation import (
    DownstreamValidationSet,
    Predictor,
    UpstreamValidationSet,
    predict_checked,
)

logger = logging.getLogger(__name__)

# Smallest cluster that gets its own bound
MIN_CLUSTER_ROWS = 2
SAMPLES_PER_CLUSTER = 10


def default_cluster_count(n: int) -> int:
    """ceil(n/10): about ten validation samples per cluster."""
    return max(1, math.ceil(n / SAMPLES_PER_CLUSTER))


@dataclass(frozen=True)
class ClusterPartition:
    """Alpha-independent part of a cluster-level fit: clusters, matching and scores."""

    f_clusters: ClusterModel
    g_clusters: ClusterModel
    mapping: np.ndarray
    u_scores: np.ndarray
    w_scores: np.ndarray

    def pair_scores(self, i: int) -> Tuple[np.ndarray, np.ndarray]:
        j = int(self.mapping[i])
        return (
            self.u_scores[self.f_clusters.assignments == i],
            self.w_scores[self.g_clusters.assignments == j],
        )


@dataclass(frozen=True)
class ClusterCalibrator:
    f_clusters: ClusterModel
    g_clusters: ClusterModel
    mapping: np.ndarray
    per_pair_q: np.ndarray
    per_pair_beta: np.ndarray
    alpha: float
    fallback_q: float
    mode: QuantileMode
    fallback_pairs: Tuple[int, ...] = ()

    def half_width(self, cluster: int) -> float:
        return float(self.per_pair_q[cluster])


def fit_cluster_partition(
    df: UpstreamValidationSet,
    dg: DownstreamValidationSet,
    f_hat: Predictor,
    g_hat: Predictor,
    k_f: Optional[int] = None,
    k_g: Optional[int] = None,
    seed: int = 0,
) -> ClusterPartition:
    """
    Cluster both validation sets on Y, match centroids and compute U/W scores.

    Cluster counts default to ceil(n/10) per set.
    """
    if df.intermediate_dim != dg.intermediate_dim:
        raise ValueError(
            f"intermediate dimension mismatch: {df.intermediate_dim} vs {dg.intermediate_dim}"
        )
    k_f = default_cluster_count(df.n) if k_f is None else int(k_f)
    k_g = default_cluster_count(dg.n) if k_g is None else int(k_g)

    u_scores = propagated_error_values(df, f_hat, g_hat)
    w_scores = downstream_error_values(dg, g_hat)

    f_clusters = kmeans(df.Y, k_f, seed=seed)
    g_clusters = kmeans(dg.Y, k_g, seed=seed + 1)
    mapping = match_clusters(f_clusters.centroids, g_clusters.centroids)
    logger.debug(f"Clustered module data into {k_f} upstream and {k_g} downstream clusters")
    return ClusterPartition(f_clusters, g_clusters, mapping, u_scores, w_scores)


def calibrate_partition(
    partition: ClusterPartition, alpha: float, mode: QuantileMode = QuantileMode.CLAMPED
) -> ClusterCalibrator:
    """
    Per-pair quantile-sum bounds at level alpha.

    Pairs where either cluster has fewer than two rows use the set-level bound;
    so do infinite per-pair bounds in strict mode.
    """
    mode = QuantileMode(mode)
    fallback = fit_set_level(ScoreSet(partition.u_scores), ScoreSet(partition.w_scores), alpha, mode)

    k_f = partition.f_clusters.k
    per_pair_q = np.empty(k_f)
    per_pair_beta = np.empty(k_f)
    fallback_pairs: List[int] = []
    for i in range(k_f):
        u_rows, w_rows = partition.pair_scores(i)
        if u_rows.size < MIN_CLUSTER_ROWS or w_rows.size < MIN_CLUSTER_ROWS:
            logger.warning(
                f"Cluster pair ({i}, {int(partition.mapping[i])}) has "
                f"{u_rows.size}/{w_rows.size} rows; using the set-level bound"
            )
            per_pair_q[i], per_pair_beta[i] = fallback.q_hat, fallback.beta_star
            fallback_pairs.append(i)
            continue
        bound = minimize_quantile_sum(ScoreSet(u_rows), ScoreSet(w_rows), alpha, mode)
        if math.isinf(bound.value) and mode is QuantileMode.STRICT:
            per_pair_q[i], per_pair_beta[i] = fallback.q_hat, fallback.beta_star
            fallback_pairs.append(i)
            continue
        per_pair_q[i], per_pair_beta[i] = bound.value, bound.beta

    if fallback_pairs:
        logger.info(f"{len(fallback_pairs)} of {k_f} cluster pairs use the set-level bound at alpha={alpha}")
    per_pair_q.setflags(write=False)
    per_pair_beta.setflags(write=False)
    return ClusterCalibrator(
        f_clusters=partition.f_clusters,
        g_clusters=partition.g_clusters,
        mapping=partition.mapping,
        per_pair_q=per_pair_q,
        per_pair_beta=per_pair_beta,
        alpha=float(alpha),
        fallback_q=fallback.q_hat,
        mode=mode,
        fallback_pairs=tuple(fallback_pairs),
    )


def fit_cluster_level(
    df: UpstreamValidationSet,
    dg: DownstreamValidationSet,
    f_hat: Predictor,
    g_hat: Predictor,
    alpha: float,
    k_f: Optional[int] = None,
    k_g: Optional[int] = None,
    seed: int = 0,
    mode: QuantileMode = QuantileMode.CLAMPED,
) -> ClusterCalibrator:
    """
    Fit a cluster-level calibrator.

    Args:
        df: Upstream validation set (X, Y)
        dg: Downstream validation set (Y, Z)
        f_hat: Upstream predictor
        g_hat: Downstream predictor
        alpha: Target coverage in (0, 1)
        k_f: Upstream cluster count (default ceil(n_f/10))
        k_g: Downstream cluster count (default ceil(n_g/10))
        seed: K-means seed; the downstream clustering uses seed + 1
        mode: Quantile overflow handling inside clusters (clamped by default)

    Returns:
        ClusterCalibrator
    """
    partition = fit_cluster_partition(df, dg, f_hat, g_hat, k_f, k_g, seed)
    return calibrate_partition(partition, alpha, mode)


def predict_cluster_level(
    c: ClusterCalibrator, x, f_hat: Predictor, g_hat: Predictor
) -> PredictionInterval:
    """Route f_hat(x) to its nearest upstream cluster and use that pair's half-width."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    y_hat = predict_checked(f_hat, x, c.f_clusters.centroids.shape[1], "f_hat")
    cluster = assign_cluster(y_hat[0], c.f_clusters)
    center = float(predict_checked(g_hat, y_hat, 0, "g_hat")[0])
    return PredictionInterval(center=center, half_width=c.half_width(cluster))


def route_half_widths(c: ClusterCalibrator, y_hat: np.ndarray) -> np.ndarray:
    """Half-widths for a batch of predicted intermediates."""
    return c.per_pair_q[assign_clusters(y_hat, c.f_clusters)]


def cluster_diagnostics(c: ClusterCalibrator) -> List[Dict[str, float]]:
    """One row per upstream cluster: sizes, matched pair, centroid distance and bound."""
    f_sizes = c.f_clusters.sizes
    g_sizes = c.g_clusters.sizes
    rows = []
    for i in range(c.f_clusters.k):
        j = int(c.mapping[i])
        distance = float(np.linalg.norm(c.f_clusters.centroids[i] - c.g_clusters.centroids[j]))
        rows.append({
            "f_cluster": i,
            "g_cluster": j,
            "f_size": int(f_sizes[i]),
            "g_size": int(g_sizes[j]),
            "centroid_distance": distance,
            "q": float(c.per_pair_q[i]),
            "beta": float(c.per_pair_beta[i]),
            "fallback": int(i in c.fallback_pairs),
        })
    return rows
