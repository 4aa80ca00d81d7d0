from dataclasses import replace

import numpy as np
import pytest

from app.calibration.clustering import assign_cluster
from app.calibration.cluster_level import (
    calibrate_partition,
    cluster_diagnostics,
    default_cluster_count,
    fit_cluster_level,
    fit_cluster_partition,
    predict_cluster_level,
    route_half_widths,
)
from app.calibration.quantile import QuantileMode, ScoreSet, quantile_sum_bound
from app.calibration.set_level import downstream_errors, fit_set_level, upstream_propagated_errors
from app.calibration.validation import DownstreamValidationSet
from app.simulation.system import NoiseSpec, gen_dataset, gen_system
from app.utils.errors import NumericalError


class PerturbedLinear:
    """A deliberately imperfect downstream predictor b' . y."""

    def __init__(self, b):
        self.b = np.asarray(b, dtype=float)

    def predict(self, Y):
        return np.asarray(Y, dtype=float) @ self.b


def _cascade(seed, n_up=60, n_down=60):
    system = gen_system(seed, m=6, l=3, noise=NoiseSpec(mean=0.0, std=0.5))
    rng = np.random.default_rng(seed)
    g_hat = PerturbedLinear(system.b + rng.normal(scale=0.2, size=3))
    up = gen_dataset(system, n_up, seed + 100)
    down = gen_dataset(system, n_down, seed + 200)
    return up, down, g_hat


def test_default_cluster_count():
    """Test ceil(n/10) with a floor of one."""
    assert default_cluster_count(500) == 50
    assert default_cluster_count(15) == 2
    assert default_cluster_count(1) == 1


@pytest.mark.parametrize("mode", [QuantileMode.STRICT, QuantileMode.CLAMPED])
def test_single_cluster_equals_set_level(mode):
    """Test that one cluster reproduces the set-level half-width bit for bit."""
    for seed in range(20):
        up, down, g_hat = _cascade(seed)
        u = upstream_propagated_errors(up.upstream(), up.f_hat(), g_hat)
        w = downstream_errors(down.downstream(), g_hat)
        for alpha in (0.5, 0.9):
            cluster = fit_cluster_level(
                up.upstream(), down.downstream(), up.f_hat(), g_hat, alpha, k_f=1, k_g=1, seed=seed, mode=mode
            )
            set_level = fit_set_level(u, w, alpha, mode)
            assert cluster.half_width(0) == set_level.q_hat
            widths = route_half_widths(cluster, up.Y_hat)
            assert np.all(widths == set_level.q_hat)


def test_small_clusters_fall_back_to_set_level():
    """Test that singleton clusters use the set-level bound."""
    up, down, g_hat = _cascade(1, n_up=20, n_down=20)
    partition = fit_cluster_partition(up.upstream(), down.downstream(), up.f_hat(), g_hat, k_f=20, k_g=20)
    calibrator = calibrate_partition(partition, 0.5)
    fallback = fit_set_level(ScoreSet(partition.u_scores), ScoreSet(partition.w_scores), 0.5, QuantileMode.CLAMPED)
    assert calibrator.fallback_pairs == tuple(range(20))
    assert np.all(calibrator.per_pair_q == fallback.q_hat)


def test_strict_infinite_pairs_fall_back():
    """Test that strict mode replaces infinite per-pair bounds with the set-level bound."""
    up, down, g_hat = _cascade(2, n_up=100, n_down=100)
    partition = fit_cluster_partition(up.upstream(), down.downstream(), up.f_hat(), g_hat, k_f=10, k_g=10)
    calibrator = calibrate_partition(partition, 0.9, QuantileMode.STRICT)
    fallback = fit_set_level(ScoreSet(partition.u_scores), ScoreSet(partition.w_scores), 0.9)
    assert np.isfinite(fallback.q_hat)
    assert np.all(np.isfinite(calibrator.per_pair_q))
    assert len(calibrator.fallback_pairs) > 0


def test_partition_scores_are_row_aligned():
    """Test that per-pair scores come from the matched clusters."""
    up, down, g_hat = _cascade(3)
    partition = fit_cluster_partition(up.upstream(), down.downstream(), up.f_hat(), g_hat, k_f=4, k_g=3)
    assert partition.f_clusters.k == 4
    assert partition.g_clusters.k == 3
    total = 0
    for i in range(4):
        u_rows, w_rows = partition.pair_scores(i)
        total += u_rows.size
        assert w_rows.size == partition.g_clusters.sizes[partition.mapping[i]]
    assert total == up.n


def test_predict_cluster_level_routes_by_prediction():
    """Test that a test point gets the half-width of its nearest upstream cluster."""
    up, down, g_hat = _cascade(4)
    calibrator = fit_cluster_level(up.upstream(), down.downstream(), up.f_hat(), g_hat, 0.7, k_f=5, k_g=5)
    x = up.X[7]
    interval = predict_cluster_level(calibrator, x, up.f_hat(), g_hat)
    cluster = assign_cluster(up.Y_hat[7], calibrator.f_clusters)
    assert interval.half_width == calibrator.half_width(cluster)
    assert interval.center == pytest.approx(float(up.Y_hat[7] @ g_hat.b))


def test_dimension_mismatch_raises():
    """Test that validation sets with different intermediate dimensions are rejected."""
    up, _, g_hat = _cascade(5)
    other = DownstreamValidationSet(np.zeros((10, 2)), np.zeros(10))
    with pytest.raises(ValueError):
        fit_cluster_partition(up.upstream(), other, up.f_hat(), g_hat)


def test_cluster_diagnostics_rows():
    """Test one diagnostics row per upstream cluster."""
    up, down, g_hat = _cascade(6)
    calibrator = fit_cluster_level(up.upstream(), down.downstream(), up.f_hat(), g_hat, 0.5, k_f=3, k_g=4)
    rows = cluster_diagnostics(calibrator)
    assert len(rows) == 3
    assert set(rows[0]) == {
        "f_cluster", "g_cluster", "f_size", "g_size", "centroid_distance", "q", "beta", "fallback",
    }
    assert sum(row["f_size"] for row in rows) == up.n


class NanDownstream:
    """A broken downstream predictor."""

    def predict(self, Y):
        return np.full(np.asarray(Y).shape[0], np.nan)


@pytest.mark.parametrize("mode", [QuantileMode.STRICT, QuantileMode.CLAMPED])
def test_per_pair_bounds_match_direct_recomputation(mode):
    """Test that every own-bound pair equals the quantile-sum bound of its matched clusters."""
    checked = 0
    for seed in range(5):
        up, down, g_hat = _cascade(seed, n_up=120, n_down=120)
        partition = fit_cluster_partition(up.upstream(), down.downstream(), up.f_hat(), g_hat, k_f=4, k_g=5, seed=seed)
        for alpha in (0.5, 0.8):
            calibrator = calibrate_partition(partition, alpha, mode)
            for i in range(partition.f_clusters.k):
                if i in calibrator.fallback_pairs:
                    continue
                u_rows, w_rows = partition.pair_scores(i)
                expected = quantile_sum_bound(ScoreSet(u_rows), ScoreSet(w_rows), alpha, mode)
                assert calibrator.per_pair_q[i] == expected
                checked += 1
    assert checked > 0


def test_routing_uses_hand_set_pair_bounds():
    """Test that points are routed to the half-width of their nearest upstream centroid."""
    up, down, g_hat = _cascade(7)
    fitted = fit_cluster_level(up.upstream(), down.downstream(), up.f_hat(), g_hat, 0.7, k_f=2, k_g=2)
    calibrator = replace(fitted, per_pair_q=np.array([1.0, 3.0]))
    centroids = calibrator.f_clusters.centroids
    near = centroids + 1e-6
    assert list(route_half_widths(calibrator, near)) == [1.0, 3.0]

    widths = route_half_widths(calibrator, up.Y_hat)
    expected = np.where(
        np.array([assign_cluster(y, calibrator.f_clusters) for y in up.Y_hat]) == 0, 1.0, 3.0
    )
    assert np.array_equal(widths, expected)
    for row in (0, 11, 23):
        interval = predict_cluster_level(calibrator, up.X[row], up.f_hat(), g_hat)
        assert interval.half_width == expected[row]


def test_predict_cluster_level_rejects_non_finite_predictions():
    """Test that a downstream predictor returning NaN raises NumericalError."""
    up, down, g_hat = _cascade(8)
    calibrator = fit_cluster_level(up.upstream(), down.downstream(), up.f_hat(), g_hat, 0.7, k_f=3, k_g=3)
    with pytest.raises(NumericalError):
        predict_cluster_level(calibrator, up.X[0], up.f_hat(), NanDownstream())
