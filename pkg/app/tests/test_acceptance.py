"""
Statistical acceptance runs on the simulated cascade at the reference split
sizes. Slow: deselect with -m "not slow".
"""

import pandas as pd
import pytest

from app.harness.experiment import DEFAULT_ALPHAS, build_config
from app.harness.orchestrator import run_experiment, run_sweep
from app.harness.results import results_frame

pytestmark = pytest.mark.slow

TRIALS = 20
WORKERS = 4


def _mean_table(results) -> pd.DataFrame:
    frame = results_frame(results)
    return frame.groupby(["method", "alpha_target"])[["coverage", "avg_width_finite"]].mean()


@pytest.fixture(scope="module")
def table():
    cfg = build_config({"seed": 2024, "trials": TRIALS, "workers": WORKERS, "k_clusters": 50})
    return _mean_table(run_experiment(cfg))


def test_end_to_end_matches_target(table):
    """Test that split conformal on system data hits each target within two points."""
    for alpha in DEFAULT_ALPHAS:
        assert abs(table.loc[("end2end", alpha), "coverage"] - alpha) <= 0.02


def test_set_level_is_safe(table):
    """Test set-level coverage at or above every target, with the over-coverage at 90%."""
    for alpha in DEFAULT_ALPHAS:
        assert table.loc[("set_level", alpha), "coverage"] >= alpha
    assert table.loc[("set_level", 0.9), "coverage"] >= 0.95
    assert 1.4 <= table.loc[("set_level", 0.9), "avg_width_finite"] <= 2.8


def test_cluster_level_is_tighter_than_set_level(table):
    """Test cluster-level coverage near the target, below set-level, with narrower intervals."""
    for alpha in DEFAULT_ALPHAS:
        cluster = table.loc[("cluster_level", alpha)]
        set_level = table.loc[("set_level", alpha)]
        assert cluster["coverage"] >= alpha - 0.01
        assert cluster["coverage"] <= set_level["coverage"]
        assert cluster["avg_width_finite"] < set_level["avg_width_finite"]


def test_set_level_covers_at_least_end_to_end(table):
    """Test the ordering of the system-level guarantees on average over trials."""
    for alpha in DEFAULT_ALPHAS:
        assert table.loc[("set_level", alpha), "coverage"] >= table.loc[("end2end", alpha), "coverage"]


@pytest.mark.parametrize("method", ["wcp", "aci"])
def test_downstream_baselines_under_cover(table, method):
    """Test that downstream-only baselines miss every target by at least five points."""
    for alpha in DEFAULT_ALPHAS:
        assert table.loc[(method, alpha), "coverage"] <= alpha - 0.05


def test_noise_sweep_keeps_coverage():
    """Test set- and cluster-level coverage across upstream noise scales."""
    cfg = build_config({
        "seed": 7, "trials": 5, "workers": WORKERS, "alphas": [0.9], "methods": ["set_level", "cluster_level"],
    })
    frame = results_frame(run_sweep(cfg, "noise_std", [0.5, 1.0, 2.0]))
    coverage = frame.groupby(["axis_value", "method"])["coverage"].mean()
    assert (coverage >= 0.88).all()


def test_data_size_sweep_is_stable_for_clusters():
    """Test cluster-level coverage across data sizes stays within three points."""
    cfg = build_config({
        "seed": 11, "trials": 5, "workers": WORKERS, "alphas": [0.9], "methods": ["set_level", "cluster_level"],
    })
    frame = results_frame(run_sweep(cfg, "data_size", [500, 1000, 2000]))
    coverage = frame.groupby(["method", "axis_value"])["coverage"].mean()
    assert (coverage >= 0.88).all()
    cluster = coverage.loc["cluster_level"]
    assert cluster.max() - cluster.min() <= 0.03


def test_cluster_width_shrinks_with_cluster_count():
    """Test that more clusters do not widen clamped cluster-level intervals at 50%."""
    cfg = build_config({
        "seed": 5, "trials": 5, "workers": WORKERS, "alphas": [0.5], "methods": ["cluster_level"],
    })
    frame = results_frame(run_sweep(cfg, "k_clusters", [1, 10, 50]))
    widths = frame.groupby("axis_value", sort=False)["avg_width_finite"].mean().tolist()
    assert widths == sorted(widths, reverse=True)
