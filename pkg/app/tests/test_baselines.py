import numpy as np
import pytest

from app.calibration.baselines import (
    AciState,
    aci_frozen_half_width,
    aci_half_width,
    aci_run,
    wcp_half_widths,
    wcp_interval,
)
from app.calibration.conformal import fit_split
from app.calibration.density_ratio import DensityRatioModel
from app.calibration.quantile import INF, ScoreSet, empirical_quantile


def _unit_ratio(dim):
    return DensityRatioModel(
        coef=np.zeros(dim), intercept=0.0, mean=np.zeros(dim), scale=np.ones(dim), n_source=5, n_target=5
    )


def test_wcp_equal_weights_reduce_to_split_conformal():
    """Test that unit weights give the split conformal half-width."""
    rng = np.random.default_rng(0)
    scores = rng.exponential(size=40)
    cal_y = rng.normal(size=(40, 2))
    for alpha in (0.5, 0.8, 0.9):
        interval = wcp_interval(scores, cal_y, _unit_ratio(2), np.zeros(2), 1.5, alpha)
        assert interval.center == 1.5
        assert interval.half_width == empirical_quantile(ScoreSet(scores), alpha)


def test_wcp_half_widths_dominant_mass():
    """Test the batch weighted quantile with most mass on one residual."""
    widths = wcp_half_widths([1.0, 2.0], [100.0, 1.0], [1.0], 0.5)
    assert widths.tolist() == [1.0]


def test_wcp_half_widths_match_single_point_intervals():
    """Test that batch half-widths equal per-point intervals."""
    rng = np.random.default_rng(1)
    scores = rng.exponential(size=30)
    cal_weights = rng.uniform(0.2, 5.0, size=30)
    test_weights = rng.uniform(0.2, 5.0, size=10)
    batch = wcp_half_widths(scores, cal_weights, test_weights, 0.8)

    class FixedRatio:
        def __init__(self, test_weight):
            self.test_weight = test_weight

        def weights(self, y):
            return cal_weights

        def weight(self, y):
            return self.test_weight

    for i, test_weight in enumerate(test_weights):
        interval = wcp_interval(scores, None, FixedRatio(test_weight), None, 0.0, 0.8)
        assert interval.half_width == batch[i]


def test_wcp_large_test_weight_is_unbounded():
    """Test +inf when the test point carries most of the mass."""
    assert wcp_half_widths([1.0, 2.0], [1.0, 1.0], [50.0], 0.9).tolist() == [INF]


def test_aci_gamma_zero_is_split_conformal():
    """Test that a zero step size freezes alpha_t."""
    rng = np.random.default_rng(2)
    cal = ScoreSet(rng.exponential(size=100))
    stream = [(0.0, float(z)) for z in rng.normal(size=50)]
    intervals, state = aci_run(stream, cal, 0.9, gamma=0.0)
    expected = fit_split(cal, 0.9).half_width
    assert all(interval.half_width == expected for interval in intervals)
    assert state.alpha_t == pytest.approx(0.1)
    assert aci_frozen_half_width(state, cal) == expected


def test_aci_always_covered_stream_increases_alpha():
    """Test the update rule on a stream whose truths equal the predictions."""
    cal = ScoreSet([0.5, 1.0, 1.5])
    stream = [(1.0, 1.0)] * 20
    _, state = aci_run(stream, cal, 0.9, gamma=1.0)
    assert state.alpha_history[:3] == pytest.approx([0.1, 0.2, 0.3])
    assert state.alpha_t == 1.0
    assert state.err_history == [0] * 20


def test_aci_long_run_miscoverage():
    """Test that stream miscoverage converges to 1 - alpha on a stationary stream."""
    rng = np.random.default_rng(3)
    cal = ScoreSet(np.abs(rng.normal(size=1000)))
    stream = [(0.0, float(z)) for z in rng.normal(size=5000)]
    _, state = aci_run(stream, cal, 0.9, gamma=0.005)
    assert state.miscoverage_rate == pytest.approx(0.1, abs=0.02)


def test_aci_momentum_variant_stays_clamped():
    """Test the momentum update keeps alpha_t inside [0, 1]."""
    rng = np.random.default_rng(4)
    cal = ScoreSet(np.abs(rng.normal(size=200)))
    stream = [(0.0, float(z)) for z in 3 * rng.normal(size=300)]
    _, state = aci_run(stream, cal, 0.8, gamma=0.05, method="momentum")
    assert all(0.0 <= a <= 1.0 for a in state.alpha_history)
    assert 0.0 <= state.alpha_t <= 1.0


def test_aci_state_update_clamps():
    """Test clamping at zero for a run of misses."""
    state = AciState(alpha_t=0.05, gamma=0.1, target_miscoverage=0.1)
    state.update(1)
    assert state.alpha_t == 0.0
    assert state.miscoverage_rate == 1.0


def test_aci_half_width_edges():
    """Test alpha_t at the ends of [0, 1]."""
    cal = ScoreSet([1.0, 2.0])
    assert aci_half_width(cal, 0.0) == INF
    assert aci_half_width(cal, 1.0) == 0.0


def test_aci_rejects_bad_arguments():
    """Test argument validation."""
    cal = ScoreSet([1.0, 2.0])
    with pytest.raises(ValueError):
        aci_run([(0.0, 0.0)], cal, 0.9, gamma=-0.1)
    with pytest.raises(ValueError):
        aci_run([], cal, 0.9)
    with pytest.raises(ValueError):
        aci_run([(0.0, 0.0)], cal, 0.9, method="other")
    with pytest.raises(ValueError):
        aci_run([(0.0, 0.0)], [], 0.9)
