import numpy as np
import pytest

from LegFusion.legfusion import initial_state
from LegFusion.modules.adaptive_fusion import (AdaptiveParams, FusionParams, FusionState, fusion_step,
                                               leg_reliability, lidar_reliability, propagate_window,
                                               run_fusion, scale_covariance, smooth_index)
from LegFusion.modules.errors import MeasurementUnavailable
from LegFusion.modules.evaluation import Trajectory
from LegFusion.modules.filter_core import ImuNoiseParams, ImuSample
from LegFusion.modules.leg_pipeline import LegOdomSample
from LegFusion.modules.lidar_pipeline import LidarScan
from LegFusion.modules.manifold import NominalState
from LegFusion.modules.simulator import GroundTruthTrajectory, generate_log


AT_REST = ((0.0, 0.0, 0.0), (0.0, 0.0, 9.81))


def rest_imu(t0:float, t1:float, rate:float = 50.0) -> list[ImuSample]:
    return [ImuSample(t, *AT_REST) for t in np.arange(t0 + 1 / rate, t1 + 1e-9, 1 / rate)]

def rest_leg(t0:float, t1:float, rate:float = 200.0) -> list[LegOdomSample]:
    return [LegOdomSample(t, (0.0, 0.0, 0.0)) for t in np.arange(t0, t1 + 1e-9, 1 / rate)]


# reliability factors

def test_lidar_reliability_examples():
    assert lidar_reliability(0.0) == 1.0
    assert lidar_reliability(1.0, AdaptiveParams(eta=np.log(2.0))) == pytest.approx(0.5, abs=1e-12)

def test_leg_reliability_examples():
    assert leg_reliability(0.0) == 1.0
    assert leg_reliability(0.5, AdaptiveParams(gamma_min=0.2)) == pytest.approx(0.6)
    assert leg_reliability(1.0, AdaptiveParams(gamma_min=0.2)) == pytest.approx(0.2)

def test_reliability_monotonic():
    d = np.linspace(0.0, 1.0, 101)
    lidar = np.array([lidar_reliability(x) for x in d])
    leg = np.array([leg_reliability(x) for x in d])
    for gamma in (lidar, leg):
        assert np.all(np.diff(gamma) < 0)
        assert np.all((gamma > 0) & (gamma <= 1))
    assert np.all(leg >= AdaptiveParams().gamma_min - 1e-15)

def test_scale_covariance():
    np.testing.assert_array_equal(scale_covariance(np.eye(3), 0.5), 2 * np.eye(3))
    np.testing.assert_array_equal(scale_covariance(np.eye(3), 1.0), np.eye(3))
    for gamma in (0.0, -0.5, 1.5):
        with pytest.raises(ValueError):
            scale_covariance(np.eye(3), gamma)

def test_smooth_index():
    params = AdaptiveParams(alpha=0.9)
    assert smooth_index(None, 0.3, params) == 0.3
    assert smooth_index(0.4, 0.4, params) == pytest.approx(0.4, abs=1e-15)
    assert smooth_index(0.0, 1.0, params) == pytest.approx(0.1)
    d = 0.0
    for _ in range(300):
        d = smooth_index(d, 0.7, params)
    assert d == pytest.approx(0.7, abs=1e-9)
    assert smooth_index(0.2, 0.9, AdaptiveParams(alpha=0.0)) == 0.9

@pytest.mark.parametrize('kwargs', [dict(alpha=1.0), dict(alpha=-0.1), dict(gamma_min=0.0), dict(eta=0.0)])
def test_adaptive_params_validation(kwargs):
    with pytest.raises(ValueError):
        AdaptiveParams(**kwargs)


# propagation window

def test_propagate_window_holds_last_sample():
    state, _ = propagate_window(NominalState(), np.eye(15), rest_imu(0.0, 0.08), 0.1, ImuNoiseParams())
    assert state.t == 0.1
    np.testing.assert_allclose(state.p, 0.0, atol=1e-12)

def test_propagate_window_without_imu():
    with pytest.raises(MeasurementUnavailable):
        propagate_window(NominalState(), np.eye(15), [], 0.1, ImuNoiseParams())
    # nothing to do at the same instant
    state, cov = propagate_window(NominalState(), np.eye(15), [], 0.0, ImuNoiseParams())
    np.testing.assert_array_equal(cov, np.eye(15))


# one epoch

def test_noiseless_epoch_stays_on_truth(short_scenarios, fast_sensors):
    world = short_scenarios['corridor_featured'].world
    traj = GroundTruthTrajectory(start=(2.0, 0.0, 0.35)).pause(1.0)
    log = generate_log(world, traj, fast_sensors.noiseless(), 0)
    start = initial_state(log)
    fusion = FusionState.initial(start, FusionParams())
    first = fusion_step(fusion, log.scans[0], log.leg[:1], [], FusionParams())
    assert fusion.skips['lidar_bootstrap'] == 1
    assert first.diagnostics.lidar_skipped == 1
    assert not fusion.local_map.is_empty()
    scan = log.scans[1]
    imu = [s for s in log.imu if s.t <= scan.t + 1e-9]
    leg = [s for s in log.leg if s.t <= scan.t + 1e-9]
    result = fusion_step(fusion, scan, leg, imu, FusionParams())
    assert result.state.t == pytest.approx(scan.t)
    assert np.linalg.norm(result.state.p - start.p) < 1e-3
    assert abs(result.state.R.yaw) < 1e-3
    assert result.diagnostics.n_corr >= FusionParams().degeneracy.min_correspondences
    assert result.diagnostics.lidar_skipped == 0
    assert result.diagnostics.leg_skipped == 0
    assert fusion.state is result.state

def test_empty_scan_skips_lidar_and_raises_degeneracy():
    params = FusionParams(use_leg=False)
    fusion = FusionState.initial(NominalState(), params)
    fusion.local_map.insert(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))
    fusion.c_il_prev = params.degeneracy.kappa
    result = fusion_step(fusion, LidarScan(0.1, np.zeros((0, 3))), [], rest_imu(0.0, 0.1), params)
    w1, w2 = params.degeneracy.w1, params.degeneracy.w2
    assert result.indices.d_k == pytest.approx(w1 + 0.5 * w2)
    assert result.indices.d_smooth == pytest.approx(w1 + 0.5 * w2)
    assert result.factors.gamma_lidar == pytest.approx(np.exp(-params.adaptive.eta * (w1 + 0.5 * w2)))
    assert result.diagnostics.n_corr == 0
    assert result.diagnostics.lidar_skipped == 1
    assert fusion.skips['lidar_correspondences'] == 1

def test_scan_older_than_state():
    fusion = FusionState.initial(NominalState(t=1.0), FusionParams())
    with pytest.raises(ValueError):
        fusion_step(fusion, LidarScan(0.5, np.zeros((0, 3))), [], [])

def test_fixed_weights_match_adaptive_at_zero_degeneracy():
    results = []
    for enabled in (True, False):
        params = FusionParams(use_lidar=False, adaptive=AdaptiveParams(enabled=enabled))
        fusion = FusionState.initial(NominalState(), params)
        for k in range(1, 4):
            t0, t1 = 0.1 * (k - 1), 0.1 * k
            res = fusion_step(fusion, LidarScan(t1, np.zeros((0, 3))), rest_leg(t0, t1), rest_imu(t0, t1), params)
            assert res.factors.gamma_lidar == 1.0 and res.factors.gamma_leg == 1.0
            assert res.diagnostics.leg_skipped == 0
        results.append(res)
    np.testing.assert_allclose(results[0].state.p, results[1].state.p, atol=1e-12)
    np.testing.assert_allclose(results[0].cov, results[1].cov, rtol=1e-9, atol=1e-15)

def test_leg_gap_handling_per_mode():
    # leg samples cover only the first 20% of the epoch
    leg = rest_leg(0.0, 0.02)
    adaptive = FusionParams(use_lidar=False)
    fusion = FusionState.initial(NominalState(), adaptive)
    res = fusion_step(fusion, LidarScan(0.1, np.zeros((0, 3))), leg, rest_imu(0.0, 0.1), adaptive)
    assert res.diagnostics.leg_skipped == 1
    assert fusion.skips['leg_coverage'] == 1

    fixed = FusionParams(use_lidar=False, adaptive=AdaptiveParams(enabled=False))
    fusion = FusionState.initial(NominalState(), fixed)
    res = fusion_step(fusion, LidarScan(0.1, np.zeros((0, 3))), leg, rest_imu(0.0, 0.1), fixed)
    assert res.diagnostics.leg_skipped == 0
    assert sum(fusion.skips.values()) == 0


# whole runs

@pytest.fixture(scope='module')
def featured_run(featured_log):
    return run_fusion(featured_log.imu, featured_log.scans, featured_log.leg, initial_state(featured_log))

def test_run_produces_one_epoch_per_scan(featured_log, featured_run):
    assert len(featured_run.states) == len(featured_log.scans)
    assert len(featured_run.covariances) == len(featured_log.scans)
    assert featured_run.skips['lidar_bootstrap'] == 1
    times = [s.t for s in featured_run.states]
    np.testing.assert_allclose(times, [s.t for s in featured_log.scans])

def test_run_diagnostics_in_range(featured_run):
    params = FusionParams()
    for d in featured_run.diagnostics:
        assert 0.0 <= d.o_lidar < 1.0
        assert 0.0 <= d.d_k <= 1.0 and 0.0 <= d.d_smooth <= 1.0
        assert 0.0 < d.gamma_lidar <= 1.0
        assert params.adaptive.gamma_min <= d.gamma_leg <= 1.0
        assert d.c_il >= 0.0

def test_run_covariances_stay_psd(featured_run):
    for cov in featured_run.covariances:
        np.testing.assert_array_equal(cov, cov.T)
        assert np.linalg.eigvalsh(cov).min() > -1e-12

def test_run_tracks_ground_truth(featured_log, featured_run):
    est = Trajectory(np.array([s.t for s in featured_run.states]), np.array([s.p for s in featured_run.states]))
    end = featured_run.states[-1]
    assert np.linalg.norm(end.p - featured_log.gt.position_at(end.t)) < 0.5
    assert np.all(np.isfinite(est.p))

def test_fixed_weights_ignore_adaptive_constants(featured_log):
    runs = []
    for eta, gamma_min, alpha in ((2.0, 0.2, 0.9), (0.5, 0.8, 0.3)):
        params = FusionParams(adaptive=AdaptiveParams(eta=eta, gamma_min=gamma_min, alpha=alpha, enabled=False))
        runs.append(run_fusion(featured_log.imu, featured_log.scans, featured_log.leg, initial_state(featured_log), params))
    a, b = runs
    assert len(a.states) == len(b.states)
    for sa, sb, Pa, Pb in zip(a.states, b.states, a.covariances, b.covariances):
        np.testing.assert_array_equal(sa.R.matrix, sb.R.matrix)
        np.testing.assert_array_equal(sa.p, sb.p)
        np.testing.assert_array_equal(sa.v, sb.v)
        np.testing.assert_array_equal(Pa, Pb)
    assert all(d.gamma_lidar == 1.0 and d.gamma_leg == 1.0 for d in a.diagnostics + b.diagnostics)

def test_leg_imu_dead_reckoning(featured_log):
    params = FusionParams(use_lidar=False)
    run = run_fusion(featured_log.imu, featured_log.scans, featured_log.leg, initial_state(featured_log), params)
    assert all(d.n_corr == 0 and d.d_smooth == 0.0 for d in run.diagnostics)
    assert all(d.gamma_lidar == 1.0 and d.gamma_leg == 1.0 for d in run.diagnostics)
    assert all(d.lidar_skipped == 1 for d in run.diagnostics)
    assert run.skips['lidar_bootstrap'] == 0
    assert all(s.is_finite() for s in run.states)
