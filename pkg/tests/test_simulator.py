import numpy as np
import pytest

from LegFusion.modules.leg_pipeline import integrate_leg
from LegFusion.modules.simulator import (Box, GroundTruthTrajectory, SensorConfig, WorldModel, corridor_planes,
                                         generate_log, raycast, raycast_batch, simulate_imu, simulate_leg,
                                         simulate_scan, standard_scenarios, stream_rng)
from LegFusion.modules.manifold import Rotation

from .conftest import FAST_SENSORS


def corridor(boxes=()) -> WorldModel:
    return WorldModel(20.0, 2.0, 2.5, corridor_planes(-10.0, 10.0, 2.0, 2.5), boxes)


# raycasting

def test_raycast_to_wall():
    assert raycast(corridor(), [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]) == pytest.approx(1.0, abs=1e-12)
    assert raycast(corridor(), [0.0, 0.0, 1.0], [0.0, 0.0, -1.0]) == pytest.approx(1.0, abs=1e-12)

def test_raycast_along_axis_misses():
    assert raycast(corridor(), [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]) is None
    # wall beyond the maximum range
    assert raycast(corridor(), [0.0, 0.0, 1.0], [0.0, 1.0, 0.0], max_range=0.5) is None

def test_raycast_box_in_front_of_wall():
    world = corridor([Box((0.0, 0.8, 1.0), (0.4, 0.3, 1.0))])
    assert raycast(world, [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]) == pytest.approx(0.65, abs=1e-12)

def test_raycast_matches_brute_force(rng):
    boxes = [Box((float(x), 0.8 * (-1) ** i, 0.5), (0.4, 0.3, 1.0)) for i, x in enumerate(range(-8, 9, 2))]
    world = corridor(boxes)
    origin = np.array([0.3, -0.1, 0.5])
    d = rng.standard_normal((500, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    ranges = raycast_batch(world, origin, d, max_range=50.0)
    single = [WorldModel(20.0, 2.0, 2.5, [p]) for p in world.planes]
    single += [WorldModel(20.0, 2.0, 2.5, (), [b]) for b in world.boxes]
    brute = np.min([raycast_batch(w, origin, d, max_range=50.0) for w in single], axis=0)
    np.testing.assert_allclose(ranges, brute, rtol=1e-12)
    hits = np.isfinite(ranges)
    assert hits.sum() > 400
    # every hit lies on the corridor or on a box
    points = origin + ranges[hits, None] * d[hits]
    assert np.all(np.abs(points[:, 1]) <= 1.0 + 1e-9)
    assert np.all((points[:, 2] >= -1e-9) & (points[:, 2] <= 2.5 + 1e-9))

def test_world_validation():
    with pytest.raises(ValueError):
        WorldModel(10.0, 0.0, 2.5)


# random streams

def test_stream_rng_is_keyed():
    a = stream_rng(7, 1).standard_normal(5)
    np.testing.assert_array_equal(a, stream_rng(7, 1).standard_normal(5))
    assert not np.array_equal(a, stream_rng(7, 2).standard_normal(5))
    assert not np.array_equal(a, stream_rng(8, 1).standard_normal(5))
    assert not np.array_equal(stream_rng(7, 3, 0).standard_normal(5), stream_rng(7, 3, 1).standard_normal(5))


# ground truth

def test_trajectory_construction():
    traj = GroundTruthTrajectory().pause(1.0).straight(10.0, 1.0, marks={'m': 5.0}).turn(np.pi, 4.0)
    assert traj.duration == pytest.approx(1.0 + 12.0 + 4.0)
    assert traj.path_length == 10.0
    end = traj.sample(np.array([traj.duration]))
    np.testing.assert_allclose(end.p[0], [10.0, 0.0, 0.35], atol=1e-9)
    assert end.yaw[0] == pytest.approx(np.pi)
    (name, t_mark), = traj.visits
    assert name == 'm'
    np.testing.assert_allclose(traj.sample(np.array([t_mark])).p[0], [5.0, 0.0, 0.35], atol=1e-9)
    with pytest.raises(ValueError):
        traj.straight(0.0, 1.0)

def test_ground_truth_is_kinematically_consistent():
    traj = GroundTruthTrajectory().pause(0.5).straight(6.0, 1.2).turn(0.5 * np.pi, 3.0).straight(3.0, 0.8)
    dt = 1e-3
    truth = traj.sample(np.arange(0.0, traj.duration, dt))
    v_fd = (truth.p[2:] - truth.p[:-2]) / (2 * dt)
    assert np.max(np.abs(v_fd - truth.v[1:-1])) < 1e-3
    yaw_fd = (truth.yaw[2:] - truth.yaw[:-2]) / (2 * dt)
    assert np.max(np.abs(yaw_fd - truth.yaw_rate[1:-1])) < 1e-3

def test_segment_spec_follows_visit_order():
    scenario = standard_scenarios()['corridor_ab']
    segments = scenario.segments
    assert len(segments) == 8
    assert list(segments.groups()) == ['a-b', 'b-a']
    for s in segments:
        assert s.true_distance == pytest.approx(20.0)
    ends = [s.t_end for s in segments]
    assert ends == sorted(ends)


# sensors

def test_noiseless_leg_is_true_body_velocity():
    traj = GroundTruthTrajectory().straight(4.0, 1.0).turn(0.5 * np.pi, 2.0).straight(2.0, 1.0)
    cfg = SensorConfig(**FAST_SENSORS).noiseless()
    leg = simulate_leg(traj, cfg, 0)
    t = np.array([s.t for s in leg])
    truth = traj.sample(t)
    np.testing.assert_array_equal(np.array([s.v_body for s in leg]), truth.to_body(truth.v))
    np.testing.assert_array_equal(np.array([s.omega_z for s in leg]), truth.yaw_rate)

def test_noiseless_imu_at_rest():
    cfg = SensorConfig(**FAST_SENSORS).noiseless()
    imu = simulate_imu(GroundTruthTrajectory(yaw0=0.7).pause(2.0), cfg, 0)
    assert imu[0].t == pytest.approx(1 / cfg.imu_hz)
    assert len(imu) == int(2.0 * cfg.imu_hz)
    for s in imu:
        np.testing.assert_array_equal(s.omega_m, (0.0, 0.0, 0.0))
        np.testing.assert_allclose(s.a_m, -np.asarray(cfg.imu_noise.gravity), atol=1e-12)

def test_leg_scale_error():
    traj = GroundTruthTrajectory().straight(10.0, 1.0)
    cfg = SensorConfig(**FAST_SENSORS, leg_scale_error=0.05)
    inc = integrate_leg(simulate_leg(traj, cfg, 3), 0.0, traj.duration)
    sigma = cfg.leg_noise / cfg.leg_hz * np.sqrt(traj.duration * cfg.leg_hz)
    assert abs(inc.dp_body[0] - 10.5) < 3 * sigma + 1e-3

def test_packet_loss_removes_samples():
    traj = GroundTruthTrajectory().straight(4.0, 1.0)
    cfg = SensorConfig(**FAST_SENSORS, packet_loss=((1.0, 0.5),))
    t = np.array([s.t for s in simulate_leg(traj, cfg, 0)])
    assert not np.any((t >= 1.0) & (t < 1.5))
    assert len(t) == int(traj.duration * cfg.leg_hz) + 1 - int(0.5 * cfg.leg_hz)

def test_scan_of_open_area_hits_three_plane_orientations(short_scenarios):
    scenario = short_scenarios['garage_L']
    cfg = scenario.cfg.noiseless()
    t = next(t for name, t in scenario.traj.visits if name == 'd')
    scan = simulate_scan(scenario.world, scenario.traj, cfg, t, 0, 0)
    truth = scenario.traj.sample(np.array([t]))
    world_pts = Rotation.from_yaw(truth.yaw[0]).apply(cfg.extrinsics.to_body(scan.points)) + truth.p[0]
    on_floor = np.abs(world_pts[:, 2]) < 1e-6
    on_x_wall = np.abs(world_pts[:, 0] - 42.0) < 1e-6
    on_y_wall = np.abs(np.abs(world_pts[:, 1]) - 6.0) < 1e-6
    assert on_floor.sum() > 10 and on_x_wall.sum() > 10 and on_y_wall.sum() > 10

def test_log_streams(featured_log, fast_sensors):
    log = featured_log
    for stream in (log.imu, log.scans, log.leg):
        times = [s.t for s in stream]
        assert times == sorted(times)
    assert log.scans[0].t == 0.0
    assert log.imu[-1].t <= log.gt.t[-1] + 1e-9
    assert len(log.gt) == len(log.leg)
    assert all(0 < len(s) <= fast_sensors.n_azimuth * fast_sensors.n_elevation for s in log.scans)
    assert len(log.segments) == 8

def test_generation_is_deterministic(short_scenarios):
    sc = short_scenarios['corridor_ab']
    traj = GroundTruthTrajectory().pause(0.5).straight(1.0, 1.0)
    a = generate_log(sc.world, traj, sc.cfg, 11)
    b = generate_log(sc.world, traj, sc.cfg, 11)
    c = generate_log(sc.world, traj, sc.cfg, 12)
    np.testing.assert_array_equal([s.a_m for s in a.imu], [s.a_m for s in b.imu])
    np.testing.assert_array_equal([s.v_body for s in a.leg], [s.v_body for s in b.leg])
    for sa, sb in zip(a.scans, b.scans):
        np.testing.assert_array_equal(sa.points, sb.points)
    assert not np.array_equal([s.a_m for s in a.imu], [s.a_m for s in c.imu])

def test_standard_scenarios():
    scenarios = standard_scenarios()
    assert set(scenarios) == {'corridor_ab', 'corridor_featured', 'garage_L'}
    assert scenarios['corridor_ab'].traj.path_length == pytest.approx(160.0)
    assert scenarios['corridor_ab'].cfg.leg_scale_error == 0.03
    assert len(scenarios['corridor_ab'].cfg.packet_loss) == 1
    assert scenarios['corridor_featured'].cfg.leg_scale_error == 0.0
    assert len(scenarios['corridor_featured'].world.boxes) > 0
    assert len(scenarios['corridor_ab'].world.boxes) == 0
    overridden = standard_scenarios(leg_scale_error=0.0, packet_loss=())
    assert overridden['corridor_ab'].cfg.leg_scale_error == 0.0
    assert overridden['corridor_ab'].cfg.packet_loss == ()
