import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from .evaluation import Segment, SegmentSpec, Trajectory
from .filter_core import ImuNoiseParams, ImuSample
from .leg_pipeline import LegOdomSample
from .lidar_pipeline import LidarExtrinsics, LidarScan
from .manifold import Rotation


logger = logging.getLogger()

# random streams, keyed together with the seed
STREAM_IMU = 1
STREAM_LEG = 2
STREAM_LIDAR = 3

RAY_EPS = 1e-9


def stream_rng(seed:int, stream:int, index:int = 0) -> np.random.Generator:
    '''Counter-based generator for (seed, stream, index), independent of draw order elsewhere'''
    return np.random.Generator(np.random.Philox(key=(int(stream) << 64) | (int(seed) & 0xFFFFFFFFFFFFFFFF), counter=int(index)))


# world

@dataclass(frozen=True)
class Plane:
    '''Axis-aligned rectangle {x[axis] = offset}, bounded on the two other axes (increasing axis order)'''
    axis: int
    offset: float
    lo: tuple
    hi: tuple

@dataclass(frozen=True)
class Box:
    '''Axis-aligned box given by its center and size (m)'''
    center: tuple
    size: tuple

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.center) - 0.5 * np.asarray(self.size)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.center) + 0.5 * np.asarray(self.size)

@dataclass(frozen=True)
class WorldModel:
    '''
    Static scene made of bounded planes and boxes

    length, width and height describe the main corridor; planes holds its
    floor, ceiling and walls (and those of any other area).
    '''
    length: float
    width: float
    height: float
    planes: tuple = ()
    boxes: tuple = ()

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0 and self.length > 0):
            raise ValueError(f"Corridor dimensions must be positive, got {self.length} x {self.width} x {self.height}")
        object.__setattr__(self, 'planes', tuple(self.planes))
        object.__setattr__(self, 'boxes', tuple(self.boxes))


def corridor_planes(x0:float, x1:float, width:float, height:float, y_center:float = 0.0) -> list[Plane]:
    '''Open-ended corridor along x: floor, ceiling and both walls'''
    y0, y1 = y_center - 0.5 * width, y_center + 0.5 * width
    return [
        Plane(2, 0.0, (x0, y0), (x1, y1)),
        Plane(2, height, (x0, y0), (x1, y1)),
        Plane(1, y0, (x0, 0.0), (x1, height)),
        Plane(1, y1, (x0, 0.0), (x1, height))]

def raycast_batch(world:WorldModel,
                  origin:np.ndarray,
                  directions:np.ndarray,
                  max_range:float = np.inf) -> np.ndarray:
    '''
    Nearest intersection of many rays from one origin

    Parameters
    ----------
    world : WorldModel
        Scene
    origin : np.ndarray
        Ray origin (3,)
    directions : np.ndarray
        Unit directions (N, 3)
    max_range : float, optional
        Hits beyond this range are misses (def: inf)

    Returns
    -------
    np.ndarray
        Ranges (N,), inf for misses
    '''
    origin = np.asarray(origin, dtype=np.float64)
    d = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    best = np.full(d.shape[0], np.inf)
    with np.errstate(divide='ignore', invalid='ignore'):
        for plane in world.planes:
            a = plane.axis
            others = [i for i in range(3) if i != a]
            t = (plane.offset - origin[a]) / d[:, a]
            hit = origin[None, others] + t[:, None] * d[:, others]
            inside = (t > RAY_EPS) & np.all((hit >= np.asarray(plane.lo) - RAY_EPS) & (hit <= np.asarray(plane.hi) + RAY_EPS), axis=1)
            best = np.where(inside & (t < best), t, best)
        for box in world.boxes:
            t1 = (box.lo - origin) / d
            t2 = (box.hi - origin) / d
            t_near = np.nanmax(np.minimum(t1, t2), axis=1)
            t_far = np.nanmin(np.maximum(t1, t2), axis=1)
            hit = (t_near <= t_far) & (t_near > RAY_EPS)
            best = np.where(hit & (t_near < best), t_near, best)
    best[best > max_range] = np.inf
    return best

def raycast(world:WorldModel, origin:np.ndarray, direction:np.ndarray, max_range:float = np.inf) -> float:
    '''Range of the nearest surface along a unit direction, None on a miss'''
    r = raycast_batch(world, origin, np.asarray(direction)[None, :], max_range)[0]
    return float(r) if np.isfinite(r) else None


# ground truth

@dataclass(frozen=True)
class Motion:
    '''
    One trajectory piece starting at t0 from (p0, yaw0)

    kind is 'straight' (raised-cosine speed ramps to a cruise speed),
    'turn' (in-place yaw with smooth rate) or 'pause'.
    '''
    kind: str
    t0: float
    duration: float
    p0: tuple
    yaw0: float
    distance: float = 0.0
    angle: float = 0.0
    speed: float = 0.0
    ramp: float = 0.0

    def profile(self, tau:np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        '''Along-track distance, speed, acceleration, yaw and yaw rate at local times tau'''
        zeros = np.zeros_like(tau)
        if self.kind == 'turn':
            T = self.duration
            yaw = self.yaw0 + self.angle * (tau / T - np.sin(2 * np.pi * tau / T) / (2 * np.pi))
            rate = self.angle / T * (1 - np.cos(2 * np.pi * tau / T))
            return zeros, zeros, zeros, yaw, rate
        if self.kind == 'pause':
            return zeros, zeros, zeros, zeros + self.yaw0, zeros
        V, T = self.speed, self.ramp
        cruise = self.duration - 2 * T
        s = np.empty_like(tau)
        v = np.empty_like(tau)
        a = np.empty_like(tau)
        up = tau < T
        down = tau >= T + cruise
        mid = ~up & ~down
        s[up] = 0.5 * V * (tau[up] - T / np.pi * np.sin(np.pi * tau[up] / T))
        v[up] = 0.5 * V * (1 - np.cos(np.pi * tau[up] / T))
        a[up] = 0.5 * V * np.pi / T * np.sin(np.pi * tau[up] / T)
        s[mid] = 0.5 * V * T + V * (tau[mid] - T)
        v[mid] = V
        a[mid] = 0.0
        td = tau[down] - T - cruise
        s[down] = 0.5 * V * T + V * cruise + 0.5 * V * (td + T / np.pi * np.sin(np.pi * td / T))
        v[down] = 0.5 * V * (1 + np.cos(np.pi * td / T))
        a[down] = -0.5 * V * np.pi / T * np.sin(np.pi * td / T)
        return s, v, a, zeros + self.yaw0, zeros

    @property
    def end_yaw(self) -> float:
        return self.yaw0 + self.angle if self.kind == 'turn' else self.yaw0

    @property
    def end_position(self) -> np.ndarray:
        heading = np.array([np.cos(self.yaw0), np.sin(self.yaw0), 0.0])
        return np.asarray(self.p0) + (self.distance if self.kind == 'straight' else 0.0) * heading

@dataclass(frozen=True)
class TruthSamples:
    '''Dense ground truth: world position, velocity, acceleration, yaw and yaw rate'''
    t: np.ndarray
    p: np.ndarray
    v: np.ndarray
    a: np.ndarray
    yaw: np.ndarray
    yaw_rate: np.ndarray

    def quaternions(self) -> np.ndarray:
        '''(qw, qx, qy, qz) of the yaw-only orientations (N, 4)'''
        half = 0.5 * self.yaw
        return np.stack([np.cos(half), np.zeros_like(half), np.zeros_like(half), np.sin(half)], axis=1)

    def to_body(self, world:np.ndarray) -> np.ndarray:
        '''Rotate world-frame vectors (N, 3) into the body frame'''
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        return np.stack([c * world[:, 0] + s * world[:, 1], -s * world[:, 0] + c * world[:, 1], world[:, 2]], axis=1)

@dataclass
class GroundTruthTrajectory:
    '''
    Piecewise planar trajectory of the body at a fixed height

    Built incrementally with pause / straight / turn and annotated with
    visits to named reference points.
    '''
    start: tuple = (0.0, 0.0, 0.35)
    yaw0: float = 0.0
    motions: list = field(default_factory=list)
    visits: list = field(default_factory=list)
    points: dict = field(default_factory=dict)

    @property
    def duration(self) -> float:
        return self.motions[-1].t0 + self.motions[-1].duration if self.motions else 0.0

    @property
    def path_length(self) -> float:
        return float(sum(m.distance for m in self.motions))

    def _tail(self) -> tuple[np.ndarray, float]:
        if not self.motions:
            return np.asarray(self.start, dtype=np.float64), self.yaw0
        return self.motions[-1].end_position, self.motions[-1].end_yaw

    def pause(self, duration:float) -> 'GroundTruthTrajectory':
        p, yaw = self._tail()
        self.motions.append(Motion('pause', self.duration, duration, tuple(p), yaw))
        return self

    def turn(self, angle:float, duration:float) -> 'GroundTruthTrajectory':
        p, yaw = self._tail()
        self.motions.append(Motion('turn', self.duration, duration, tuple(p), yaw, angle=angle))
        return self

    def straight(self, distance:float, speed:float, ramp:float = 2.0, marks:dict = None) -> 'GroundTruthTrajectory':
        '''
        Straight move along the current heading

        marks maps reference point names to along-track distances passed
        during the move.
        '''
        if not (distance > 0 and speed > 0):
            raise ValueError(f"Straight motion needs positive distance and speed, got {distance}, {speed}")
        p, yaw = self._tail()
        ramp = min(ramp, distance / speed)
        duration = distance / speed + ramp
        motion = Motion('straight', self.duration, duration, tuple(p), yaw, distance=distance, speed=speed, ramp=ramp)
        self.motions.append(motion)
        heading = np.array([np.cos(yaw), np.sin(yaw), 0.0])
        for name, s in sorted((marks or {}).items(), key=lambda item: item[1]):
            tau = brentq(lambda x: motion.profile(np.array([x]))[0][0] - s, 0.0, duration, xtol=1e-12)
            self._visit(name, motion.t0 + tau, np.asarray(p) + s * heading)
        return self

    def mark(self, name:str) -> 'GroundTruthTrajectory':
        p, _ = self._tail()
        return self._visit(name, self.duration, p)

    def _visit(self, name:str, t:float, p:np.ndarray) -> 'GroundTruthTrajectory':
        self.visits.append((name, float(t)))
        self.points.setdefault(name, tuple(float(x) for x in p))
        return self

    def sample(self, t:np.ndarray) -> TruthSamples:
        '''Evaluate the trajectory at times t (clamped to its span)'''
        t = np.clip(np.asarray(t, dtype=np.float64).reshape(-1), 0.0, self.duration)
        p = np.zeros((t.shape[0], 3))
        v = np.zeros_like(p)
        a = np.zeros_like(p)
        yaw = np.zeros_like(t)
        rate = np.zeros_like(t)
        for i, m in enumerate(self.motions):
            last = i == len(self.motions) - 1
            sel = (t >= m.t0) & ((t <= m.t0 + m.duration) if last else (t < m.t0 + m.duration))
            if not np.any(sel):
                continue
            s, sp, acc, y, r = m.profile(t[sel] - m.t0)
            heading = np.array([np.cos(m.yaw0), np.sin(m.yaw0), 0.0])
            p[sel] = np.asarray(m.p0) + s[:, None] * heading
            v[sel] = sp[:, None] * heading
            a[sel] = acc[:, None] * heading
            yaw[sel] = y
            rate[sel] = r
        return TruthSamples(t, p, v, a, yaw, rate)

    def segment_spec(self, groups:list[tuple[str, list[str]]]) -> SegmentSpec:
        '''
        Reference segments from the recorded visits

        Each group lists the point names it passes in order; visits are
        consumed front to back across groups.
        '''
        segments = []
        cursor = 0
        for label, names in groups:
            times = []
            for name in names:
                while cursor < len(self.visits) and self.visits[cursor][0] != name:
                    cursor += 1
                if cursor == len(self.visits):
                    raise ValueError(f"Reference point '{name}' of group '{label}' is never visited in order")
                times.append(self.visits[cursor][1])
                cursor += 1
            for (n0, t0), (n1, t1) in zip(zip(names, times), zip(names[1:], times[1:])):
                d = float(np.linalg.norm(np.subtract(self.points[n1], self.points[n0])))
                segments.append(Segment(label, n0, n1, t0, t1, d))
        return SegmentSpec(tuple(segments))


# sensors

@dataclass(frozen=True)
class SensorConfig:
    lidar_hz: float = 10.0
    imu_hz: float = 50.0
    leg_hz: float = 200.0
    n_azimuth: int = 360
    n_elevation: int = 16
    vertical_half_fov: float = 0.2617993878
    max_range: float = 50.0
    range_noise: float = 0.02
    imu_noise: ImuNoiseParams = field(default_factory=ImuNoiseParams)
    leg_noise: float = 0.02
    leg_yaw_noise: float = 0.01
    leg_scale_error: float = 0.0
    packet_loss: tuple = ()
    extrinsics: LidarExtrinsics = field(default_factory=lambda: LidarExtrinsics(t=(-0.2, 0.0, 0.15)))

    def __post_init__(self):
        if min(self.lidar_hz, self.imu_hz, self.leg_hz) <= 0:
            raise ValueError("Sensor rates must be positive")
        if min(self.range_noise, self.leg_noise, self.leg_yaw_noise) < 0:
            raise ValueError("Sensor noises must be non-negative")
        object.__setattr__(self, 'packet_loss', tuple(tuple(float(x) for x in ep) for ep in self.packet_loss))

    def noiseless(self) -> 'SensorConfig':
        '''Same sensors with every noise source switched off'''
        zero_imu = replace(self.imu_noise, sigma_g=0.0, sigma_a=0.0, sigma_bg=0.0, sigma_ba=0.0)
        return replace(self, range_noise=0.0, leg_noise=0.0, leg_yaw_noise=0.0, imu_noise=zero_imu)

    def ray_directions(self) -> np.ndarray:
        '''Unit ray directions (n_elevation * n_azimuth, 3) in the sensor frame'''
        az = np.arange(self.n_azimuth) * (2 * np.pi / self.n_azimuth)
        el = np.linspace(-self.vertical_half_fov, self.vertical_half_fov, self.n_elevation)
        el, az = np.meshgrid(el, az, indexing='ij')
        return np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1).reshape(-1, 3)

@dataclass(frozen=True, eq=False)
class SensorLog:
    '''Sensor streams with ground truth and reference segments'''
    imu: list
    scans: list
    leg: list
    gt: Trajectory
    segments: SegmentSpec = field(default_factory=SegmentSpec)


def _stream_times(rate:float, duration:float, first:int = 0) -> np.ndarray:
    n = int(np.floor(duration * rate + 1e-9))
    return np.arange(first, n + 1) / rate

def simulate_imu(traj:GroundTruthTrajectory, cfg:SensorConfig, seed:int) -> list[ImuSample]:
    '''
    IMU readings at imu_hz from t = 1/imu_hz

    Each reading represents the interval ending at its timestamp and is
    taken from the truth at the interval midpoint.
    '''
    t = _stream_times(cfg.imu_hz, traj.duration, first=1)
    dt = 1.0 / cfg.imu_hz
    truth = traj.sample(t - 0.5 * dt)
    noise = cfg.imu_noise
    g = np.asarray(noise.gravity)
    rng = stream_rng(seed, STREAM_IMU)
    white_g = rng.standard_normal((t.shape[0], 3)) * noise.sigma_g / np.sqrt(dt)
    white_a = rng.standard_normal((t.shape[0], 3)) * noise.sigma_a / np.sqrt(dt)
    b_g = np.cumsum(rng.standard_normal((t.shape[0], 3)) * noise.sigma_bg * np.sqrt(dt), axis=0)
    b_a = np.cumsum(rng.standard_normal((t.shape[0], 3)) * noise.sigma_ba * np.sqrt(dt), axis=0)
    omega = np.zeros((t.shape[0], 3))
    omega[:, 2] = truth.yaw_rate
    omega += b_g + white_g
    acc = truth.to_body(truth.a - g) + b_a + white_a
    return [ImuSample(float(tk), tuple(w), tuple(f)) for tk, w, f in zip(t, omega, acc)]

def simulate_leg(traj:GroundTruthTrajectory, cfg:SensorConfig, seed:int) -> list[LegOdomSample]:
    '''Body velocity scaled by (1 + leg_scale_error) plus white noise, minus packet-loss episodes'''
    t = _stream_times(cfg.leg_hz, traj.duration)
    truth = traj.sample(t)
    rng = stream_rng(seed, STREAM_LEG)
    v_noise = rng.standard_normal((t.shape[0], 3)) * cfg.leg_noise
    w_noise = rng.standard_normal(t.shape[0]) * cfg.leg_yaw_noise
    lost = np.zeros(t.shape[0], dtype=bool)
    for start, duration in cfg.packet_loss:
        lost |= (t >= start) & (t < start + duration)
    v_body = truth.to_body(truth.v) * (1.0 + cfg.leg_scale_error) + v_noise
    omega_z = truth.yaw_rate + w_noise
    return [LegOdomSample(float(t[k]), tuple(v_body[k]), float(omega_z[k])) for k in np.flatnonzero(~lost)]

def simulate_scan(world:WorldModel, traj:GroundTruthTrajectory, cfg:SensorConfig, t:float, index:int, seed:int) -> LidarScan:
    '''One instantaneous scan from the true pose at t'''
    truth = traj.sample(np.array([t]))
    R_body = Rotation.from_yaw(truth.yaw[0])
    R_sensor = R_body * cfg.extrinsics.R
    origin = truth.p[0] + R_body.apply(cfg.extrinsics.t)
    dirs = cfg.ray_directions()
    ranges = raycast_batch(world, origin, R_sensor.apply(dirs), cfg.max_range)
    rng = stream_rng(seed, STREAM_LIDAR, index)
    noisy = ranges + rng.standard_normal(ranges.shape[0]) * cfg.range_noise
    hit = np.isfinite(ranges) & (noisy > 0)
    return LidarScan(float(t), dirs[hit] * noisy[hit, None])

def generate_log(world:WorldModel, traj:GroundTruthTrajectory, cfg:SensorConfig, seed:int, segments:SegmentSpec = None) -> SensorLog:
    '''
    Synthesize every sensor stream of a run

    Parameters
    ----------
    world : WorldModel
        Scene scanned by the LiDAR
    traj : GroundTruthTrajectory
        True motion of the body
    cfg : SensorConfig
        Rates, noises, ray pattern and injected leg faults
    seed : int
        Seed of the counter-based generator
    segments : SegmentSpec, optional
        Reference segments to attach to the log

    Returns
    -------
    SensorLog
        IMU, LiDAR and leg streams with ground truth at the leg rate
    '''
    logger.debug(f"Generating {traj.duration:.1f} s of sensor data (seed {seed})")
    imu = simulate_imu(traj, cfg, seed)
    leg = simulate_leg(traj, cfg, seed)
    scans = [simulate_scan(world, traj, cfg, float(t), i, seed) for i, t in enumerate(_stream_times(cfg.lidar_hz, traj.duration))]
    t_gt = _stream_times(cfg.leg_hz, traj.duration)
    truth = traj.sample(t_gt)
    return SensorLog(imu, scans, leg, Trajectory(t_gt, truth.p, truth.quaternions()), segments if segments is not None else SegmentSpec())


# scenarios

@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    world: WorldModel
    traj: GroundTruthTrajectory
    cfg: SensorConfig
    segments: SegmentSpec

CORRIDOR_WIDTH = 2.0
CORRIDOR_HEIGHT = 2.5
# margin of corridor beyond the travelled part, larger than the LiDAR range
CORRIDOR_MARGIN = 60.0


def _corridor_world(length:float, featured:bool) -> WorldModel:
    x0, x1 = -CORRIDOR_MARGIN, length + CORRIDOR_MARGIN
    boxes = []
    if featured:
        for i, x in enumerate(np.arange(x0 + 2.0, x1, 2.0)):
            side = 1.0 if i % 2 == 0 else -1.0
            boxes.append(Box((float(x), side * (0.5 * CORRIDOR_WIDTH - 0.15), 0.5), (0.4, 0.3, 1.0)))
    return WorldModel(length, CORRIDOR_WIDTH, CORRIDOR_HEIGHT, corridor_planes(x0, x1, CORRIDOR_WIDTH, CORRIDOR_HEIGHT), boxes)

def _out_and_back(length:float, speed:float) -> GroundTruthTrajectory:
    forward = {f'a{i}': length * i / 4 for i in (1, 2, 3)}
    backward = {f'a{i}': length * (4 - i) / 4 for i in (1, 2, 3)}
    traj = GroundTruthTrajectory()
    traj.pause(1.0).mark('a').straight(length, speed, marks=forward).mark('b')
    traj.pause(1.0).turn(np.pi, 6.0).pause(1.0)
    traj.mark('b').straight(length, speed, marks=backward).mark('a').pause(1.0)
    return traj

def _garage_world() -> WorldModel:
    h = CORRIDOR_HEIGHT
    planes = corridor_planes(-CORRIDOR_MARGIN, 30.0, CORRIDOR_WIDTH, h)
    # open area x 30..42, y -6..6
    planes += [
        Plane(2, 0.0, (30.0, -6.0), (42.0, 6.0)),
        Plane(2, h, (30.0, -6.0), (42.0, 6.0)),
        Plane(0, 42.0, (-6.0, 0.0), (6.0, h)),
        Plane(0, 30.0, (-6.0, 0.0), (-1.0, h)),
        Plane(0, 30.0, (1.0, 0.0), (6.0, h)),
        Plane(1, 6.0, (30.0, 0.0), (42.0, h)),
        Plane(1, -6.0, (30.0, 0.0), (35.0, h)),
        Plane(1, -6.0, (37.0, 0.0), (42.0, h))]
    # second corridor along -y at x = 36
    y_end = -34.0 - CORRIDOR_MARGIN
    planes += [
        Plane(2, 0.0, (35.0, y_end), (37.0, -6.0)),
        Plane(2, h, (35.0, y_end), (37.0, -6.0)),
        Plane(0, 35.0, (y_end, 0.0), (-6.0, h)),
        Plane(0, 37.0, (y_end, 0.0), (-6.0, h))]
    pillars = [Box((x, y, 0.5 * h), (0.6, 0.6, h)) for x in (33.0, 39.0) for y in (-3.0, 3.0)]
    return WorldModel(30.0, CORRIDOR_WIDTH, h, planes, pillars)

def _garage_trajectory(speed:float) -> GroundTruthTrajectory:
    traj = GroundTruthTrajectory()
    traj.pause(1.0).mark('a').straight(36.0, speed, marks={'b': 10.0, 'c': 20.0}).mark('d')
    traj.pause(1.0).turn(-0.5 * np.pi, 4.0).pause(0.5)
    traj.mark('d').straight(34.0, speed, marks={'e': 12.0, 'f': 20.0, 'g': 28.0}).mark('h')
    traj.pause(1.0).turn(np.pi, 6.0).pause(1.0)
    traj.mark('h').straight(34.0, speed, marks={'g': 6.0, 'f': 14.0, 'e': 22.0}).mark('d')
    traj.pause(1.0).turn(0.5 * np.pi, 4.0).pause(0.5)
    traj.mark('d').straight(36.0, speed, marks={'c': 16.0, 'b': 26.0}).mark('a').pause(1.0)
    return traj

def standard_scenarios(cfg:SensorConfig = None,
                       corridor_length:float = 80.0,
                       cruise_speed:float = 1.0,
                       leg_scale_error:float = None,
                       packet_loss:tuple = None) -> dict[str, Scenario]:
    '''
    Named experiment setups

    Parameters
    ----------
    cfg : SensorConfig, optional
        Base sensor configuration (def: SensorConfig())
    corridor_length : float, optional
        Length of the travelled corridor in the corridor scenarios (m) (def: 80)
    cruise_speed : float, optional
        Cruise speed of every straight (m/s) (def: 1.0)
    leg_scale_error, packet_loss : optional
        Replace the leg faults each scenario injects (def: None, scenario's own)

    Returns
    -------
    dict[str, Scenario]
        corridor_ab, corridor_featured and garage_L
    '''
    cfg = SensorConfig() if cfg is None else cfg

    def sensors(scale:float, loss:tuple) -> SensorConfig:
        return replace(cfg,
                       leg_scale_error = scale if leg_scale_error is None else leg_scale_error,
                       packet_loss = loss if packet_loss is None else packet_loss)

    scenarios = {}
    ab_traj = _out_and_back(corridor_length, cruise_speed)
    ab_groups = [('a-b', ['a', 'a1', 'a2', 'a3', 'b']), ('b-a', ['b', 'a3', 'a2', 'a1', 'a'])]
    # two seconds of leg packet loss straddling the deceleration into b
    arrival = next(t for name, t in ab_traj.visits if name == 'b')
    ramp = min(2.0, corridor_length / cruise_speed)
    loss = ((arrival - ramp - 0.5, 2.0),)
    scenarios['corridor_ab'] = Scenario(
        'corridor_ab', _corridor_world(corridor_length, False), ab_traj, sensors(0.03, loss), ab_traj.segment_spec(ab_groups))
    featured_traj = _out_and_back(corridor_length, cruise_speed)
    scenarios['corridor_featured'] = Scenario(
        'corridor_featured', _corridor_world(corridor_length, True), featured_traj, sensors(0.0, ()), featured_traj.segment_spec(ab_groups))
    garage_traj = _garage_trajectory(cruise_speed)
    garage_groups = [('a-d', ['a', 'b', 'c', 'd']), ('d-h', ['d', 'e', 'f', 'g', 'h']),
                     ('h-d', ['h', 'g', 'f', 'e', 'd']), ('d-a', ['d', 'c', 'b', 'a'])]
    scenarios['garage_L'] = Scenario(
        'garage_L', _garage_world(), garage_traj, sensors(0.03, ()), garage_traj.segment_spec(garage_groups))
    return scenarios
