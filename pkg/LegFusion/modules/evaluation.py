import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import OutOfRange


logger = logging.getLogger()

# slack on the trajectory span when interpolating (s)
SPAN_TOLERANCE = 1e-6


@dataclass(frozen=True)
class Segment:
    '''Reference segment: group name, endpoint ids, endpoint times (s) and true distance (m)'''
    name: str
    point_start: str
    point_end: str
    t_start: float
    t_end: float
    true_distance: float

    def __post_init__(self):
        if not self.true_distance > 0:
            raise ValueError(f"Segment {self.point_start}-{self.point_end}: true distance must be positive, got {self.true_distance}")
        if not self.t_start < self.t_end:
            raise ValueError(f"Segment {self.point_start}-{self.point_end}: t_start ({self.t_start}) must precede t_end ({self.t_end})")

@dataclass(frozen=True)
class SegmentSpec:
    '''Ordered reference segments, grouped by name'''
    segments: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, 'segments', tuple(self.segments))

    def __iter__(self):
        return iter(self.segments)

    def __len__(self):
        return len(self.segments)

    def groups(self) -> dict[str, 'SegmentSpec']:
        '''Segments per group name, in order of first appearance'''
        grouped = {}
        for s in self.segments:
            grouped.setdefault(s.name, []).append(s)
        return {name: SegmentSpec(tuple(segs)) for name, segs in grouped.items()}

@dataclass(frozen=True, eq=False)
class Trajectory:
    '''
    Timestamped positions (and optionally orientations)

    t : (N,) seconds, strictly increasing
    p : (N, 3) meters
    q : (N, 4) unit quaternions (qw, qx, qy, qz) or None
    '''
    t: np.ndarray
    p: np.ndarray
    q: np.ndarray = None

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.float64).reshape(-1)
        p = np.asarray(self.p, dtype=np.float64).reshape(-1, 3)
        if t.shape[0] != p.shape[0]:
            raise ValueError(f"Trajectory has {t.shape[0]} timestamps but {p.shape[0]} positions")
        if np.any(np.diff(t) <= 0):
            raise ValueError("Trajectory timestamps must be strictly increasing")
        object.__setattr__(self, 't', t)
        object.__setattr__(self, 'p', p)
        if self.q is not None:
            object.__setattr__(self, 'q', np.asarray(self.q, dtype=np.float64).reshape(-1, 4))

    def __len__(self):
        return self.t.shape[0]

    def position_at(self, t:float) -> np.ndarray:
        '''Linearly interpolated position, OutOfRange outside the trajectory span'''
        if len(self) == 0 or t < self.t[0] - SPAN_TOLERANCE or t > self.t[-1] + SPAN_TOLERANCE:
            span = f"[{self.t[0]:.3f}, {self.t[-1]:.3f}]" if len(self) else "empty"
            raise OutOfRange(f"t={t:.6f} is outside the trajectory span {span}")
        return np.array([np.interp(t, self.t, self.p[:, i]) for i in range(3)])

    def path_length(self, t_start:float = None, t_end:float = None) -> float:
        '''Integrated length of the piecewise-linear path between two times (def: whole trajectory)'''
        t_start = self.t[0] if t_start is None else t_start
        t_end = self.t[-1] if t_end is None else t_end
        inner = (self.t > t_start) & (self.t < t_end)
        pts = np.vstack([self.position_at(t_start), self.p[inner], self.position_at(t_end)])
        return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


@dataclass(frozen=True)
class SegmentResult:
    name: str
    point_start: str
    point_end: str
    d_hat: float
    d: float

    @property
    def abs_error(self) -> float:
        return abs(self.d_hat - self.d)

@dataclass
class MetricsReport:
    '''Metrics of one estimated trajectory'''
    label: str
    m_list: dict = field(default_factory=dict)
    m_list_total: float = 0.0
    m_end: float = 0.0
    z_drift_max: float = 0.0
    path_length: float = 0.0
    nees_mean: float = None
    segments: list = field(default_factory=list)

    def __post_init__(self):
        values = [self.m_list_total, self.m_end, self.z_drift_max, *self.m_list.values()]
        if any(v < 0 for v in values):
            raise ValueError(f"Negative metric in report '{self.label}'")


def estimated_segment_distance(traj:Trajectory,
                               t_start:float,
                               t_end:float,
                               path_length:bool = False) -> float:
    '''
    Estimated distance travelled between two times

    Parameters
    ----------
    traj : Trajectory
        Estimated trajectory
    t_start, t_end : float
        Segment endpoint times (s), t_start < t_end
    path_length : bool, optional
        Integrate the path instead of taking the straight chord (def: False)

    Returns
    -------
    float
        Chord (or path length) between the interpolated positions (m)
    '''
    if not t_start < t_end:
        raise ValueError(f"t_start ({t_start}) must precede t_end ({t_end})")
    if path_length:
        return traj.path_length(t_start, t_end)
    return float(np.linalg.norm(traj.position_at(t_end) - traj.position_at(t_start)))

def segment_results(segments:SegmentSpec, traj:Trajectory, path_length:bool = False) -> list[SegmentResult]:
    return [
        SegmentResult(s.name, s.point_start, s.point_end,
                      estimated_segment_distance(traj, s.t_start, s.t_end, path_length), s.true_distance)
        for s in segments]

def m_list(segments:SegmentSpec, traj:Trajectory, path_length:bool = False) -> float:
    '''Degeneration error: sum of |d_hat - d| over the sum of d'''
    if len(segments) == 0:
        raise ValueError("At least one segment is needed")
    results = segment_results(segments, traj, path_length)
    return sum(r.abs_error for r in results) / sum(r.d for r in results)

def m_end(traj:Trajectory) -> float:
    '''Endpoint drift: distance between the final and the initial estimated position'''
    if len(traj) == 0:
        raise ValueError("Empty trajectory")
    return float(np.linalg.norm(traj.p[-1] - traj.p[0]))

def z_drift_max(traj:Trajectory) -> float:
    '''Largest vertical departure from the starting height'''
    if len(traj) == 0:
        return 0.0
    return float(np.max(np.abs(traj.p[:, 2] - traj.p[0, 2])))

def position_nees(traj:Trajectory, cov:np.ndarray, gt:Trajectory) -> np.ndarray:
    '''
    Normalized estimation error squared of the position block

    Parameters
    ----------
    traj : Trajectory
        Estimated trajectory
    cov : np.ndarray
        Position covariances (N, 3, 3) at the trajectory timestamps
    gt : Trajectory
        Ground truth, interpolated at the trajectory timestamps

    Returns
    -------
    np.ndarray
        NEES (N,) per epoch
    '''
    cov = np.asarray(cov, dtype=np.float64).reshape(-1, 3, 3)
    if cov.shape[0] != len(traj):
        raise ValueError(f"{cov.shape[0]} covariances for {len(traj)} trajectory epochs")
    err = traj.p - np.array([gt.position_at(t) for t in traj.t])
    return np.einsum('ni,ni->n', err, np.linalg.solve(cov, err[:, :, None])[:, :, 0])

def evaluate_trajectory(traj:Trajectory,
                        segments:SegmentSpec,
                        label:str = 'estimate',
                        path_length:bool = False,
                        gt:Trajectory = None,
                        cov:np.ndarray = None) -> MetricsReport:
    '''
    Every metric of one trajectory

    Parameters
    ----------
    traj : Trajectory
        Estimated trajectory
    segments : SegmentSpec
        Reference segments
    label : str, optional
        Row label in the report (def: 'estimate')
    path_length : bool, optional
        Path-length segment distances instead of chords (def: False)
    gt : Trajectory, optional
        Ground truth, needed with cov for the NEES
    cov : np.ndarray, optional
        Position covariances (N, 3, 3)

    Returns
    -------
    MetricsReport
        Per-group and combined M_list, M_end, vertical drift and segment rows
    '''
    results = segment_results(segments, traj, path_length)
    groups = {}
    for name, group in segments.groups().items():
        groups[name] = m_list(group, traj, path_length)
    total = sum(r.abs_error for r in results) / sum(r.d for r in results) if results else 0.0
    nees = None
    if gt is not None and cov is not None:
        nees = float(np.mean(position_nees(traj, cov, gt)))
    report = MetricsReport(
        label = label,
        m_list = groups,
        m_list_total = total,
        m_end = m_end(traj),
        z_drift_max = z_drift_max(traj),
        path_length = traj.path_length(),
        nees_mean = nees,
        segments = results)
    logger.debug(f"{label}: M_list={total:.4f}, M_end={report.m_end:.4f} m")
    return report
