import glob
import logging
import os
import tempfile

import numpy as np
import pandas as pd
import yaml

from .adaptive_fusion import EpochDiagnostics
from .errors import DataError, LogFormatError, SchemaError, TimestampOrderError
from .evaluation import MetricsReport, Segment, SegmentSpec, Trajectory
from .filter_core import ImuSample
from .leg_pipeline import LegOdomSample
from .lidar_pipeline import LidarScan
from .simulator import SensorLog


logger = logging.getLogger()

FLOAT_FORMAT = '%.9g'

IMU_COLUMNS = ['t', 'wx', 'wy', 'wz', 'ax', 'ay', 'az']
LEG_COLUMNS = ['t', 'vx', 'vy', 'vz']
LEG_YAW_COLUMN = 'wz'
POSE_COLUMNS = ['t', 'x', 'y', 'z', 'qw', 'qx', 'qy', 'qz']
SEGMENT_COLUMNS = ['name', 'point_start', 'point_end', 't_start', 't_end', 'true_distance_m']
DIAGNOSTICS_COLUMNS = ['t', 'n_corr', 'r_mean', 'r_var', 'o_lidar', 'c_il', 'd_k', 'd_smooth',
                       'gamma_lidar', 'gamma_leg', 'lidar_skipped', 'leg_skipped']
COVARIANCE_COLUMNS = ['t', 'pxx', 'pxy', 'pxz', 'pyy', 'pyz', 'pzz']


# atomic writing

def atomic_write_text(path:str, text:str) -> None:
    '''Write text through a temporary file renamed over path'''
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix='.tmp_', suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, 'w', newline='') as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise

def write_table(path:str, df:pd.DataFrame, preamble:str = '', header:bool = True) -> None:
    atomic_write_text(path, preamble + df.to_csv(index=False, header=header, float_format=FLOAT_FORMAT, lineterminator='\n'))


# reading

def read_table(path:str,
               columns:list[str],
               optional:list[str] = (),
               numeric:list[str] = None,
               skiprows:int = 0,
               header:bool = True) -> pd.DataFrame:
    '''
    Read a CSV table and check its schema

    Parameters
    ----------
    path : str
        CSV file
    columns : list[str]
        Required columns, in order
    optional : list[str], optional
        Extra columns that may follow the required ones
    numeric : list[str], optional
        Columns that must hold finite numbers (def: all of them)
    skiprows : int, optional
        Lines before the table (def: 0)
    header : bool, optional
        The table has a header line (def: True)

    Returns
    -------
    pd.DataFrame
        Table with the numeric columns as float

    Raises
    ------
    SchemaError
        Missing or unexpected columns
    LogFormatError
        Malformed or non-numeric row, with its line number
    '''
    first_line = skiprows + (2 if header else 1)
    try:
        if header:
            df = pd.read_csv(path, skiprows=skiprows, dtype=str, keep_default_na=False)
        else:
            df = pd.read_csv(path, skiprows=skiprows, header=None, names=columns, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        df = pd.DataFrame(columns=columns)
    except pd.errors.ParserError as e:
        raise LogFormatError(os.path.basename(path), first_line, f"malformed CSV: {e}") from e
    found = list(df.columns)
    if found[:len(columns)] != list(columns) or any(c not in optional for c in found[len(columns):]):
        raise SchemaError(f"{os.path.basename(path)}: expected columns {','.join(columns)}, found {','.join(map(str, found))}")
    for col in (numeric if numeric is not None else found):
        values = pd.to_numeric(df[col], errors='coerce')
        bad = ~np.isfinite(values.to_numpy(dtype=np.float64))
        if np.any(bad):
            row = int(np.flatnonzero(bad)[0])
            raise LogFormatError(os.path.basename(path), first_line + row, f"invalid value '{df[col].iloc[row]}' in column '{col}'")
        df[col] = values.astype(np.float64)
    return df

def check_time_order(path:str, t:np.ndarray, first_line:int = 2) -> None:
    '''Timestamps must strictly increase, the offending line is reported'''
    bad = np.flatnonzero(np.diff(t) <= 0)
    if bad.shape[0]:
        row = int(bad[0]) + 1
        raise TimestampOrderError(os.path.basename(path), first_line + row, f"timestamp {t[row]:.9g} does not follow {t[row - 1]:.9g}")

def read_scan(path:str) -> LidarScan:
    with open(path, 'r') as f:
        first = f.readline().strip()
    if not first.startswith('t='):
        raise LogFormatError(os.path.basename(path), 1, f"expected 't=<seconds>', found '{first}'")
    try:
        t = float(first[2:])
    except ValueError:
        raise LogFormatError(os.path.basename(path), 1, f"invalid scan timestamp '{first[2:]}'") from None
    df = read_table(path, ['x', 'y', 'z'], skiprows=1, header=False)
    return LidarScan(t, df[['x', 'y', 'z']].to_numpy())

def read_trajectory(path:str) -> Trajectory:
    '''Read a trajectory.csv or gt.csv file'''
    df = read_table(path, POSE_COLUMNS)
    check_time_order(path, df['t'].to_numpy())
    return Trajectory(df['t'].to_numpy(), df[['x', 'y', 'z']].to_numpy(), df[['qw', 'qx', 'qy', 'qz']].to_numpy())

def read_segments(path:str) -> SegmentSpec:
    df = read_table(path, SEGMENT_COLUMNS, numeric=['t_start', 't_end', 'true_distance_m'])
    segments = []
    for i, row in enumerate(df.itertuples(index=False)):
        try:
            segments.append(Segment(row.name, row.point_start, row.point_end, row.t_start, row.t_end, row.true_distance_m))
        except ValueError as e:
            raise LogFormatError(os.path.basename(path), i + 2, str(e)) from e
    return SegmentSpec(tuple(segments))

def read_log(directory:str) -> SensorLog:
    '''
    Read a SensorLog directory

    imu.csv is required; leg.csv, gt.csv and segments.csv may be missing
    (empty leg stream, no ground truth, no segments).

    Parameters
    ----------
    directory : str
        Log directory

    Returns
    -------
    SensorLog
        Streams in file order
    '''
    if not os.path.isdir(directory):
        raise DataError(f"Log directory not found: {directory}")
    imu_path = os.path.join(directory, 'imu.csv')
    if not os.path.isfile(imu_path):
        raise DataError(f"Missing IMU stream: {imu_path}")
    df = read_table(imu_path, IMU_COLUMNS)
    check_time_order(imu_path, df['t'].to_numpy())
    data = df[IMU_COLUMNS].to_numpy()
    imu = [ImuSample(float(r[0]), tuple(r[1:4]), tuple(r[4:7])) for r in data]

    leg = []
    leg_path = os.path.join(directory, 'leg.csv')
    if os.path.isfile(leg_path):
        df = read_table(leg_path, LEG_COLUMNS, optional=[LEG_YAW_COLUMN])
        check_time_order(leg_path, df['t'].to_numpy())
        v = df[['vx', 'vy', 'vz']].to_numpy()
        wz = df[LEG_YAW_COLUMN].to_numpy() if LEG_YAW_COLUMN in df else [None] * len(df)
        leg = [LegOdomSample(float(t), tuple(vi), None if w is None else float(w)) for t, vi, w in zip(df['t'].to_numpy(), v, wz)]
    else:
        logger.warning(f"WARNING: No leg stream in {directory}, fusing LiDAR and IMU only")

    scan_files = sorted(glob.glob(os.path.join(directory, 'lidar', '*.csv')))
    scans = [read_scan(p) for p in scan_files]
    t_scans = np.array([s.t for s in scans])
    if t_scans.shape[0] > 1 and np.any(np.diff(t_scans) <= 0):
        i = int(np.flatnonzero(np.diff(t_scans) <= 0)[0]) + 1
        raise TimestampOrderError(os.path.basename(scan_files[i]), 1, f"scan time {t_scans[i]:.9g} does not follow {t_scans[i - 1]:.9g}")

    gt_path = os.path.join(directory, 'gt.csv')
    gt = read_trajectory(gt_path) if os.path.isfile(gt_path) else Trajectory(np.zeros(0), np.zeros((0, 3)), np.zeros((0, 4)))
    seg_path = os.path.join(directory, 'segments.csv')
    segments = read_segments(seg_path) if os.path.isfile(seg_path) else SegmentSpec()
    logger.debug(f"Read {len(imu)} IMU samples, {len(scans)} scans, {len(leg)} leg samples from {directory}")
    return SensorLog(imu, scans, leg, gt, segments)


# writing

def pose_table(t:np.ndarray, p:np.ndarray, q:np.ndarray) -> pd.DataFrame:
    q = np.asarray(q, dtype=np.float64).reshape(-1, 4)
    norms = np.linalg.norm(q, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise DataError(f"Non-unit quaternion (norm {norms[np.argmax(np.abs(norms - 1.0))]:.9g})")
    return pd.DataFrame(np.column_stack([t, p, q]), columns=POSE_COLUMNS)

def segments_table(segments:SegmentSpec) -> pd.DataFrame:
    return pd.DataFrame(
        [(s.name, s.point_start, s.point_end, s.t_start, s.t_end, s.true_distance) for s in segments],
        columns=SEGMENT_COLUMNS)

def write_log(directory:str, log:SensorLog) -> None:
    '''Write a SensorLog directory, every file written atomically'''
    os.makedirs(os.path.join(directory, 'lidar'), exist_ok=True)
    imu = np.array([(s.t, *s.omega_m, *s.a_m) for s in log.imu]).reshape(-1, len(IMU_COLUMNS))
    write_table(os.path.join(directory, 'imu.csv'), pd.DataFrame(imu, columns=IMU_COLUMNS))
    if log.leg and all(s.omega_z is not None for s in log.leg):
        leg = np.array([(s.t, *s.v_body, s.omega_z) for s in log.leg]).reshape(-1, 5)
        write_table(os.path.join(directory, 'leg.csv'), pd.DataFrame(leg, columns=LEG_COLUMNS + [LEG_YAW_COLUMN]))
    else:
        leg = np.array([(s.t, *s.v_body) for s in log.leg]).reshape(-1, 4)
        write_table(os.path.join(directory, 'leg.csv'), pd.DataFrame(leg, columns=LEG_COLUMNS))
    for old in glob.glob(os.path.join(directory, 'lidar', '*.csv')):
        os.remove(old)
    for i, scan in enumerate(log.scans):
        write_table(os.path.join(directory, 'lidar', f"{i:06d}.csv"), pd.DataFrame(scan.points, columns=['x', 'y', 'z']),
                    preamble=f"t={FLOAT_FORMAT % scan.t}\n", header=False)
    if len(log.gt):
        write_table(os.path.join(directory, 'gt.csv'), pose_table(log.gt.t, log.gt.p, log.gt.q))
    write_table(os.path.join(directory, 'segments.csv'), segments_table(log.segments))

def write_trajectory(path:str, states:list) -> None:
    '''TrajectoryRecord rows (t, position, quaternion) of NominalStates'''
    t = np.array([s.t for s in states])
    p = np.array([s.p for s in states]).reshape(-1, 3)
    q = np.array([s.R.quaternion for s in states]).reshape(-1, 4)
    write_table(path, pose_table(t, p, q))

def write_diagnostics(path:str, diagnostics:list[EpochDiagnostics]) -> None:
    df = pd.DataFrame([[getattr(d, c) for c in DIAGNOSTICS_COLUMNS] for d in diagnostics], columns=DIAGNOSTICS_COLUMNS)
    df = df.astype({'n_corr': int, 'lidar_skipped': int, 'leg_skipped': int})
    write_table(path, df)

def read_diagnostics(path:str) -> pd.DataFrame:
    df = read_table(path, DIAGNOSTICS_COLUMNS)
    check_time_order(path, df['t'].to_numpy())
    return df

def write_covariance(path:str, states:list, covariances:list) -> None:
    '''Upper triangle of the position covariance block per epoch'''
    rows = []
    for s, P in zip(states, covariances):
        Pp = np.asarray(P)[3:6, 3:6]
        rows.append((s.t, Pp[0, 0], Pp[0, 1], Pp[0, 2], Pp[1, 1], Pp[1, 2], Pp[2, 2]))
    write_table(path, pd.DataFrame(rows, columns=COVARIANCE_COLUMNS))

def read_covariance(path:str) -> tuple[np.ndarray, np.ndarray]:
    '''Timestamps (N,) and position covariances (N, 3, 3)'''
    df = read_table(path, COVARIANCE_COLUMNS)
    check_time_order(path, df['t'].to_numpy())
    xx, xy, xz, yy, yz, zz = (df[c].to_numpy() for c in COVARIANCE_COLUMNS[1:])
    cov = np.stack([np.stack([xx, xy, xz], -1), np.stack([xy, yy, yz], -1), np.stack([xz, yz, zz], -1)], 1)
    return df['t'].to_numpy(), cov

def write_report(path:str, reports:list[MetricsReport]) -> str:
    '''
    Write metrics as YAML key-values plus a CSV table beside it

    Returns
    -------
    str
        Path of the CSV table
    '''
    content = {}
    for r in reports:
        entry = {
            'm_list': {name: float(v) for name, v in r.m_list.items()},
            'm_list_total': float(r.m_list_total),
            'm_end': float(r.m_end),
            'z_drift_max': float(r.z_drift_max),
            'path_length': float(r.path_length)}
        if r.nees_mean is not None:
            entry['nees_mean'] = float(r.nees_mean)
        entry['segments'] = [
            {'name': s.name, 'point_start': s.point_start, 'point_end': s.point_end,
             'd_hat': float(s.d_hat), 'd': float(s.d), 'abs_error': float(s.abs_error)}
            for s in r.segments]
        content[r.label] = entry
    atomic_write_text(path, yaml.safe_dump(content, sort_keys=False))
    groups = list(dict.fromkeys(name for r in reports for name in r.m_list))
    rows = []
    for r in reports:
        rows.append([r.label] + [r.m_list.get(g, np.nan) for g in groups]
                    + [r.m_list_total, r.m_end, r.z_drift_max, np.nan if r.nees_mean is None else r.nees_mean])
    columns = ['label'] + [f"m_list_{g}" for g in groups] + ['m_list_total', 'm_end', 'z_drift_max', 'nees_mean']
    csv_path = f"{os.path.splitext(path)[0]}.csv"
    write_table(csv_path, pd.DataFrame(rows, columns=columns))
    return csv_path
