import logging
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field

import numpy as np

from .degeneracy import (DegeneracyIndices, DegeneracyParams, consistency_metric,
                         degeneracy_index, observability_metric, residual_stats)
from .errors import IllConditioned, MeasurementUnavailable, NoSamples, SingularInnovation
from .filter_core import (MAX_DT, ImuNoiseParams, ImuSample, eskf_update,
                          initial_covariance, iterated_update, propagate)
from .leg_pipeline import LegOdomSample, LegParams, assemble_leg_bundle, integrate_leg
from .lidar_pipeline import (LidarExtrinsics, LidarParams, LidarScan, LocalMap,
                             assemble_lidar_bundle, find_correspondences, integrate_scan,
                             provisional_lidar_update, subsample_correspondences)
from .manifold import NominalState, boxminus


logger = logging.getLogger()

# timestamps closer than this are the same instant
TIME_EPS = 1e-9


@dataclass(frozen=True)
class AdaptiveParams:
    eta: float = 2.0
    gamma_min: float = 0.2
    alpha: float = 0.9
    enabled: bool = True

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if not 0 < self.gamma_min <= 1:
            raise ValueError(f"gamma_min must be in (0, 1], got {self.gamma_min}")
        if not 0 <= self.alpha < 1:
            raise ValueError(f"alpha must be in [0, 1), got {self.alpha}")

@dataclass(frozen=True)
class ReliabilityFactors:
    gamma_lidar: float = 1.0
    gamma_leg: float = 1.0


def lidar_reliability(d_smooth:float, params:AdaptiveParams = AdaptiveParams()) -> float:
    '''gamma_lidar = exp(-eta * D), D the smoothed degeneracy index'''
    return float(np.exp(-params.eta * d_smooth))

def leg_reliability(d_smooth:float, params:AdaptiveParams = AdaptiveParams()) -> float:
    '''gamma_leg = gamma_min + (1 - gamma_min) (1 - D), D the smoothed degeneracy index'''
    return params.gamma_min + (1.0 - params.gamma_min) * (1.0 - d_smooth)

def scale_covariance(Rn:np.ndarray, gamma:float) -> np.ndarray:
    '''Inflate a measurement covariance by 1/gamma'''
    if not 0 < gamma <= 1:
        raise ValueError(f"Reliability factor must be in (0, 1], got {gamma}")
    return np.asarray(Rn, dtype=np.float64) / gamma

def smooth_index(d_prev_smooth:float, d_k:float, params:AdaptiveParams = AdaptiveParams()) -> float:
    '''
    Exponential smoothing of the degeneracy index

    Parameters
    ----------
    d_prev_smooth : float
        Previous smoothed index, None on the first evaluated epoch
    d_k : float
        Current raw index
    params : AdaptiveParams, optional
        Provides the smoothing factor alpha

    Returns
    -------
    float
        alpha * d_prev_smooth + (1 - alpha) * d_k, or d_k on the first epoch
    '''
    if d_prev_smooth is None:
        return d_k
    return params.alpha * d_prev_smooth + (1.0 - params.alpha) * d_k


@dataclass(frozen=True)
class FusionParams:
    '''Everything the fusion loop reads, grouped per pipeline'''
    noise: ImuNoiseParams = field(default_factory=ImuNoiseParams)
    lidar: LidarParams = field(default_factory=LidarParams)
    extrinsics: LidarExtrinsics = field(default_factory=lambda: LidarExtrinsics(t=(-0.2, 0.0, 0.15)))
    leg: LegParams = field(default_factory=LegParams)
    degeneracy: DegeneracyParams = field(default_factory=DegeneracyParams)
    adaptive: AdaptiveParams = field(default_factory=AdaptiveParams)
    use_lidar: bool = True
    use_leg: bool = True
    max_dt: float = MAX_DT
    initial_sigmas: tuple = (0.01, 0.01, 0.05, 1.0e-3, 1.0e-2)

@dataclass(frozen=True)
class EpochDiagnostics:
    '''One row of diagnostics.csv'''
    t: float
    n_corr: int = 0
    r_mean: float = 0.0
    r_var: float = 0.0
    o_lidar: float = 0.0
    c_il: float = 0.0
    d_k: float = 0.0
    d_smooth: float = 0.0
    gamma_lidar: float = 1.0
    gamma_leg: float = 1.0
    lidar_skipped: int = 0
    leg_skipped: int = 0

@dataclass
class FusionState:
    '''
    Everything the fuser carries from one epoch to the next

    Owned by a single fusion loop and advanced in place by fusion_step.
    '''
    state: NominalState
    cov: np.ndarray
    local_map: LocalMap
    anchor: NominalState = None
    d_smooth: float = None
    c_il_prev: float = 0.0
    last_leg_velocity: np.ndarray = None
    skips: dict = field(default_factory=lambda: {'lidar_bootstrap': 0, 'lidar_correspondences': 0, 'lidar_singular': 0,
                                                  'leg_no_samples': 0, 'leg_coverage': 0, 'leg_singular': 0})

    @classmethod
    def initial(cls, state:NominalState, params:FusionParams) -> 'FusionState':
        return cls(
            state = state,
            cov = initial_covariance(*params.initial_sigmas),
            local_map = LocalMap.from_params(params.lidar),
            anchor = state)

@dataclass(frozen=True, eq=False)
class EpochResult:
    state: NominalState
    cov: np.ndarray
    indices: DegeneracyIndices
    factors: ReliabilityFactors
    diagnostics: EpochDiagnostics


def propagate_window(state:NominalState,
                     cov:np.ndarray,
                     imu_window:list[ImuSample],
                     t_end:float,
                     noise:ImuNoiseParams,
                     max_dt:float = MAX_DT) -> tuple[NominalState, np.ndarray]:
    '''
    Propagate through every IMU sample up to t_end

    Each reading is applied over the interval ending at its timestamp; the
    last reading is held up to t_end if the window stops short of it. A
    reading past t_end is only used when nothing earlier is available.
    '''
    last = None
    for imu in imu_window:
        if imu.t > t_end + TIME_EPS:
            if last is None:
                last = imu
            break
        last = imu
        dt = imu.t - state.t
        if dt <= TIME_EPS:
            continue
        state, cov = propagate(state, cov, imu, dt, noise, max_dt)
    dt = t_end - state.t
    if dt > TIME_EPS:
        if last is None:
            raise MeasurementUnavailable(f"No IMU sample to propagate from t={state.t:.6f} to t={t_end:.6f}")
        state, cov = propagate(state, cov, last, dt, noise, max_dt)
    return state.replace(t=t_end), cov

def _lidar_stage(fusion:FusionState,
                 scan:LidarScan,
                 predicted:NominalState,
                 cov:np.ndarray,
                 params:FusionParams) -> tuple:
    '''Correspondences, degeneracy indices and the (unscaled) update inputs of one scan'''
    corrs = find_correspondences(scan, fusion.local_map, predicted, params.extrinsics, params.lidar)
    stats = residual_stats(corrs.r_i)
    if stats.count < params.degeneracy.min_correspondences:
        logger.debug(f"t={scan.t:.3f}: {stats.count} correspondences, LiDAR update skipped")
        fusion.skips['lidar_correspondences'] += 1
        return stats, 0.0, fusion.c_il_prev, None
    used = subsample_correspondences(corrs, params.lidar.max_correspondences)
    bundle = assemble_lidar_bundle(used, predicted, params.extrinsics, params.lidar.sigma_lidar)
    c_il = fusion.c_il_prev
    try:
        provisional = provisional_lidar_update(predicted, cov, bundle)
        c_il = consistency_metric(boxminus(provisional, predicted), cov)
    except SingularInnovation as e:
        logger.debug(f"t={scan.t:.3f}: {e}, LiDAR update skipped")
        fusion.skips['lidar_singular'] += 1
        return stats, observability_metric(stats, params.degeneracy), c_il, None
    except IllConditioned as e:
        logger.debug(f"t={scan.t:.3f}: {e}, previous consistency value kept")
    return stats, observability_metric(stats, params.degeneracy), c_il, used

def _leg_stage(fusion:FusionState,
               leg_window:list[LegOdomSample],
               state:NominalState,
               cov:np.ndarray,
               gamma_leg:float,
               params:FusionParams) -> tuple[NominalState, np.ndarray, bool]:
    anchor = fusion.anchor
    if anchor is None or state.t - anchor.t <= TIME_EPS:
        return state, cov, True
    extrapolate = not params.adaptive.enabled
    try:
        inc = integrate_leg(
            leg_window,
            anchor.t,
            state.t,
            params.leg.nominal_period,
            params.leg.gap_factor,
            fill_velocity = fusion.last_leg_velocity if extrapolate else None)
        bundle = assemble_leg_bundle(
            inc,
            anchor,
            state,
            params.leg.sigma_leg,
            params.leg.min_valid_fraction,
            coverage_gating = not extrapolate,
            use_yaw_rate = params.leg.use_yaw_rate,
            sigma_leg_yaw = params.leg.sigma_leg_yaw)
        state, cov = eskf_update(state, cov, bundle.with_noise(scale_covariance(bundle.Rn, gamma_leg)))
    except MeasurementUnavailable as e:
        fusion.skips['leg_no_samples' if isinstance(e, NoSamples) else 'leg_coverage'] += 1
        logger.debug(f"t={state.t:.3f}: {e}, leg update skipped")
        return state, cov, True
    except SingularInnovation as e:
        fusion.skips['leg_singular'] += 1
        logger.debug(f"t={state.t:.3f}: {e}, leg update skipped")
        return state, cov, True
    return state, cov, False

def fusion_step(fusion:FusionState,
                scan:LidarScan,
                leg_window:list[LegOdomSample],
                imu_window:list[ImuSample],
                params:FusionParams = FusionParams()) -> EpochResult:
    '''
    One fusion epoch at a LiDAR scan

    Propagates through the IMU window, evaluates the degeneracy of the
    scan against the map, commits the reweighted LiDAR update from the
    predicted prior, applies the reweighted leg update on top, and
    finally grows the map with the posterior. fusion is advanced in place.

    Parameters
    ----------
    fusion : FusionState
        Filter, map and smoothing memory of the previous epoch
    scan : LidarScan
        Scan closing the epoch, newer than the current state
    leg_window : list[LegOdomSample]
        Leg samples of the epoch
    imu_window : list[ImuSample]
        IMU samples covering (t_prev, t_scan]
    params : FusionParams, optional
        Fusion parameters and mode flags

    Returns
    -------
    EpochResult
        Posterior state and covariance with the epoch diagnostics
    '''
    if scan.t < fusion.state.t - TIME_EPS:
        raise ValueError(f"Scan at t={scan.t} is older than the filter state at t={fusion.state.t}")
    predicted, cov = propagate_window(fusion.state, fusion.cov, imu_window, scan.t, params.noise, params.max_dt)
    state = predicted

    n_corr, r_mean, r_var = 0, 0.0, 0.0
    o_lidar, c_il, d_k = 0.0, fusion.c_il_prev, 0.0
    lidar_skipped = True
    bundle_corrs = None
    bootstrap = params.use_lidar and fusion.local_map.is_empty()
    if params.use_lidar and not bootstrap:
        stats, o_lidar, c_il, bundle_corrs = _lidar_stage(fusion, scan, predicted, cov, params)
        n_corr, r_mean, r_var = stats.count, stats.mean, stats.variance
        d_k = degeneracy_index(o_lidar, c_il, params.degeneracy)
        fusion.d_smooth = smooth_index(fusion.d_smooth, d_k, params.adaptive)
        fusion.c_il_prev = c_il
    elif bootstrap:
        logger.debug(f"t={scan.t:.3f}: empty map, scan used to initialize it")
        fusion.skips['lidar_bootstrap'] += 1
    d_smooth = fusion.d_smooth if fusion.d_smooth is not None else 0.0

    if params.adaptive.enabled:
        factors = ReliabilityFactors(lidar_reliability(d_smooth, params.adaptive), leg_reliability(d_smooth, params.adaptive))
    else:
        factors = ReliabilityFactors()

    if bundle_corrs is not None:
        def bundle_fn(x:NominalState):
            bundle = assemble_lidar_bundle(bundle_corrs, x, params.extrinsics, params.lidar.sigma_lidar)
            return bundle.with_noise(scale_covariance(bundle.Rn, factors.gamma_lidar))
        try:
            state, cov = iterated_update(predicted, cov, bundle_fn, params.lidar.n_iterations)
            lidar_skipped = False
        except SingularInnovation as e:
            fusion.skips['lidar_singular'] += 1
            logger.debug(f"t={scan.t:.3f}: {e}, LiDAR update skipped")

    leg_skipped = True
    if params.use_leg:
        state, cov, leg_skipped = _leg_stage(fusion, leg_window, state, cov, factors.gamma_leg, params)
    if leg_window:
        fusion.last_leg_velocity = np.asarray(leg_window[-1].v_body, dtype=np.float64)

    if params.use_lidar:
        integrate_scan(fusion.local_map, scan, state, params.extrinsics, params.lidar.scan_voxel_size)

    fusion.state, fusion.cov, fusion.anchor = state, cov, state
    indices = DegeneracyIndices(o_lidar, c_il, d_k, d_smooth)
    diagnostics = EpochDiagnostics(
        t = scan.t,
        n_corr = n_corr,
        r_mean = r_mean,
        r_var = r_var,
        o_lidar = o_lidar,
        c_il = c_il,
        d_k = d_k,
        d_smooth = d_smooth,
        gamma_lidar = factors.gamma_lidar,
        gamma_leg = factors.gamma_leg,
        lidar_skipped = int(lidar_skipped),
        leg_skipped = int(leg_skipped))
    return EpochResult(state, cov, indices, factors, diagnostics)


@dataclass(frozen=True, eq=False)
class FusionRun:
    '''Per-epoch outputs of a fusion run'''
    states: list
    covariances: list
    diagnostics: list
    skips: dict


def run_fusion(imu:list[ImuSample],
               scans:list[LidarScan],
               leg:list[LegOdomSample],
               initial_state:NominalState,
               params:FusionParams = FusionParams()) -> FusionRun:
    '''
    Fuse whole sensor streams, one epoch per LiDAR scan

    Parameters
    ----------
    imu : list[ImuSample]
        Time-sorted IMU stream
    scans : list[LidarScan]
        Time-sorted scans
    leg : list[LegOdomSample]
        Time-sorted leg stream, may be empty
    initial_state : NominalState
        State at the start of the run
    params : FusionParams, optional
        Fusion parameters and mode flags

    Returns
    -------
    FusionRun
        Posterior state, covariance and diagnostics at every scan
    '''
    fusion = FusionState.initial(initial_state, params)
    imu_t = [s.t for s in imu]
    leg_t = [s.t for s in leg]
    states, covariances, diagnostics = [], [], []
    for scan in scans:
        if scan.t < initial_state.t - TIME_EPS:
            logger.debug(f"Scan at t={scan.t:.3f} precedes the initial state, ignored")
            continue
        t_prev = fusion.state.t
        imu_window = imu[bisect_right(imu_t, t_prev + TIME_EPS):bisect_right(imu_t, scan.t + TIME_EPS)]
        # the next sample closes the epoch if none falls inside it
        if not imu_window:
            i = bisect_right(imu_t, scan.t + TIME_EPS)
            imu_window = imu[i:i + 1]
        anchor_t = fusion.anchor.t if fusion.anchor is not None else t_prev
        leg_window = leg[bisect_left(leg_t, anchor_t - TIME_EPS):bisect_right(leg_t, scan.t + TIME_EPS)]
        result = fusion_step(fusion, scan, leg_window, imu_window, params)
        states.append(result.state)
        covariances.append(result.cov)
        diagnostics.append(result.diagnostics)
    return FusionRun(states, covariances, diagnostics, dict(fusion.skips))
