import logging
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientCoverage, NoSamples
from .filter_core import MeasurementBundle
from .manifold import DIM_STATE, POS, THETA, NominalState, log_so3, right_jacobian_inv


logger = logging.getLogger()


@dataclass(frozen=True)
class LegParams:
    sigma_leg: float = 0.05
    min_valid_fraction: float = 0.5
    nominal_period: float = 1/200
    gap_factor: float = 5.0
    use_yaw_rate: bool = False
    sigma_leg_yaw: float = 0.05

@dataclass(frozen=True, eq=False)
class LegOdomSample:
    '''Leg-odometry reading: time (s), body-frame velocity (m/s), optional yaw rate (rad/s)'''
    t: float
    v_body: tuple
    omega_z: float = None

@dataclass(frozen=True, eq=False)
class LegIncrement:
    '''Body-frame translation (and optional yaw) integrated over one filter epoch'''
    dt_total: float
    dp_body: np.ndarray
    valid_fraction: float
    dyaw: float = None
    n_samples: int = 0
    extrapolated: bool = False

    def __post_init__(self):
        if not self.dt_total > 0:
            raise ValueError(f"Leg increment needs a positive duration, got {self.dt_total}")
        if not 0.0 <= self.valid_fraction <= 1.0:
            raise ValueError(f"Valid fraction out of [0, 1]: {self.valid_fraction}")
        object.__setattr__(self, 'dp_body', np.asarray(self.dp_body, dtype=np.float64).reshape(3))


def integrate_leg(samples:list[LegOdomSample],
                  t0:float,
                  t1:float,
                  nominal_period:float = 1/200,
                  gap_factor:float = 5.0,
                  fill_velocity:np.ndarray = None) -> LegIncrement:
    '''
    Integrate body-frame leg velocity over the epoch [t0, t1]

    Consecutive samples closer than gap_factor nominal periods are joined
    with the trapezoidal rule, and the first and last readings are held
    to the window bounds under the same limit. Longer gaps are left out;
    the integral over the covered part is then rescaled to the whole
    window with its mean velocity. With fill_velocity, uncovered time is
    instead integrated at that constant velocity and an empty window is
    not an error.

    Parameters
    ----------
    samples : list[LegOdomSample]
        Leg samples, only those with t0 <= t <= t1 are used
    t0, t1 : float
        Epoch bounds (s), t1 > t0
    nominal_period : float, optional
        Nominal sample period (s) (def: 1/200)
    gap_factor : float, optional
        Gaps longer than this many periods are not bridged (def: 5)
    fill_velocity : np.ndarray, optional
        Body velocity extrapolated over uncovered time (def: None, no extrapolation)

    Returns
    -------
    LegIncrement
        Increment with valid_fraction = min(1, samples * period / window)
    '''
    if not t1 > t0:
        raise ValueError(f"Leg window must have t1 > t0, got [{t0}, {t1}]")
    window = sorted((s for s in samples if t0 <= s.t <= t1), key=lambda s: s.t)
    dt_total = t1 - t0
    valid_fraction = min(1.0, len(window) * nominal_period / dt_total)
    if not window:
        if fill_velocity is None:
            raise NoSamples(f"No leg samples in [{t0:.3f}, {t1:.3f}]")
        return LegIncrement(dt_total, np.asarray(fill_velocity) * dt_total, 0.0, None, 0, True)

    gap_limit = gap_factor * nominal_period
    t = np.array([s.t for s in window])
    v = np.array([s.v_body for s in window], dtype=np.float64).reshape(-1, 3)
    has_yaw = all(s.omega_z is not None for s in window)
    w = np.array([s.omega_z for s in window], dtype=np.float64) if has_yaw else np.zeros(len(window))

    dp = np.zeros(3)
    dyaw = 0.0
    covered = 0.0
    # window bounds held to the nearest reading
    for gap, v_hold, w_hold in ((t[0] - t0, v[0], w[0]), (t1 - t[-1], v[-1], w[-1])):
        if gap <= gap_limit:
            dp += v_hold * gap
            dyaw += w_hold * gap
            covered += gap
    dt = np.diff(t)
    bridged = dt <= gap_limit
    dp += np.sum(0.5 * (v[1:] + v[:-1])[bridged] * dt[bridged, None], axis=0)
    dyaw += float(np.sum(0.5 * (w[1:] + w[:-1])[bridged] * dt[bridged]))
    covered += float(dt[bridged].sum())

    uncovered = dt_total - covered
    extrapolated = False
    if uncovered > 1e-12:
        if fill_velocity is not None:
            dp += np.asarray(fill_velocity) * uncovered
            dyaw += w[-1] * uncovered
            extrapolated = True
        elif covered > 0.0:
            dp *= dt_total / covered
            dyaw *= dt_total / covered
        else:
            # lone sample far from both bounds
            dp = v[0] * dt_total
            dyaw = w[0] * dt_total
    return LegIncrement(dt_total, dp, valid_fraction, dyaw if has_yaw else None, len(window), extrapolated)

def assemble_leg_bundle(inc:LegIncrement,
                        prev_state:NominalState,
                        state:NominalState,
                        sigma_leg:float,
                        min_valid_fraction:float = 0.5,
                        coverage_gating:bool = True,
                        use_yaw_rate:bool = False,
                        sigma_leg_yaw:float = 0.05) -> MeasurementBundle:
    '''
    Relative-translation constraint between two consecutive epochs

    The previous state is a fixed anchor, so only the current position
    (and, with the yaw row, the current orientation) is corrected.

    Parameters
    ----------
    inc : LegIncrement
        Measured increment over the epoch
    prev_state : NominalState
        Posterior of the previous epoch
    state : NominalState
        Current state being corrected
    sigma_leg : float
        Leg noise (m/sqrt(s))
    min_valid_fraction : float, optional
        Coverage below this raises InsufficientCoverage (def: 0.5)
    coverage_gating : bool, optional
        Apply the coverage threshold and the 1/valid_fraction inflation (def: True)
    use_yaw_rate : bool, optional
        Add the yaw-increment row when the increment carries one (def: False)
    sigma_leg_yaw : float, optional
        Yaw increment noise (rad/sqrt(s)) (def: 0.05)

    Returns
    -------
    MeasurementBundle
        3 rows (translation) or 4 rows (translation and yaw)
    '''
    if not prev_state.t < state.t:
        raise ValueError(f"Leg anchor at t={prev_state.t} is not older than the state at t={state.t}")
    if coverage_gating and inc.valid_fraction < min_valid_fraction:
        raise InsufficientCoverage(f"Leg coverage {inc.valid_fraction:.2f} below {min_valid_fraction}")
    R_prev_T = prev_state.R.inverse().matrix
    z_hat = R_prev_T @ (state.p - prev_state.p)
    inflation = 1.0 / inc.valid_fraction if coverage_gating else 1.0
    rows = 3
    with_yaw = use_yaw_rate and inc.dyaw is not None
    if with_yaw:
        rows = 4
    H = np.zeros((rows, DIM_STATE))
    r = np.zeros(rows)
    Rn = np.zeros((rows, rows))
    H[:3, POS] = R_prev_T
    r[:3] = inc.dp_body - z_hat
    Rn[:3, :3] = sigma_leg**2 * inc.dt_total * inflation * np.eye(3)
    if with_yaw:
        phi = log_so3(prev_state.R.inverse() * state.R)
        H[3, THETA] = right_jacobian_inv(phi)[2]
        # wrapped into (-pi, pi]
        r[3] = np.angle(np.exp(1j * (inc.dyaw - phi[2])))
        Rn[3, 3] = sigma_leg_yaw**2 * inc.dt_total * inflation
    return MeasurementBundle(H, r, Rn)
