import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import DataError, GapTooLarge, NonFinite, SingularInnovation
from .manifold import (BA, BG, DIM_STATE, POS, THETA, VEL, NominalState,
                       boxminus, boxplus, exp_so3, hat, right_jacobian)


logger = logging.getLogger()

MAX_DT = 0.1


@dataclass(frozen=True, eq=False)
class ImuSample:
    '''IMU reading: time (s), angular rate (rad/s) and specific force (m/s^2), body frame'''
    t: float
    omega_m: tuple
    a_m: tuple

@dataclass(frozen=True)
class ImuNoiseParams:
    '''Continuous-time IMU noise densities and the gravity vector (world frame)'''
    sigma_g: float = 0.002
    sigma_a: float = 0.02
    sigma_bg: float = 1.0e-5
    sigma_ba: float = 1.0e-4
    gravity: tuple = (0.0, 0.0, -9.81)

@dataclass(frozen=True, eq=False)
class MeasurementBundle:
    '''
    Linearized measurement: Jacobian H (m, 15) of the predicted measurement
    with respect to the StateTangent, residual r (m,) measured minus
    predicted, and noise covariance Rn (m, m)
    '''
    H: np.ndarray
    r: np.ndarray
    Rn: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=np.float64))
        r = np.asarray(self.r, dtype=np.float64).reshape(-1)
        Rn = np.atleast_2d(np.asarray(self.Rn, dtype=np.float64))
        m = r.shape[0]
        if H.shape != (m, DIM_STATE) or Rn.shape != (m, m):
            raise ValueError(f"Inconsistent bundle dimensions: H {H.shape}, r {r.shape}, Rn {Rn.shape}")
        object.__setattr__(self, 'H', H)
        object.__setattr__(self, 'r', r)
        object.__setattr__(self, 'Rn', Rn)

    @property
    def size(self) -> int:
        return self.r.shape[0]

    def with_noise(self, Rn:np.ndarray) -> 'MeasurementBundle':
        return MeasurementBundle(self.H, self.r, Rn)


def symmetrize(P:np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)

def initial_covariance(sigma_theta:float, sigma_p:float, sigma_v:float, sigma_bg:float, sigma_ba:float) -> np.ndarray:
    '''Diagonal ErrorCovariance from per-block standard deviations'''
    sigmas = np.repeat([sigma_theta, sigma_p, sigma_v, sigma_bg, sigma_ba], 3)
    return np.diag(sigmas**2)

def _check_finite(**arrays) -> None:
    for name, value in arrays.items():
        if not np.all(np.isfinite(value)):
            raise NonFinite(f"Non-finite values in '{name}'")

def assemble_transition(state:NominalState, imu:ImuSample, dt:float) -> np.ndarray:
    '''
    First-order discrete error-state transition matrix

    Parameters
    ----------
    state : NominalState
        State at the start of the interval (linearization point)
    imu : ImuSample
        IMU reading held over the interval
    dt : float
        Interval length (s)

    Returns
    -------
    np.ndarray
        F (15, 15) such that dx(t + dt) ~ F dx(t)
    '''
    w = (np.asarray(imu.omega_m) - state.b_g) * dt
    a = np.asarray(imu.a_m) - state.b_a
    Rm = state.R.matrix
    F = np.eye(DIM_STATE)
    F[THETA, THETA] = exp_so3(w).matrix.T
    F[THETA, BG] = -right_jacobian(w) * dt
    F[POS, THETA] = -0.5 * Rm @ hat(a) * dt**2
    F[POS, VEL] = np.eye(3) * dt
    F[POS, BA] = -0.5 * Rm * dt**2
    F[VEL, THETA] = -Rm @ hat(a) * dt
    F[VEL, BA] = -Rm * dt
    return F

def process_noise(state:NominalState, noise:ImuNoiseParams, dt:float) -> np.ndarray:
    '''Discrete process noise Q; the position block is driven through velocity only'''
    Rm = state.R.matrix
    Q = np.zeros((DIM_STATE, DIM_STATE))
    Q[THETA, THETA] = noise.sigma_g**2 * dt * np.eye(3)
    Q[VEL, VEL] = Rm @ (noise.sigma_a**2 * dt * np.eye(3)) @ Rm.T
    Q[BG, BG] = noise.sigma_bg**2 * dt * np.eye(3)
    Q[BA, BA] = noise.sigma_ba**2 * dt * np.eye(3)
    return Q

def propagate_nominal(state:NominalState, imu:ImuSample, dt:float, gravity) -> NominalState:
    '''Euler step of the nominal kinematics, biases held constant'''
    omega = np.asarray(imu.omega_m) - state.b_g
    acc = state.R.apply(np.asarray(imu.a_m) - state.b_a) + np.asarray(gravity)
    return NominalState(
        R = state.R * exp_so3(omega * dt),
        p = state.p + state.v * dt + 0.5 * acc * dt**2,
        v = state.v + acc * dt,
        b_g = state.b_g,
        b_a = state.b_a,
        t = state.t + dt)

def propagate(state:NominalState,
              cov:np.ndarray,
              imu:ImuSample,
              dt:float,
              noise:ImuNoiseParams,
              max_dt:float = MAX_DT) -> tuple[NominalState, np.ndarray]:
    '''
    Propagate nominal state and error covariance over one IMU interval

    Parameters
    ----------
    state : NominalState
        Current nominal state
    cov : np.ndarray
        Current ErrorCovariance (15, 15)
    imu : ImuSample
        IMU reading used over the interval
    dt : float
        Interval length (s), 0 < dt <= max_dt
    noise : ImuNoiseParams
        IMU noise densities and gravity
    max_dt : float, optional
        Largest accepted interval, larger gaps are stream corruption (def: 0.1)

    Returns
    -------
    tuple[NominalState, np.ndarray]
        Propagated state and covariance P+ = F P F^T + Q
    '''
    if not np.isfinite(dt) or dt <= 0.0:
        raise DataError(f"Non-positive IMU interval ({dt} s) at t={state.t:.6f}")
    if dt > max_dt:
        raise GapTooLarge(f"IMU gap of {dt:.4f} s exceeds {max_dt} s at t={state.t:.6f}")
    _check_finite(omega_m=imu.omega_m, a_m=imu.a_m, cov=cov)
    if not state.is_finite():
        raise NonFinite(f"Non-finite state at t={state.t:.6f}")
    F = assemble_transition(state, imu, dt)
    Q = process_noise(state, noise, dt)
    new_state = propagate_nominal(state, imu, dt, noise.gravity)
    new_cov = symmetrize(F @ cov @ F.T + Q)
    return new_state, new_cov

def kalman_gain(cov:np.ndarray, H:np.ndarray, Rn:np.ndarray) -> np.ndarray:
    '''K = P H^T S^-1 through a Cholesky factorization of S = H P H^T + Rn'''
    PHt = cov @ H.T
    S = symmetrize(H @ PHt + Rn)
    if not np.all(np.isfinite(S)):
        raise SingularInnovation("Non-finite innovation covariance")
    try:
        S_factor = cho_factor(S, lower=True, check_finite=False)
    except LinAlgError as e:
        raise SingularInnovation(f"Cholesky of the innovation covariance failed: {e}") from e
    return cho_solve(S_factor, PHt.T, check_finite=False).T

def joseph_update(cov:np.ndarray, K:np.ndarray, H:np.ndarray, Rn:np.ndarray) -> np.ndarray:
    IKH = np.eye(DIM_STATE) - K @ H
    return symmetrize(IKH @ cov @ IKH.T + K @ Rn @ K.T)

def eskf_update(state:NominalState,
                cov:np.ndarray,
                meas:MeasurementBundle) -> tuple[NominalState, np.ndarray]:
    '''
    Error-state Kalman update with Joseph-form covariance

    Parameters
    ----------
    state : NominalState
        Prior nominal state
    cov : np.ndarray
        Prior ErrorCovariance (15, 15)
    meas : MeasurementBundle
        Linearized measurement

    Returns
    -------
    tuple[NominalState, np.ndarray]
        Posterior state (prior boxplus K r) and covariance
    '''
    K = kalman_gain(cov, meas.H, meas.Rn)
    new_state = boxplus(state, K @ meas.r)
    new_cov = joseph_update(cov, K, meas.H, meas.Rn)
    return new_state, new_cov

def iterated_update(state:NominalState,
                    cov:np.ndarray,
                    bundle_fn:Callable[[NominalState], MeasurementBundle],
                    n_iterations:int = 1) -> tuple[NominalState, np.ndarray]:
    '''
    Iterated error-state update re-linearizing around the current iterate

    Parameters
    ----------
    state : NominalState
        Prior nominal state
    cov : np.ndarray
        Prior ErrorCovariance
    bundle_fn : Callable[[NominalState], MeasurementBundle]
        Builds the bundle linearized at a given state
    n_iterations : int, optional
        Number of passes; 1 is a plain eskf_update (def: 1)

    Returns
    -------
    tuple[NominalState, np.ndarray]
        Posterior state and covariance
    '''
    n_iterations = max(int(n_iterations), 1)
    iterate = state
    for iteration in range(n_iterations):
        meas = bundle_fn(iterate)
        K = kalman_gain(cov, meas.H, meas.Rn)
        dx_iterate = boxminus(iterate, state)
        iterate = boxplus(state, K @ (meas.r + meas.H @ dx_iterate))
    return iterate, joseph_update(cov, K, meas.H, meas.Rn)
