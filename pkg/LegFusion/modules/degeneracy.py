import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import IllConditioned
from .filter_core import symmetrize
from .manifold import DIM_STATE


logger = logging.getLogger()

C_IL_CAP = 1.0e3
JITTER = 1.0e-12


@dataclass(frozen=True)
class ResidualStats:
    '''Mean (m), population variance (m^2) and count of point-to-plane residuals'''
    mean: float = 0.0
    variance: float = 0.0
    count: int = 0

@dataclass(frozen=True)
class DegeneracyIndices:
    '''Per-epoch degeneracy diagnostics, all dimensionless'''
    o_lidar: float = 0.0
    c_il: float = 0.0
    d_k: float = 0.0
    d_smooth: float = 0.0

@dataclass(frozen=True)
class DegeneracyParams:
    sigma0_sq: float = 2.5e-3
    w1: float = 0.6
    w2: float = 0.4
    kappa: float = 15.0
    min_correspondences: int = 10

    def __post_init__(self):
        if not self.sigma0_sq > 0:
            raise ValueError(f"sigma0_sq must be positive, got {self.sigma0_sq}")
        if self.w1 < 0 or self.w2 < 0 or abs(self.w1 + self.w2 - 1.0) > 1e-9:
            raise ValueError(f"Weights must be non-negative and add up to 1, got w1={self.w1}, w2={self.w2}")
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")


def residual_stats(residuals) -> ResidualStats:
    '''
    Mean and population variance (divided by N) of the residuals

    An empty input gives ResidualStats(0, 0, 0).
    '''
    r = np.asarray(residuals, dtype=np.float64).reshape(-1)
    if r.shape[0] == 0:
        return ResidualStats()
    mean = float(r.mean())
    return ResidualStats(mean, float(np.mean((r - mean)**2)), int(r.shape[0]))

def observability_metric(stats:ResidualStats, params:DegeneracyParams = DegeneracyParams()) -> float:
    '''
    Effective LiDAR observability sigma_r^2 / (sigma_r^2 + sigma0^2)

    Parameters
    ----------
    stats : ResidualStats
        Residual statistics of the scan
    params : DegeneracyParams, optional
        Provides the normalization constant sigma0_sq

    Returns
    -------
    float
        Value in [0, 1); 0 for a scan without correspondences
    '''
    if stats.count == 0:
        return 0.0
    return stats.variance / (stats.variance + params.sigma0_sq)

def consistency_metric(y:np.ndarray, cov:np.ndarray) -> float:
    '''
    Normalized squared innovation y^T P^-1 y

    Parameters
    ----------
    y : np.ndarray
        StateTangent (15,), provisional LiDAR state boxminus predicted state
    cov : np.ndarray
        Predicted ErrorCovariance (15, 15)

    Returns
    -------
    float
        Mahalanobis norm of y, solved through a Cholesky factorization

    Raises
    ------
    IllConditioned
        If the factorization fails even with diagonal jitter
    '''
    y = np.asarray(y, dtype=np.float64).reshape(DIM_STATE)
    P = symmetrize(np.asarray(cov, dtype=np.float64))
    try:
        factor = cho_factor(P, lower=True, check_finite=True)
    except (LinAlgError, ValueError):
        jitter = JITTER * np.trace(P) / DIM_STATE
        logger.debug(f"Cholesky of the predicted covariance failed, retrying with jitter {jitter:.3g}")
        try:
            factor = cho_factor(P + jitter * np.eye(DIM_STATE), lower=True, check_finite=True)
        except (LinAlgError, ValueError) as e:
            raise IllConditioned(f"Predicted covariance is not positive definite: {e}") from e
    return max(float(y @ cho_solve(factor, y)), 0.0)

def degeneracy_index(o_lidar:float, c_il:float, params:DegeneracyParams = DegeneracyParams()) -> float:
    '''D = w1 (1 - O) + w2 C / (C + kappa), with C capped at C_IL_CAP'''
    c = min(max(c_il, 0.0), C_IL_CAP)
    d = params.w1 * (1.0 - o_lidar) + params.w2 * c / (c + params.kappa)
    return float(np.clip(d, 0.0, 1.0))
