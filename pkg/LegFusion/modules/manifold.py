import logging
from dataclasses import dataclass, field, replace

import numpy as np


logger = logging.getLogger()

# StateTangent layout: [dtheta, dp, dv, db_g, db_a]
DIM_STATE = 15
THETA = slice(0, 3)
POS = slice(3, 6)
VEL = slice(6, 9)
BG = slice(9, 12)
BA = slice(12, 15)
BLOCKS = {'theta': THETA, 'p': POS, 'v': VEL, 'b_g': BG, 'b_a': BA}

SMALL_ANGLE = 1e-8


def _frozen(x) -> np.ndarray:
    a = np.array(x, dtype=np.float64).reshape(3)
    a.flags.writeable = False
    return a

def hat(v:np.ndarray) -> np.ndarray:
    '''Skew-symmetric matrix of a 3-vector, hat(a) @ b == cross(a, b)'''
    x, y, z = v
    return np.array([
        [0.0, -z, y],
        [z, 0.0, -x],
        [-y, x, 0.0]])

def vee(m:np.ndarray) -> np.ndarray:
    '''Inverse of hat (takes the antisymmetric part)'''
    return 0.5 * np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])

def quat_mul(q1:np.ndarray, q2:np.ndarray) -> np.ndarray:
    '''Hamilton product of two quaternions (qw, qx, qy, qz)'''
    w1, x1, y1, z1 = q1
    w2, x2, y2, z2 = q2
    return np.array([
        w1*w2 - x1*x2 - y1*y2 - z1*z2,
        w1*x2 + x1*w2 + y1*z2 - z1*y2,
        w1*y2 - x1*z2 + y1*w2 + z1*x2,
        w1*z2 + x1*y2 - y1*x2 + z1*w2])


@dataclass(frozen=True, eq=False)
class Rotation:
    '''
    Element of SO(3) stored as a unit quaternion (qw, qx, qy, qz)

    The quaternion is renormalized on construction, so every composition
    returns a unit quaternion. The matrix view is computed on demand.
    '''
    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        q = np.array(self.q, dtype=np.float64).reshape(4)
        norm = np.linalg.norm(q)
        if not np.isfinite(norm) or norm < 1e-12:
            raise ValueError(f"Invalid quaternion: {q}")
        q = q / norm
        q.flags.writeable = False
        object.__setattr__(self, 'q', q)

    @classmethod
    def identity(cls) -> 'Rotation':
        return cls(np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_quaternion(cls, q) -> 'Rotation':
        return cls(np.asarray(q, dtype=np.float64))

    @classmethod
    def from_matrix(cls, m:np.ndarray) -> 'Rotation':
        '''
        Build from a rotation matrix

        The largest of (trace, diagonal entries) selects the branch, so
        the axis is recovered from the symmetric part near angle pi.
        '''
        m = np.asarray(m, dtype=np.float64)
        tr = np.trace(m)
        diag = np.diag(m)
        i = int(np.argmax(diag))
        if tr >= diag[i]:
            s = 2.0 * np.sqrt(1.0 + tr)
            q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        else:
            j, k = (i + 1) % 3, (i + 2) % 3
            s = 2.0 * np.sqrt(1.0 + m[i, i] - m[j, j] - m[k, k])
            q = np.empty(4)
            q[0] = (m[k, j] - m[j, k]) / s
            q[1 + i] = 0.25 * s
            q[1 + j] = (m[j, i] + m[i, j]) / s
            q[1 + k] = (m[k, i] + m[i, k]) / s
        return cls(np.asarray(q))

    @classmethod
    def from_yaw(cls, yaw:float) -> 'Rotation':
        return exp_so3(np.array([0.0, 0.0, yaw]))

    @property
    def quaternion(self) -> np.ndarray:
        return self.q

    @property
    def matrix(self) -> np.ndarray:
        w, x, y, z = self.q
        xx, yy, zz = x*x, y*y, z*z
        xy, xz, yz = x*y, x*z, y*z
        wx, wy, wz = w*x, w*y, w*z
        return np.array([
            [1.0 - 2.0*(yy + zz), 2.0*(xy - wz), 2.0*(xz + wy)],
            [2.0*(xy + wz), 1.0 - 2.0*(xx + zz), 2.0*(yz - wx)],
            [2.0*(xz - wy), 2.0*(yz + wx), 1.0 - 2.0*(xx + yy)]])

    @property
    def yaw(self) -> float:
        m = self.matrix
        return float(np.arctan2(m[1, 0], m[0, 0]))

    def inverse(self) -> 'Rotation':
        w, x, y, z = self.q
        return Rotation(np.array([w, -x, -y, -z]))

    def __mul__(self, other:'Rotation') -> 'Rotation':
        return Rotation(quat_mul(self.q, other.q))

    def apply(self, v:np.ndarray) -> np.ndarray:
        '''Rotate a 3-vector or an (N, 3) array of row vectors'''
        v = np.asarray(v, dtype=np.float64)
        return v @ self.matrix.T

    def __repr__(self):
        return f"Rotation(qw={self.q[0]:.9g}, qx={self.q[1]:.9g}, qy={self.q[2]:.9g}, qz={self.q[3]:.9g})"


def exp_so3(omega:np.ndarray) -> Rotation:
    '''
    Exponential map from a rotation vector (rad) to SO(3)

    Parameters
    ----------
    omega : np.ndarray
        Rotation vector (3,)

    Returns
    -------
    Rotation
        Exp(omega); below SMALL_ANGLE the second-order series is used
    '''
    omega = np.asarray(omega, dtype=np.float64).reshape(3)
    theta_sq = float(omega @ omega)
    theta = np.sqrt(theta_sq)
    if theta < SMALL_ANGLE:
        w = 1.0 - theta_sq / 8.0
        xyz = 0.5 * omega * (1.0 - theta_sq / 24.0)
    else:
        w = np.cos(0.5 * theta)
        xyz = np.sin(0.5 * theta) / theta * omega
    return Rotation(np.array([w, xyz[0], xyz[1], xyz[2]]))

def log_so3(r:Rotation) -> np.ndarray:
    '''
    Logarithm map from SO(3) to the minimal-angle rotation vector

    Parameters
    ----------
    r : Rotation
        Rotation to take the logarithm of

    Returns
    -------
    np.ndarray
        Rotation vector (3,) with norm <= pi
    '''
    q = r.q if r.q[0] >= 0.0 else -r.q
    w, xyz = q[0], q[1:]
    s = np.linalg.norm(xyz)
    if s < SMALL_ANGLE:
        # theta/s ~ 2/w * (1 - s^2 / (3 w^2))
        return 2.0 / w * (1.0 - s*s / (3.0 * w*w)) * xyz
    theta = 2.0 * np.arctan2(s, w)
    return theta / s * xyz

def right_jacobian(phi:np.ndarray) -> np.ndarray:
    '''Right Jacobian of SO(3): Exp(phi + d) ~ Exp(phi) Exp(Jr(phi) d)'''
    phi = np.asarray(phi, dtype=np.float64)
    theta = np.linalg.norm(phi)
    P = hat(phi)
    if theta < 1e-5:
        return np.eye(3) - 0.5 * P + P @ P / 6.0
    return (np.eye(3) - (1.0 - np.cos(theta)) / theta**2 * P
            + (theta - np.sin(theta)) / theta**3 * P @ P)

def right_jacobian_inv(phi:np.ndarray) -> np.ndarray:
    '''Inverse of the right Jacobian of SO(3)'''
    phi = np.asarray(phi, dtype=np.float64)
    theta = np.linalg.norm(phi)
    P = hat(phi)
    if theta < 1e-5:
        return np.eye(3) + 0.5 * P + P @ P / 12.0
    return (np.eye(3) + 0.5 * P
            + (1.0 / theta**2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))) * P @ P)


@dataclass(frozen=True, eq=False)
class NominalState:
    '''
    Full robot state: orientation (body to world), position and velocity
    in the world frame, gyroscope and accelerometer biases, timestamp (s)
    '''
    R: Rotation = field(default_factory=Rotation.identity)
    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_g: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_a: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t: float = 0.0

    def __post_init__(self):
        for name in ('p', 'v', 'b_g', 'b_a'):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, 't', float(self.t))

    def replace(self, **changes) -> 'NominalState':
        return replace(self, **changes)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.R.q)) and all(np.all(np.isfinite(getattr(self, name))) for name in ('p', 'v', 'b_g', 'b_a')))


def boxplus(x:NominalState, dx:np.ndarray) -> NominalState:
    '''
    Retraction of a StateTangent onto the state (right perturbation)

    Parameters
    ----------
    x : NominalState
        State to perturb
    dx : np.ndarray
        StateTangent (15,) ordered [dtheta, dp, dv, db_g, db_a]

    Returns
    -------
    NominalState
        R * Exp(dtheta), additive blocks summed, timestamp kept
    '''
    dx = np.asarray(dx, dtype=np.float64).reshape(DIM_STATE)
    return NominalState(
        R = x.R * exp_so3(dx[THETA]),
        p = x.p + dx[POS],
        v = x.v + dx[VEL],
        b_g = x.b_g + dx[BG],
        b_a = x.b_a + dx[BA],
        t = x.t)

def boxminus(x1:NominalState, x2:NominalState) -> np.ndarray:
    '''
    Tangent difference x1 - x2, the inverse of boxplus

    The rotational block is Log(R2^T R1), consistent with the right
    perturbation used by boxplus.
    '''
    dx = np.empty(DIM_STATE)
    dx[THETA] = log_so3(x2.R.inverse() * x1.R)
    dx[POS] = x1.p - x2.p
    dx[VEL] = x1.v - x2.v
    dx[BG] = x1.b_g - x2.b_g
    dx[BA] = x1.b_a - x2.b_a
    return dx
