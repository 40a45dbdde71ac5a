import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateNeighborhood, EmptyBundle
from .filter_core import MeasurementBundle, eskf_update
from .manifold import DIM_STATE, POS, THETA, NominalState, Rotation


logger = logging.getLogger()

# packed voxel keys: 21 bits per axis
_KEY_BITS = 21
_KEY_OFFSET = 1 << (_KEY_BITS - 1)
_NEIGHBOR_OFFSETS = np.array([[i, j, k] for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)], dtype=np.int64)


@dataclass(frozen=True)
class LidarParams:
    k_neighbors: int = 5
    plane_validity_threshold: float = 0.1
    max_correspondence_distance: float = 1.0
    max_residual_gate: float = 1.0
    scan_voxel_size: float = 0.1
    map_voxel_size: float = 0.2
    max_map_radius: float = 100.0
    max_points_per_voxel: int = 8
    max_correspondences: int = 400
    sigma_lidar: float = 0.02
    n_iterations: int = 1

@dataclass(frozen=True, eq=False)
class LidarScan:
    '''Instantaneous scan: timestamp (s) and (N, 3) points in the sensor frame (m)'''
    t: float
    points: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'points', np.asarray(self.points, dtype=np.float64).reshape(-1, 3))

    def __len__(self):
        return self.points.shape[0]

@dataclass(frozen=True, eq=False)
class LidarExtrinsics:
    '''Pose of the sensor frame in the body frame'''
    R: Rotation = field(default_factory=Rotation.identity)
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, 't', np.asarray(self.t, dtype=np.float64).reshape(3))

    def to_body(self, points:np.ndarray) -> np.ndarray:
        return self.R.apply(points) + self.t

@dataclass(frozen=True)
class PlaneCorrespondence:
    p_i: np.ndarray
    q_i: np.ndarray
    n_i: np.ndarray
    r_i: float

@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    '''
    Point-to-plane correspondences of one scan kept as parallel arrays

    Behaves as a sequence of PlaneCorrespondence in input point order.
    '''
    p_i: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    q_i: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    n_i: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    r_i: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self):
        return self.r_i.shape[0]

    def __getitem__(self, i:int) -> PlaneCorrespondence:
        return PlaneCorrespondence(self.p_i[i], self.q_i[i], self.n_i[i], float(self.r_i[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def take(self, idx:np.ndarray) -> 'CorrespondenceSet':
        return CorrespondenceSet(self.p_i[idx], self.q_i[idx], self.n_i[idx], self.r_i[idx])

    @classmethod
    def from_list(cls, corrs:list[PlaneCorrespondence]) -> 'CorrespondenceSet':
        if not corrs:
            return cls()
        return cls(
            np.array([c.p_i for c in corrs], dtype=np.float64),
            np.array([c.q_i for c in corrs], dtype=np.float64),
            np.array([c.n_i for c in corrs], dtype=np.float64),
            np.array([c.r_i for c in corrs], dtype=np.float64))


def voxel_indices(points:np.ndarray, voxel_size:float) -> np.ndarray:
    return np.floor(points / voxel_size).astype(np.int64)

def pack_keys(idx:np.ndarray) -> np.ndarray:
    idx = idx + _KEY_OFFSET
    return (idx[..., 0] << (2 * _KEY_BITS)) | (idx[..., 1] << _KEY_BITS) | idx[..., 2]

def voxel_downsample(points:np.ndarray, voxel_size:float) -> np.ndarray:
    '''
    Replace the points of every occupied voxel by their centroid

    Parameters
    ----------
    points : np.ndarray
        Points (N, 3)
    voxel_size : float
        Voxel edge length (m)

    Returns
    -------
    np.ndarray
        Centroids (M, 3) ordered by the first point falling in each voxel
    '''
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if points.shape[0] == 0:
        return points
    keys = pack_keys(voxel_indices(points, voxel_size))
    _, first, inverse, counts = np.unique(keys, return_index=True, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    sums = np.zeros((first.shape[0], 3))
    np.add.at(sums, inverse, points)
    centroids = sums / counts[:, None]
    return centroids[np.argsort(first, kind='stable')]


class LocalMap:
    '''
    Voxel-hashed map of world-frame points

    Voxels are kept as a sorted array of packed integer keys with a fixed
    number of point slots each, so neighbor gathering over the 27 voxels
    around a query is a vectorized lookup.

    Parameters
    ----------
    voxel_size : float
        Map voxel edge length (m)
    max_points_per_voxel : int, optional
        Point slots per voxel (def: 8)
    max_map_radius : float, optional
        Points farther than this from the latest position are cropped (def: 100)
    min_point_spacing : float, optional
        New points closer than this to a point already stored in the voxel
        are dropped (def: a quarter of the voxel size)
    '''
    def __init__(self,
                 voxel_size:float,
                 max_points_per_voxel:int = 8,
                 max_map_radius:float = 100.0,
                 min_point_spacing:float = None):
        if voxel_size <= 0:
            raise ValueError(f"Voxel size must be positive, got {voxel_size}")
        self.voxel_size = float(voxel_size)
        self.capacity = int(max_points_per_voxel)
        self.max_map_radius = float(max_map_radius)
        self.min_point_spacing = 0.25 * self.voxel_size if min_point_spacing is None else float(min_point_spacing)
        self._keys = np.zeros(0, dtype=np.int64)
        self._slots = np.zeros((0, self.capacity, 3))
        self._counts = np.zeros(0, dtype=np.int64)

    @classmethod
    def from_params(cls, params:LidarParams) -> 'LocalMap':
        return cls(params.map_voxel_size, params.max_points_per_voxel, params.max_map_radius)

    @property
    def n_voxels(self) -> int:
        return self._keys.shape[0]

    @property
    def n_points(self) -> int:
        return int(self._counts.sum())

    def is_empty(self) -> bool:
        return self.n_points == 0

    def points(self) -> np.ndarray:
        mask = np.arange(self.capacity)[None, :] < self._counts[:, None]
        return self._slots[mask]

    def _lookup(self, keys:np.ndarray) -> np.ndarray:
        '''Voxel index of each key, -1 where the voxel does not exist'''
        if self.n_voxels == 0:
            return np.full(keys.shape, -1, dtype=np.int64)
        pos = np.searchsorted(self._keys, keys)
        pos_clipped = np.minimum(pos, self.n_voxels - 1)
        found = self._keys[pos_clipped] == keys
        return np.where(found, pos_clipped, -1)

    def neighbors(self, query:np.ndarray, k:int) -> tuple[np.ndarray, np.ndarray]:
        '''
        k nearest map points of each query among its 27 surrounding voxels

        Parameters
        ----------
        query : np.ndarray
            Query points (N, 3)
        k : int
            Number of neighbors

        Returns
        -------
        tuple[np.ndarray, np.ndarray]
            Neighbors (N, k, 3) sorted by distance and squared distances (N, k),
            inf where fewer than k candidates exist
        '''
        query = np.asarray(query, dtype=np.float64).reshape(-1, 3)
        n = query.shape[0]
        if n == 0 or self.n_voxels == 0:
            return np.zeros((n, k, 3)), np.full((n, k), np.inf)
        cells = voxel_indices(query, self.voxel_size)[:, None, :] + _NEIGHBOR_OFFSETS[None, :, :]
        vidx = self._lookup(pack_keys(cells))
        valid_voxel = vidx >= 0
        vidx = np.where(valid_voxel, vidx, 0)
        candidates = self._slots[vidx].reshape(n, -1, 3)
        valid = (valid_voxel[:, :, None] & (np.arange(self.capacity)[None, None, :] < self._counts[vidx][:, :, None])).reshape(n, -1)
        d2 = np.sum((candidates - query[:, None, :])**2, axis=2)
        d2 = np.where(valid, d2, np.inf)
        kk = min(k, d2.shape[1])
        nearest = np.argpartition(d2, kk - 1, axis=1)[:, :kk]
        nearest_d2 = np.take_along_axis(d2, nearest, axis=1)
        order = np.argsort(nearest_d2, axis=1, kind='stable')
        nearest = np.take_along_axis(nearest, order, axis=1)
        nearest_d2 = np.take_along_axis(nearest_d2, order, axis=1)
        return np.take_along_axis(candidates, nearest[:, :, None], axis=1), nearest_d2

    def insert(self, points:np.ndarray) -> int:
        '''
        Insert world-frame points, skipping near-duplicates of stored points

        Returns
        -------
        int
            Number of points actually stored
        '''
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if points.shape[0] == 0:
            return 0
        keys = pack_keys(voxel_indices(points, self.voxel_size))
        vidx = self._lookup(keys)
        counts_before = self._counts[np.where(vidx >= 0, vidx, 0)] * (vidx >= 0)
        # reject points duplicating what was stored before this call
        keep = np.ones(points.shape[0], dtype=bool)
        old = counts_before > 0
        if np.any(old):
            stored = self._slots[vidx[old]]
            d2 = np.sum((stored - points[old][:, None, :])**2, axis=2)
            d2 = np.where(np.arange(self.capacity)[None, :] < counts_before[old][:, None], d2, np.inf)
            keep[old] = d2.min(axis=1) >= self.min_point_spacing**2
        points, keys = points[keep], keys[keep]
        if points.shape[0] == 0:
            return 0
        # create missing voxels
        new_keys = np.unique(keys[self._lookup(keys) < 0])
        if new_keys.shape[0]:
            all_keys = np.concatenate([self._keys, new_keys])
            order = np.argsort(all_keys, kind='stable')
            self._keys = all_keys[order]
            self._slots = np.concatenate([self._slots, np.zeros((new_keys.shape[0], self.capacity, 3))])[order]
            self._counts = np.concatenate([self._counts, np.zeros(new_keys.shape[0], dtype=np.int64)])[order]
        vidx = self._lookup(keys)
        # rank of each point within its voxel, by input order
        order = np.argsort(vidx, kind='stable')
        sorted_vidx = vidx[order]
        group_start = np.searchsorted(sorted_vidx, sorted_vidx, side='left')
        rank = np.empty_like(vidx)
        rank[order] = np.arange(vidx.shape[0]) - group_start
        inserted = 0
        for r in range(int(rank.max()) + 1):
            sel = rank == r
            target = vidx[sel]
            slot = self._counts[target]
            room = slot < self.capacity
            self._slots[target[room], slot[room]] = points[sel][room]
            self._counts[target[room]] += 1
            inserted += int(room.sum())
        return inserted

    def crop(self, center:np.ndarray, radius:float = None) -> int:
        '''Drop points farther than radius from center, returns the number removed'''
        radius = self.max_map_radius if radius is None else radius
        if self.n_voxels == 0:
            return 0
        filled = np.arange(self.capacity)[None, :] < self._counts[:, None]
        inside = filled & (np.sum((self._slots - np.asarray(center)[None, None, :])**2, axis=2) <= radius**2)
        removed = int(filled.sum() - inside.sum())
        if removed == 0:
            return 0
        order = np.argsort(~inside, axis=1, kind='stable')
        self._slots = np.take_along_axis(self._slots, order[:, :, None], axis=1)
        self._counts = inside.sum(axis=1)
        occupied = self._counts > 0
        self._keys = self._keys[occupied]
        self._slots = self._slots[occupied]
        self._counts = self._counts[occupied]
        return removed


def fit_planes(neighbors:np.ndarray,
               viewpoints:np.ndarray,
               threshold:float) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    '''
    Batched least-squares plane fit

    Parameters
    ----------
    neighbors : np.ndarray
        Neighborhoods (N, k, 3)
    viewpoints : np.ndarray
        Viewpoint (3,) or (N, 3) the normals are oriented towards
    threshold : float
        Largest accepted point-to-plane distance of any neighbor (m)

    Returns
    -------
    tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]
        Normals (N, 3), centroids (N, 3), validity (N,) and rank-deficiency (N,) flags
    '''
    q = neighbors.mean(axis=1)
    centered = neighbors - q[:, None, :]
    scatter = np.einsum('nki,nkj->nij', centered, centered)
    eigvals, eigvecs = np.linalg.eigh(scatter)
    n = eigvecs[:, :, 0]
    degenerate = eigvals[:, 1] <= 1e-9 * np.maximum(eigvals[:, 2], 1e-300)
    flip = np.sum(n * (np.broadcast_to(viewpoints, q.shape) - q), axis=1) < 0.0
    n = np.where(flip[:, None], -n, n)
    n = n / np.linalg.norm(n, axis=1, keepdims=True)
    spread = np.abs(np.einsum('nkj,nj->nk', centered, n)).max(axis=1)
    ok = (spread <= threshold) & ~degenerate
    return n, q, ok, degenerate

def fit_plane(neighbors:np.ndarray,
              viewpoint:np.ndarray = None,
              threshold:float = 0.1) -> tuple[np.ndarray, np.ndarray, bool]:
    '''
    Fit a plane to k >= 3 neighbor points

    Parameters
    ----------
    neighbors : np.ndarray
        Neighbor points (k, 3)
    viewpoint : np.ndarray, optional
        The normal satisfies n.(viewpoint - q) >= 0 (def: origin)
    threshold : float, optional
        Plane validity threshold (m) (def: 0.1)

    Returns
    -------
    tuple[np.ndarray, np.ndarray, bool]
        Unit normal, centroid and validity flag
    '''
    neighbors = np.asarray(neighbors, dtype=np.float64).reshape(-1, 3)
    if neighbors.shape[0] < 3:
        raise ValueError(f"At least 3 neighbors are needed to fit a plane, got {neighbors.shape[0]}")
    viewpoint = np.zeros(3) if viewpoint is None else np.asarray(viewpoint, dtype=np.float64)
    n, q, ok, degenerate = fit_planes(neighbors[None], viewpoint, threshold)
    if degenerate[0]:
        raise DegenerateNeighborhood("Collinear neighborhood, no plane can be fitted")
    return n[0], q[0], bool(ok[0])

def find_correspondences(scan:LidarScan,
                         local_map:LocalMap,
                         state:NominalState,
                         ext:LidarExtrinsics,
                         params:LidarParams = LidarParams()) -> CorrespondenceSet:
    '''
    Match scan points to planes of the local map

    Parameters
    ----------
    scan : LidarScan
        Scan in the sensor frame
    local_map : LocalMap
        Current local map (not modified)
    state : NominalState
        State used to place the scan in the world
    ext : LidarExtrinsics
        Sensor pose in the body frame
    params : LidarParams, optional
        Gates and voxel sizes

    Returns
    -------
    CorrespondenceSet
        Accepted correspondences in input point order (empty for an empty map)
    '''
    if local_map.is_empty() or len(scan) == 0:
        return CorrespondenceSet()
    p_s = voxel_downsample(scan.points, params.scan_voxel_size)
    p_w = state.R.apply(ext.to_body(p_s)) + state.p
    neighbors, d2 = local_map.neighbors(p_w, params.k_neighbors)
    found = np.all(np.isfinite(d2), axis=1) & (d2[:, -1] <= params.max_correspondence_distance**2)
    if not np.any(found):
        return CorrespondenceSet()
    p_s, p_w, neighbors = p_s[found], p_w[found], neighbors[found]
    viewpoint = state.R.apply(ext.t) + state.p
    n, q, ok, _ = fit_planes(neighbors, viewpoint, params.plane_validity_threshold)
    r = np.sum(n * (p_w - q), axis=1)
    accept = ok & (np.abs(r) <= params.max_residual_gate)
    return CorrespondenceSet(p_s[accept], q[accept], n[accept], r[accept])

def subsample_correspondences(corrs:CorrespondenceSet, max_rows:int) -> CorrespondenceSet:
    '''Deterministic uniform stride over input order down to max_rows entries'''
    n = len(corrs)
    if max_rows is None or max_rows <= 0 or n <= max_rows:
        return corrs
    return corrs.take((np.arange(max_rows) * n) // max_rows)

def lidar_residuals(corrs:CorrespondenceSet, state:NominalState, ext:LidarExtrinsics) -> np.ndarray:
    p_w = state.R.apply(ext.to_body(corrs.p_i)) + state.p
    return np.sum(corrs.n_i * (p_w - corrs.q_i), axis=1)

def assemble_lidar_bundle(corrs:CorrespondenceSet,
                          state:NominalState,
                          ext:LidarExtrinsics,
                          sigma_lidar:float) -> MeasurementBundle:
    '''
    Stack point-to-plane rows into a MeasurementBundle

    Residual entries are -r_i evaluated at the given state, so the update
    drives the point-to-plane distances to zero. The rows are
    dr/dtheta = -n^T R [p_b]x and dr/dp = n^T.

    Parameters
    ----------
    corrs : CorrespondenceSet
        Correspondences (non-empty)
    state : NominalState
        Linearization point
    ext : LidarExtrinsics
        Sensor pose in the body frame
    sigma_lidar : float
        Point-to-plane noise standard deviation (m)

    Returns
    -------
    MeasurementBundle
        Unscaled LiDAR bundle with Rn = sigma_lidar^2 I
    '''
    if not isinstance(corrs, CorrespondenceSet):
        corrs = CorrespondenceSet.from_list(list(corrs))
    m = len(corrs)
    if m == 0:
        raise EmptyBundle("No correspondences to build a LiDAR bundle")
    p_b = ext.to_body(corrs.p_i)
    n_body = state.R.inverse().apply(corrs.n_i)
    H = np.zeros((m, DIM_STATE))
    H[:, THETA] = np.cross(p_b, n_body)
    H[:, POS] = corrs.n_i
    r = -lidar_residuals(corrs, state, ext)
    return MeasurementBundle(H, r, sigma_lidar**2 * np.eye(m))

def provisional_lidar_update(state:NominalState,
                             cov:np.ndarray,
                             bundle:MeasurementBundle) -> NominalState:
    '''LiDAR-updated state from the predicted prior, never committed to the filter'''
    return eskf_update(state, cov, bundle)[0]

def integrate_scan(local_map:LocalMap,
                   scan:LidarScan,
                   state:NominalState,
                   ext:LidarExtrinsics,
                   scan_voxel_size:float = 0.1) -> LocalMap:
    '''
    Insert a scan placed by the posterior state and crop the map around it

    The map is updated in place and returned.
    '''
    p_w = state.R.apply(ext.to_body(scan.points)) + state.p
    inserted = local_map.insert(voxel_downsample(p_w, scan_voxel_size))
    removed = local_map.crop(state.p)
    logger.debug(f"Map update at t={scan.t:.3f}: +{inserted} / -{removed} points, {local_map.n_points} points in {local_map.n_voxels} voxels")
    return local_map
