"""
Geometry Core
=============
Canonical geometric types and the pose / projection / visibility /
neighbourhood primitives every other module builds on.

Conventions:
- Poses are camera-to-world: a camera-frame point X_c maps to the world as
  R @ X_c + t. The camera looks along its +z axis, +y points down the image.
- Pixel (row i, col j) has its centre at (u, v) = (j, i).
- Point order is never changed by anything in this module; index i of a cloud
  is the same surface sample before and after every operation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Union

import numpy as np

from .errors import InsufficientPoints, InvalidGeometry

# Orthonormality tolerance for rotations (R·Rᵀ − I and det − 1)
ROTATION_TOLERANCE = 1e-6

# Visibility defaults
DEFAULT_SPLAT_RADIUS_PX = 2
DEFAULT_DEPTH_TOLERANCE = 0.01


# =============================================================================
# TYPES
# =============================================================================

@dataclass(frozen=True)
class PointCloud:
    """Ordered set of N 3D points; the ordering carries dense correspondence."""
    points: np.ndarray
    id: str = ""

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, copy=True)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise InvalidGeometry(f"Point cloud must be N x 3, got shape {pts.shape}")
        if pts.shape[0] < 1:
            raise InvalidGeometry("Point cloud must contain at least one point")
        if not np.all(np.isfinite(pts)):
            raise InvalidGeometry(f"Point cloud '{self.id}' has non-finite coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def with_points(self, points: np.ndarray) -> "PointCloud":
        """Same label, new coordinates (index-aligned)."""
        return PointCloud(points, id=self.id)


CloudLike = Union[PointCloud, np.ndarray]


def as_points(cloud: CloudLike) -> np.ndarray:
    """Return the N x 3 float64 array behind a cloud or array."""
    if isinstance(cloud, PointCloud):
        return cloud.points
    return np.asarray(cloud, dtype=np.float64)


@dataclass(frozen=True)
class PoseSE3:
    """Rigid camera-to-world transform."""
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=np.float64, copy=True).reshape(3, 3)
        trans = np.array(self.translation, dtype=np.float64, copy=True).reshape(3)
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(trans))):
            raise InvalidGeometry("Pose contains non-finite values")
        if np.max(np.abs(rot @ rot.T - np.eye(3))) > ROTATION_TOLERANCE:
            raise InvalidGeometry("Pose rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > ROTATION_TOLERANCE:
            raise InvalidGeometry("Pose rotation must have determinant +1")
        rot.setflags(write=False)
        trans.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @classmethod
    def identity(cls) -> "PoseSE3":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "PoseSE3":
        """Build from a 4x4 homogeneous matrix."""
        mat = np.asarray(matrix, dtype=np.float64).reshape(4, 4)
        return cls(mat[:3, :3], mat[:3, 3])

    def matrix(self) -> np.ndarray:
        mat = np.eye(4)
        mat[:3, :3] = self.rotation
        mat[:3, 3] = self.translation
        return mat

    def inverse(self) -> "PoseSE3":
        rt = self.rotation.T
        return PoseSE3(rt, -rt @ self.translation)

    def compose(self, other: "PoseSE3") -> "PoseSE3":
        """self ∘ other, i.e. apply `other` first."""
        return PoseSE3(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""
    fx: float
    fy: float
    cx: float
    cy: float
    height: int
    width: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidGeometry("Focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidGeometry(
                f"Principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    @property
    def image_size(self) -> tuple[int, int]:
        return (self.height, self.width)

    @classmethod
    def centered(cls, size: int, focal: float) -> "CameraIntrinsics":
        """Square image with the principal point at the image centre."""
        return cls(fx=focal, fy=focal, cx=size / 2.0, cy=size / 2.0, height=size, width=size)


@dataclass(frozen=True)
class KnnGraph:
    """Exact k-nearest-neighbour graph, self excluded, uniform weights."""
    k: int
    neighbors: np.ndarray   # (N, k) int64
    weights: np.ndarray     # (N, k) float64

    def __len__(self) -> int:
        return self.neighbors.shape[0]


@dataclass(frozen=True)
class SilhouetteMask:
    """H x W soft occupancy mask with values in [0, 1]."""
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64, copy=True)
        if vals.ndim != 2:
            raise InvalidGeometry(f"Silhouette mask must be H x W, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)) or vals.min(initial=0.0) < 0.0 or vals.max(initial=0.0) > 1.0:
            raise InvalidGeometry("Silhouette values must be finite and within [0, 1]")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


class VisibilityMode(str, Enum):
    ZBUFFER = "zbuffer"             # z-buffer test only
    TOP_M = "top_m"                 # in-frame points, M nearest by depth
    ZBUFFER_TOP_M = "zbuffer_top_m" # z-buffer, then M nearest when more survive


# =============================================================================
# NORMALIZATION
# =============================================================================

def normalize_to_unit_cube(cloud: PointCloud) -> tuple[PointCloud, float, np.ndarray]:
    """
    Center the bounding box at the origin and scale the longest axis to 1.

    Returns (normalized cloud, scale, center) with
    original = normalized * scale + center.
    """
    pts = as_points(cloud)
    if not np.all(np.isfinite(pts)):
        raise InvalidGeometry("Cannot normalize a cloud with non-finite coordinates")
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    center = (lo + hi) / 2.0
    scale = float(np.max(hi - lo))
    if scale == 0.0:
        scale = 1.0
    return cloud.with_points((pts - center) / scale), scale, center


def denormalize(cloud: PointCloud, scale: float, center: np.ndarray) -> PointCloud:
    """Invert normalize_to_unit_cube."""
    return cloud.with_points(as_points(cloud) * scale + np.asarray(center, dtype=np.float64))


# =============================================================================
# PROJECTION & VISIBILITY
# =============================================================================

def project_points(points: np.ndarray, pose: PoseSE3, intr: CameraIntrinsics) -> np.ndarray:
    """
    Pinhole projection of world points (N x 3) into the camera `pose`.

    Returns N x 3 rows of (u, v, depth). Points with depth <= 0 get u = v = nan.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cam = (pts - pose.translation) @ pose.rotation
    depth = cam[:, 2]
    out = np.full((pts.shape[0], 3), np.nan)
    out[:, 2] = depth
    front = depth > 0
    out[front, 0] = intr.fx * cam[front, 0] / depth[front] + intr.cx
    out[front, 1] = intr.fy * cam[front, 1] / depth[front] + intr.cy
    return out


def project_point(p, pose: PoseSE3, intr: CameraIntrinsics) -> tuple[float, float, float]:
    """Project a single point; depth <= 0 means invisible."""
    u, v, depth = project_points(np.asarray(p, dtype=np.float64).reshape(1, 3), pose, intr)[0]
    return float(u), float(v), float(depth)


def pixel_indices(uvd: np.ndarray, intr: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nearest pixel (row, col) for projected points and an in-frame flag."""
    depth = uvd[:, 2]
    front = depth > 0
    u = np.where(front, uvd[:, 0], -1.0)
    v = np.where(front, uvd[:, 1], -1.0)
    col = np.floor(u + 0.5).astype(np.int64)
    row = np.floor(v + 0.5).astype(np.int64)
    in_frame = front & (col >= 0) & (col < intr.width) & (row >= 0) & (row < intr.height)
    return row, col, in_frame


def _splat_offsets(radius: int) -> np.ndarray:
    r = int(radius)
    offs = [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1) if dy * dy + dx * dx <= r * r]
    return np.array(offs, dtype=np.int64).reshape(-1, 2)


def depth_buffer(
    cloud: CloudLike,
    pose: PoseSE3,
    intr: CameraIntrinsics,
    splat_radius_px: int = DEFAULT_SPLAT_RADIUS_PX,
) -> tuple[np.ndarray, np.ndarray]:
    """Splatted minimum-depth image and the per-point (u, v, depth) projections."""
    uvd = project_points(as_points(cloud), pose, intr)
    row, col, in_frame = pixel_indices(uvd, intr)
    zbuf = np.full((intr.height, intr.width), np.inf)
    idx = np.nonzero(in_frame)[0]
    for dy, dx in _splat_offsets(splat_radius_px):
        r = row[idx] + dy
        c = col[idx] + dx
        ok = (r >= 0) & (r < intr.height) & (c >= 0) & (c < intr.width)
        np.minimum.at(zbuf, (r[ok], c[ok]), uvd[idx[ok], 2])
    return zbuf, uvd


def compute_visibility(
    cloud: CloudLike,
    pose: PoseSE3,
    intr: CameraIntrinsics,
    splat_radius_px: int = DEFAULT_SPLAT_RADIUS_PX,
    depth_tolerance: float = DEFAULT_DEPTH_TOLERANCE,
) -> np.ndarray:
    """
    Z-buffer point-splat visibility.

    A point is visible iff it projects in frame with positive depth and no
    other point whose splat footprint covers it is nearer by more than
    `depth_tolerance`.
    """
    zbuf, uvd = depth_buffer(cloud, pose, intr, splat_radius_px)
    row, col, in_frame = pixel_indices(uvd, intr)
    visible = np.zeros(uvd.shape[0], dtype=bool)
    idx = np.nonzero(in_frame)[0]
    visible[idx] = uvd[idx, 2] <= zbuf[row[idx], col[idx]] + depth_tolerance
    return visible


def select_visible(
    cloud: CloudLike,
    pose: PoseSE3,
    intr: CameraIntrinsics,
    max_points: int,
    mode: VisibilityMode = VisibilityMode.ZBUFFER_TOP_M,
    splat_radius_px: int = DEFAULT_SPLAT_RADIUS_PX,
    depth_tolerance: float = DEFAULT_DEPTH_TOLERANCE,
) -> np.ndarray:
    """Visibility mask under one of the VisibilityMode policies."""
    mode = VisibilityMode(mode)
    uvd = project_points(as_points(cloud), pose, intr)
    if mode == VisibilityMode.TOP_M:
        _, _, candidates = pixel_indices(uvd, intr)
    else:
        candidates = compute_visibility(cloud, pose, intr, splat_radius_px, depth_tolerance)
    if mode == VisibilityMode.ZBUFFER or candidates.sum() <= max_points:
        return candidates
    idx = np.nonzero(candidates)[0]
    # stable sort keeps the lower index first on equal depth
    order = np.argsort(uvd[idx, 2], kind="stable")[:max_points]
    mask = np.zeros_like(candidates)
    mask[idx[order]] = True
    return mask


# =============================================================================
# NEIGHBOURHOODS
# =============================================================================

def build_knn_graph(cloud: CloudLike, k: int, chunk_size: int = 512) -> KnnGraph:
    """Exact Euclidean k-NN (self excluded, ties to the lower index, weights 1)."""
    pts = as_points(cloud)
    n = pts.shape[0]
    if k < 1 or n <= k:
        raise InsufficientPoints(f"k-NN with k={k} needs more than {k} points, got {n}")
    neighbors = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, chunk_size):
        stop = min(start + chunk_size, n)
        diff = pts[start:stop, None, :] - pts[None, :, :]
        d2 = np.sum(diff * diff, axis=-1)
        d2[np.arange(stop - start), np.arange(start, stop)] = np.inf
        neighbors[start:stop] = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return KnnGraph(k=k, neighbors=neighbors, weights=np.ones((n, k)))


# =============================================================================
# POSES
# =============================================================================

def relative_pose(primary: PoseSE3, aux: PoseSE3) -> PoseSE3:
    """(E*)⁻¹ · E^k: the auxiliary camera expressed in the primary camera frame."""
    return primary.inverse().compose(aux)


def flatten_pose(pose: PoseSE3) -> np.ndarray:
    """12-vector: rotation row-major (r11..r33) then translation (tx, ty, tz)."""
    return np.concatenate([pose.rotation.reshape(-1), pose.translation])


def look_at(eye, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)) -> PoseSE3:
    """Camera-to-world pose at `eye` looking at `target`."""
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    norm = np.linalg.norm(z)
    if norm == 0:
        raise InvalidGeometry("look_at: eye and target coincide")
    z /= norm
    x = np.cross(z, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(x) < 1e-9:
        # viewing straight along `up`
        x = np.cross(z, np.array([0.0, 1.0, 0.0]))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return PoseSE3(np.stack([x, y, z], axis=1), eye)


def hemisphere_ring_poses(count: int, elevation_deg: float = 30.0, radius: float = 2.2) -> list[PoseSE3]:
    """`count` cameras evenly spaced in azimuth on an upper-hemisphere ring."""
    el = np.deg2rad(elevation_deg)
    poses = []
    for k in range(count):
        az = 2.0 * np.pi * k / count
        eye = radius * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
        poses.append(look_at(eye))
    return poses


def random_hemisphere_pose(rng: np.random.Generator, radius: float = 2.2) -> PoseSE3:
    """Camera drawn uniformly from the upper hemisphere (area measure)."""
    z = rng.uniform(0.0, 1.0)
    az = rng.uniform(0.0, 2.0 * np.pi)
    r_xy = np.sqrt(max(0.0, 1.0 - z * z))
    eye = radius * np.array([r_xy * np.cos(az), r_xy * np.sin(az), z])
    return look_at(eye)
