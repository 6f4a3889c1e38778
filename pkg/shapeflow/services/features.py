"""
Feature Plane
=============
Per-view patch feature grids (read from FMF1 files or produced by a
deterministic synthetic provider) and their attachment to visible 3D points.

The synthetic provider encodes the world-space coordinate of the nearest
visible surface point in each patch, so one surface point yields the same
feature in every view that sees it.
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from core.errors import DimensionError, InvalidGeometry
from core.formats import read_fmf, write_fmf
from core.geometry import (
    CameraIntrinsics,
    CloudLike,
    PoseSE3,
    as_points,
    compute_visibility,
    pixel_indices,
    project_points,
)

from ..utils import logger


# =============================================================================
# TYPES
# =============================================================================

@dataclass(frozen=True)
class PatchFeatureMap:
    """H_p x W_p x D feature grid seen from a camera."""
    grid: np.ndarray
    pose: PoseSE3
    intr: CameraIntrinsics
    patch_size: int

    def __post_init__(self):
        grid = np.asarray(self.grid)
        if grid.ndim != 3:
            raise DimensionError(f"Feature grid must be H_p x W_p x D, got shape {grid.shape}")
        hp, wp, _ = grid.shape
        if self.patch_size < 1 or hp * self.patch_size > self.intr.height or wp * self.patch_size > self.intr.width:
            raise DimensionError(
                f"Patch grid {hp}x{wp} with patch {self.patch_size} exceeds image "
                f"{self.intr.height}x{self.intr.width}"
            )
        if not np.all(np.isfinite(grid)):
            raise InvalidGeometry("Feature grid contains non-finite values")
        object.__setattr__(self, "grid", grid)

    @property
    def dim(self) -> int:
        return self.grid.shape[2]

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.grid.shape[0], self.grid.shape[1]

    def flattened(self) -> np.ndarray:
        """(H_p·W_p) x D rows in (row, col) order."""
        return self.grid.reshape(-1, self.dim).astype(np.float64)

    def scaled(self, factor: float) -> "PatchFeatureMap":
        return PatchFeatureMap(self.grid * factor, self.pose, self.intr, self.patch_size)


@dataclass(frozen=True)
class PointFeatureSet:
    """Features attached to a subset of template points (one row per index)."""
    features: np.ndarray        # (M, D)
    point_indices: np.ndarray   # (M,)
    out_of_frame: int = 0

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        idx = np.asarray(self.point_indices, dtype=np.int64).reshape(-1)
        if feats.ndim != 2 or feats.shape[0] != idx.shape[0]:
            raise DimensionError(f"{feats.shape[0] if feats.ndim else 0} feature rows for {idx.shape[0]} indices")
        if np.unique(idx).size != idx.size:
            raise InvalidGeometry("Point indices must be distinct")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "point_indices", idx)

    def __len__(self) -> int:
        return self.point_indices.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


# =============================================================================
# FILE IO
# =============================================================================

def load_feature_map(path) -> PatchFeatureMap:
    """Load an FMF1 file (bit-exact float32 grid)."""
    rec = read_fmf(path)
    return PatchFeatureMap(grid=rec.grid, pose=rec.pose, intr=rec.intr, patch_size=rec.patch_size)


def save_feature_map(fmap: PatchFeatureMap, path) -> None:
    write_fmf(path, fmap.grid, fmap.pose, fmap.intr, fmap.patch_size)


# =============================================================================
# SYNTHETIC PROVIDER
# =============================================================================

class SyntheticFeatureEncoder:
    """
    Random Fourier encoding of world coordinates.

    feature(x) = sqrt(2/D) · [sin(ω_k a_k·x + φ_k), cos(ω_k a_k·x + φ_k)]
    with unit directions a_k, ω_k in [0.5, 3] and phases φ_k drawn from `seed`.
    Every encoded vector has unit norm (odd D pads one zero channel).
    """

    def __init__(self, dim: int, seed: int = 0):
        if dim < 8:
            raise DimensionError(f"Synthetic features need D >= 8, got {dim}")
        self.dim = dim
        half = dim // 2
        rng = np.random.default_rng(seed)
        dirs = rng.normal(size=(half, 3))
        self.directions = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
        self.frequencies = rng.uniform(0.5, 3.0, size=half)
        self.phases = rng.uniform(0.0, 2.0 * np.pi, size=half)

    def encode(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        arg = (pts @ self.directions.T) * self.frequencies + self.phases
        out = np.zeros((pts.shape[0], self.dim))
        half = self.directions.shape[0]
        out[:, :half] = np.sin(arg)
        out[:, half:2 * half] = np.cos(arg)
        return out * np.sqrt(2.0 / self.dim)


@lru_cache(maxsize=32)
def _encoder(dim: int, seed: int) -> SyntheticFeatureEncoder:
    return SyntheticFeatureEncoder(dim, seed)


def synthetic_feature_map(
    cloud: CloudLike,
    pose: PoseSE3,
    intr: CameraIntrinsics,
    D: int,
    seed: int = 0,
    patch_size: int = 8,
) -> PatchFeatureMap:
    """
    Deterministic feature grid for `cloud` seen from `pose`.

    Each patch holds the encoding of the nearest visible point whose pixel
    falls inside it; patches with no visible point stay zero.
    """
    pts = as_points(cloud)
    hp, wp = intr.height // patch_size, intr.width // patch_size
    grid = np.zeros((hp, wp, D), dtype=np.float32)

    visible = compute_visibility(pts, pose, intr)
    uvd = project_points(pts, pose, intr)
    row, col, _ = pixel_indices(uvd, intr)
    idx = np.nonzero(visible)[0]
    pr, pc = row[idx] // patch_size, col[idx] // patch_size
    inside = (pr < hp) & (pc < wp)
    idx, pr, pc = idx[inside], pr[inside], pc[inside]
    if idx.size == 0:
        return PatchFeatureMap(grid, pose, intr, patch_size)

    # nearest point per patch, lower index on equal depth
    patch_id = pr * wp + pc
    order = np.lexsort((idx, uvd[idx, 2], patch_id))
    _, first = np.unique(patch_id[order], return_index=True)
    winners = order[first]

    feats = _encoder(D, seed).encode(pts[idx[winners]])
    grid[pr[winners], pc[winners]] = feats.astype(np.float32)
    return PatchFeatureMap(grid, pose, intr, patch_size)


# =============================================================================
# LOOKUP & SIMILARITY
# =============================================================================

def patch_coordinates(u: np.ndarray, v: np.ndarray, patch_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Continuous (col, row) grid coordinates; patch (r, c) centre maps to (c, r)."""
    return (u + 0.5) / patch_size - 0.5, (v + 0.5) / patch_size - 0.5


def bilinear_lookup(grid: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of an H_p x W_p x D grid, clamped to the border."""
    hp, wp, _ = grid.shape
    g = np.asarray(grid, dtype=np.float64)
    gx = np.clip(gx, 0.0, wp - 1)
    gy = np.clip(gy, 0.0, hp - 1)
    x0 = np.floor(gx).astype(np.int64)
    y0 = np.floor(gy).astype(np.int64)
    x1 = np.minimum(x0 + 1, wp - 1)
    y1 = np.minimum(y0 + 1, hp - 1)
    wx = (gx - x0)[:, None]
    wy = (gy - y0)[:, None]
    top = g[y0, x0] * (1 - wx) + g[y0, x1] * wx
    bottom = g[y1, x0] * (1 - wx) + g[y1, x1] * wx
    return top * (1 - wy) + bottom * wy


def sample_features_at(fmap: PatchFeatureMap, cloud: CloudLike, visibility: np.ndarray) -> PointFeatureSet:
    """Bilinearly sample the patch grid at every visible point's projection."""
    pts = as_points(cloud)
    visibility = np.asarray(visibility, dtype=bool).reshape(-1)
    if visibility.shape[0] != pts.shape[0]:
        raise DimensionError(f"Visibility mask has {visibility.shape[0]} entries for {pts.shape[0]} points")

    idx = np.nonzero(visibility)[0]
    uvd = project_points(pts[idx], fmap.pose, fmap.intr)
    u, v, depth = uvd[:, 0], uvd[:, 1], uvd[:, 2]
    in_frame = (depth > 0) & (u >= -0.5) & (u <= fmap.intr.width - 0.5) & (v >= -0.5) & (v <= fmap.intr.height - 0.5)
    dropped = int((~in_frame).sum())
    if dropped:
        logger.warning(f"{dropped} visible point(s) project out of frame; excluded from feature lookup")

    gx, gy = patch_coordinates(u[in_frame], v[in_frame], fmap.patch_size)
    feats = bilinear_lookup(fmap.grid, gx, gy) if in_frame.any() else np.zeros((0, fmap.dim))
    return PointFeatureSet(features=feats, point_indices=idx[in_frame], out_of_frame=dropped)


def pooled_features(fmap: PatchFeatureMap) -> np.ndarray:
    """Mean over non-empty patches (zeros when every patch is empty)."""
    rows = fmap.flattened()
    nonempty = np.any(rows != 0.0, axis=1)
    if not nonempty.any():
        return np.zeros(fmap.dim)
    return rows[nonempty].mean(axis=0)


def image_similarity(a: PatchFeatureMap, b: PatchFeatureMap) -> float:
    """Cosine similarity of mean-pooled non-empty patch features; zero operand → 0."""
    if a.dim != b.dim:
        raise DimensionError(f"Feature dims differ: {a.dim} vs {b.dim}")
    pa, pb = pooled_features(a), pooled_features(b)
    na, nb = np.linalg.norm(pa), np.linalg.norm(pb)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(pa @ pb / (na * nb), -1.0, 1.0))


def rank_templates(library: Sequence[PatchFeatureMap], target: PatchFeatureMap) -> list[int]:
    """Library indices ordered by decreasing similarity to `target` (ties → lower index)."""
    scores = [image_similarity(m, target) for m in library]
    return sorted(range(len(scores)), key=lambda i: (-scores[i], i))
