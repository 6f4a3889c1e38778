"""
File Formats
============
Readers and writers for the on-disk artifacts: PCF1 point clouds, FMF1 patch
feature maps, text pose / contact / keypoint files and binary PGM images.

All binary formats are little-endian. Readers validate magic, header
consistency and payload length and raise FormatError on any mismatch.
"""

import os
import struct
from pathlib import Path
from typing import NamedTuple, Union

import numpy as np
from loguru import logger

from .errors import FormatError, InvalidGeometry
from .geometry import CameraIntrinsics, PointCloud, PoseSE3

PathLike = Union[str, os.PathLike]

PCF_MAGIC = b"PCF1"
FMF_MAGIC = b"FMF1"

# magic, H_p, W_p, D, patch, 16 pose f64, 4 intrinsics f64, H, W
_FMF_HEADER = struct.Struct("<4s4I16d4d2I")


def _ensure_parent(path: PathLike) -> None:
    os.makedirs(os.path.dirname(os.fspath(path)) or ".", exist_ok=True)


def _read_bytes(path: PathLike) -> bytes:
    with open(path, "rb") as f:
        return f.read()


# ── PCF1 point clouds ───────────────────────────────────────────────

def write_pcf(cloud: Union[PointCloud, np.ndarray], path: PathLike) -> None:
    """Write a point cloud as PCF1 (float32 coordinates)."""
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    _ensure_parent(path)
    with open(path, "wb") as f:
        f.write(PCF_MAGIC)
        f.write(struct.pack("<I", pts.shape[0]))
        f.write(np.ascontiguousarray(pts, dtype="<f4").tobytes())


def read_pcf(path: PathLike, cloud_id: str = None) -> PointCloud:
    """Read a PCF1 file; the cloud id defaults to the file stem."""
    data = _read_bytes(path)
    if len(data) < 8 or data[:4] != PCF_MAGIC:
        raise FormatError(f"{path}: not a PCF1 file (magic {data[:4]!r})")
    (n,) = struct.unpack_from("<I", data, 4)
    expected = 8 + n * 12
    if len(data) < expected:
        raise FormatError(f"{path}: truncated PCF1 payload ({len(data)} of {expected} bytes)")
    if len(data) > expected:
        raise FormatError(f"{path}: {len(data) - expected} trailing bytes after PCF1 payload")
    pts = np.frombuffer(data, dtype="<f4", count=n * 3, offset=8).reshape(n, 3)
    try:
        return PointCloud(pts.astype(np.float64), id=cloud_id or Path(path).stem)
    except InvalidGeometry as e:
        raise FormatError(f"{path}: {e}") from e


# ── FMF1 feature maps ───────────────────────────────────────────────

class FeatureMapRecord(NamedTuple):
    """Decoded FMF1 contents."""
    grid: np.ndarray            # (H_p, W_p, D) float32
    pose: PoseSE3
    intr: CameraIntrinsics
    patch_size: int


def write_fmf(path: PathLike, grid: np.ndarray, pose: PoseSE3, intr: CameraIntrinsics, patch_size: int) -> None:
    """Write a patch grid with its camera as FMF1."""
    grid = np.asarray(grid)
    if grid.ndim != 3:
        raise FormatError(f"Feature grid must be H_p x W_p x D, got shape {grid.shape}")
    hp, wp, d = grid.shape
    header = _FMF_HEADER.pack(
        FMF_MAGIC, hp, wp, d, int(patch_size),
        *pose.matrix().reshape(-1).tolist(),
        float(intr.fx), float(intr.fy), float(intr.cx), float(intr.cy),
        int(intr.height), int(intr.width),
    )
    _ensure_parent(path)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(grid, dtype="<f4").tobytes())


def read_fmf(path: PathLike) -> FeatureMapRecord:
    """Read an FMF1 file, validating header and payload length."""
    data = _read_bytes(path)
    if len(data) < 4 or data[:4] != FMF_MAGIC:
        raise FormatError(f"{path}: not an FMF1 file (magic {data[:4]!r})")
    if len(data) < _FMF_HEADER.size:
        raise FormatError(f"{path}: truncated FMF1 header")
    fields = _FMF_HEADER.unpack_from(data, 0)
    hp, wp, d, patch = fields[1:5]
    pose_vals = fields[5:21]
    fx, fy, cx, cy = fields[21:25]
    height, width = fields[25:27]

    count = hp * wp * d
    expected = _FMF_HEADER.size + 4 * count
    if len(data) < expected:
        raise FormatError(
            f"{path}: truncated FMF1 payload, header says {hp}x{wp}x{d} "
            f"but only {len(data) - _FMF_HEADER.size} payload bytes"
        )
    if len(data) > expected:
        raise FormatError(f"{path}: {len(data) - expected} trailing bytes after FMF1 payload")
    if patch < 1 or hp * patch > height or wp * patch > width:
        raise FormatError(f"{path}: patch grid {hp}x{wp} (patch {patch}) exceeds image {height}x{width}")

    try:
        pose = _pose_from_values(pose_vals)
        intr = CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy, height=height, width=width)
    except InvalidGeometry as e:
        raise FormatError(f"{path}: {e}") from e

    grid = np.frombuffer(data, dtype="<f4", count=count, offset=_FMF_HEADER.size).reshape(hp, wp, d).copy()
    if not np.all(np.isfinite(grid)):
        raise FormatError(f"{path}: non-finite feature values")
    return FeatureMapRecord(grid=grid, pose=pose, intr=intr, patch_size=int(patch))


# ── Pose text files ─────────────────────────────────────────────────

def _pose_from_values(values) -> PoseSE3:
    mat = np.asarray(values, dtype=np.float64).reshape(4, 4)
    if not np.allclose(mat[3], [0.0, 0.0, 0.0, 1.0], atol=1e-9):
        raise InvalidGeometry(f"Pose bottom row must be 0 0 0 1, got {mat[3].tolist()}")
    return PoseSE3.from_matrix(mat)


def write_pose(pose: PoseSE3, path: PathLike) -> None:
    """Write a 4x4 row-major camera-to-world matrix, one row per line."""
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as f:
        for row in pose.matrix():
            f.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_pose(path: PathLike) -> PoseSE3:
    with open(path, "r", encoding="utf-8") as f:
        tokens = f.read().split()
    if len(tokens) != 16:
        raise FormatError(f"{path}: pose file needs 16 numbers, found {len(tokens)}")
    try:
        return _pose_from_values([float(t) for t in tokens])
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from e


# ── Contact maps & keypoints ────────────────────────────────────────

def write_contact(values: np.ndarray, path: PathLike) -> None:
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as f:
        for v in np.asarray(values, dtype=np.float64).reshape(-1):
            f.write(f"{float(v)!r}\n")


def read_contact(path: PathLike) -> np.ndarray:
    """One decimal per line, each within [0, 1]."""
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    try:
        values = np.array([float(ln) for ln in lines], dtype=np.float64)
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from e
    if values.size and (not np.all(np.isfinite(values)) or values.min() < 0.0 or values.max() > 1.0):
        raise FormatError(f"{path}: contact values must lie within [0, 1]")
    return values


def write_keypoints(points: np.ndarray, path: PathLike) -> None:
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as f:
        for x, y, z in np.asarray(points, dtype=np.float64).reshape(-1, 3):
            f.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n")


def read_keypoints(path: PathLike) -> np.ndarray:
    """One `x y z` triple per line."""
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 numbers, found {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError as e:
                raise FormatError(f"{path}:{lineno}: {e}") from e
    return np.array(rows, dtype=np.float64).reshape(-1, 3)


# ── PGM images ──────────────────────────────────────────────────────

def write_pgm(image: np.ndarray, path: PathLike) -> None:
    """Binary 8-bit PGM (P5). Float images in [0, 1] are scaled by 255 and rounded."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise FormatError(f"PGM image must be 2D, got shape {img.shape}")
    if img.dtype != np.uint8:
        img = np.clip(np.round(img.astype(np.float64) * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape
    _ensure_parent(path)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())
    logger.debug(f"Wrote {w}x{h} PGM → {path}")


def read_pgm(path: PathLike) -> np.ndarray:
    data = _read_bytes(path)
    parts = data.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM file")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PGM is supported (maxval {maxval})")
    pixels = data[len(data) - w * h:] if len(data) >= w * h else b""
    if len(pixels) != w * h:
        raise FormatError(f"{path}: truncated PGM payload")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w).copy()
