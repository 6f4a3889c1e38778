"""
Point-splat rendering: differentiable soft silhouettes for the objective and
S-IoU, and depth-shaded previews written as PGM.
"""

import numpy as np
import torch

from core.errors import InvalidSigma
from core.formats import write_pgm
from core.geometry import CameraIntrinsics, CloudLike, PoseSE3, SilhouetteMask, as_points, pixel_indices, project_points


def check_sigma(sigma_px: float) -> None:
    if not (np.isfinite(sigma_px) and sigma_px > 0):
        raise InvalidSigma(f"sigma_px must be positive and finite, got {sigma_px}")


def project_tensor(points: torch.Tensor, pose: PoseSE3, intr: CameraIntrinsics):
    """Differentiable pinhole projection; returns (u, v, depth, in_front)."""
    rot = torch.tensor(pose.rotation, dtype=points.dtype, device=points.device)
    trans = torch.tensor(pose.translation, dtype=points.dtype, device=points.device)
    cam = (points - trans) @ rot
    depth = cam[:, 2]
    front = depth > 0
    safe = torch.where(front, depth, torch.ones_like(depth))
    u = intr.fx * cam[:, 0] / safe + intr.cx
    v = intr.fy * cam[:, 1] / safe + intr.cy
    return u, v, depth, front


def soft_silhouette(points: torch.Tensor, pose: PoseSE3, intr: CameraIntrinsics, sigma_px: float) -> torch.Tensor:
    """H x W mask, value = 1 − Π_n (1 − exp(−r_n² / 2σ²)) over points in front of the camera."""
    u, v, _, front = project_tensor(points, pose, intr)
    rows = torch.arange(intr.height, dtype=points.dtype, device=points.device)
    cols = torch.arange(intr.width, dtype=points.dtype, device=points.device)
    dv = rows[:, None, None] - v[None, None, :]
    du = cols[None, :, None] - u[None, None, :]
    g = torch.exp(-(du * du + dv * dv) / (2.0 * sigma_px ** 2)) * front.to(points.dtype)
    return 1.0 - torch.prod(1.0 - g, dim=-1)


def render_silhouette(cloud: CloudLike, pose: PoseSE3, intr: CameraIntrinsics, sigma_px: float = 1.5) -> SilhouetteMask:
    """Soft silhouette of a cloud as a SilhouetteMask."""
    check_sigma(sigma_px)
    with torch.no_grad():
        mask = soft_silhouette(torch.tensor(as_points(cloud)), pose, intr, sigma_px)
    return SilhouetteMask(np.clip(mask.numpy(), 0.0, 1.0))


def shade_cloud(cloud: CloudLike, pose: PoseSE3, intr: CameraIntrinsics, sigma_px: float = 1.0) -> np.ndarray:
    """
    Depth-shaded splat image in [0, 1].

    Each in-frame point contributes shade · exp(−r² / 2σ²) with shade falling
    from 1 (nearest point) to 0.3 (farthest); a pixel keeps the maximum.
    """
    check_sigma(sigma_px)
    pts = as_points(cloud)
    uvd = project_points(pts, pose, intr)
    _, _, in_frame = pixel_indices(uvd, intr)
    image = np.zeros((intr.height, intr.width))
    if not in_frame.any():
        return image
    u, v, depth = uvd[in_frame, 0], uvd[in_frame, 1], uvd[in_frame, 2]
    span = depth.max() - depth.min()
    shade = 1.0 - 0.7 * ((depth - depth.min()) / span if span > 0 else np.zeros_like(depth))
    rows = np.arange(intr.height, dtype=np.float64)[:, None]
    for start in range(0, u.shape[0], 256):
        sl = slice(start, start + 256)
        du = np.arange(intr.width, dtype=np.float64)[None, :, None] - u[None, None, sl]
        dv = rows[:, :, None] - v[None, None, sl]
        contrib = shade[sl] * np.exp(-(du * du + dv * dv) / (2.0 * sigma_px ** 2))
        image = np.maximum(image, contrib.max(axis=-1))
    return image


def render_cloud(cloud: CloudLike, pose: PoseSE3, intr: CameraIntrinsics, out_path, sigma_px: float = 1.0) -> np.ndarray:
    """Write the depth-shaded render as a binary PGM and return the 8-bit image."""
    image = np.clip(np.round(shade_cloud(cloud, pose, intr, sigma_px) * 255.0), 0, 255).astype(np.uint8)
    write_pgm(image, out_path)
    return image


def mask_image(mask: SilhouetteMask) -> np.ndarray:
    """8-bit PGM pixels, round(255·v)."""
    return np.clip(np.round(mask.values * 255.0), 0, 255).astype(np.uint8)
