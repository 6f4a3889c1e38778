"""
Training objective: flow matching plus Chamfer, Laplacian, ARAP, magnitude
and silhouette terms, combined with LossWeights.

All terms are torch functions of the predicted points so autograd supplies
the gradients. ARAP rotations are solved on detached edges and held fixed
while differentiating (local/global alternation).
"""

from typing import Dict, Sequence, Tuple

import numpy as np
import torch

from core.errors import CorrespondenceError, DimensionError, EmptyCloud
from core.geometry import CameraIntrinsics, KnnGraph, PoseSE3, SilhouetteMask

from ..models.config import LossWeights
from ..models.results import LOSS_TERMS, LossBreakdown
from .propagation import points_tensor
from .renderer import soft_silhouette

MaskView = Tuple[SilhouetteMask, PoseSE3, CameraIntrinsics]


def _pair(a, b) -> tuple[torch.Tensor, torch.Tensor]:
    ta = points_tensor(a)
    tb = points_tensor(b, ta)
    return ta, tb


def _aligned(pred, src) -> tuple[torch.Tensor, torch.Tensor]:
    p, s = _pair(pred, src)
    if p.shape != s.shape:
        raise CorrespondenceError(f"Clouds are not index-aligned: {tuple(p.shape)} vs {tuple(s.shape)}")
    return p, s


def squared_distances(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    diff = a[:, None, :] - b[None, :, :]
    return (diff * diff).sum(dim=-1)


# ── Geometric terms ─────────────────────────────────────────────────

def chamfer_loss(pred, gt) -> torch.Tensor:
    """Σ_p min_q ‖p − q‖² + Σ_q min_p ‖q − p‖² (sum form)."""
    p, g = _pair(pred, gt)
    if p.shape[0] == 0 or g.shape[0] == 0:
        raise EmptyCloud("Chamfer loss needs two non-empty clouds")
    d2 = squared_distances(p, g)
    return d2.min(dim=1).values.sum() + d2.min(dim=0).values.sum()


def _neighbors(graph: KnnGraph, n: int, device) -> tuple[torch.Tensor, np.ndarray]:
    if len(graph) != n:
        raise CorrespondenceError(f"k-NN graph has {len(graph)} rows for {n} points")
    return torch.as_tensor(graph.neighbors, dtype=torch.long, device=device), graph.weights


def laplacian_coordinates(points: torch.Tensor, neighbors: torch.Tensor) -> torch.Tensor:
    """δ_i = p_i − mean of its graph neighbours."""
    return points - points[neighbors].mean(dim=1)


def laplacian_loss(pred, src, graph: KnnGraph) -> torch.Tensor:
    """Σ_i ‖δ_i(pred) − δ_i(src)‖² on the source graph."""
    p, s = _aligned(pred, src)
    nbrs, _ = _neighbors(graph, s.shape[0], s.device)
    diff = laplacian_coordinates(p, nbrs) - laplacian_coordinates(s, nbrs)
    return (diff * diff).sum()


def kabsch_rotations(src: torch.Tensor, dst: torch.Tensor) -> torch.Tensor:
    """
    Batched proper rotations minimising Σ_j ‖dst_j − R src_j‖².

    src, dst: (B, m, 3). The cross-covariance gets ε·I added so degenerate
    sets resolve to the identity-closest optimum.
    """
    h = src.transpose(1, 2) @ dst
    eps = 1e-12 * torch.clamp(torch.linalg.matrix_norm(h), min=1.0)
    h = h + eps[:, None, None] * torch.eye(3, dtype=h.dtype, device=h.device)
    u, _, vh = torch.linalg.svd(h)
    v = vh.transpose(1, 2)
    d = torch.sign(torch.linalg.det(v @ u.transpose(1, 2)))
    d = torch.where(d == 0, torch.ones_like(d), d)
    fix = torch.diag_embed(torch.stack([torch.ones_like(d), torch.ones_like(d), d], dim=-1))
    return v @ fix @ u.transpose(1, 2)


def kabsch_rotation(edges_src, edges_dst) -> np.ndarray:
    """Single-neighbourhood Kabsch on m x 3 arrays."""
    src = torch.tensor(np.asarray(edges_src, dtype=np.float64).reshape(1, -1, 3))
    dst = torch.tensor(np.asarray(edges_dst, dtype=np.float64).reshape(1, -1, 3))
    if src.shape != dst.shape or src.shape[1] < 1:
        raise DimensionError(f"Edge sets must be matching m x 3 arrays, got {tuple(src.shape)} and {tuple(dst.shape)}")
    return kabsch_rotations(src, dst)[0].numpy()


def arap_loss(pred, src, graph: KnnGraph) -> torch.Tensor:
    """Σ_i Σ_j w_ij ‖(p'_i − p'_j) − R_i (p_i − p_j)‖² with R_i from Kabsch."""
    p, s = _aligned(pred, src)
    nbrs, weights = _neighbors(graph, s.shape[0], s.device)
    e_src = s[:, None, :] - s[nbrs]
    e_dst = p[:, None, :] - p[nbrs]
    rot = kabsch_rotations(e_src.detach(), e_dst.detach())
    resid = e_dst - e_src @ rot.transpose(1, 2)
    w = torch.as_tensor(weights, dtype=p.dtype, device=p.device)
    return (w * (resid * resid).sum(dim=-1)).sum()


def reg_loss(field) -> torch.Tensor:
    """(1/N) Σ ‖d_i‖²."""
    d = points_tensor(field)
    return (d * d).sum(dim=1).mean()


def silhouette_loss(pred, gt_masks: Sequence[MaskView], sigma_px: float) -> torch.Tensor:
    """Σ_k mean-pixel squared difference between the rendered and ground-truth masks."""
    p = points_tensor(pred)
    if len(gt_masks) == 0:
        raise DimensionError("Silhouette loss needs at least one view")
    total = p.new_zeros(())
    for mask, pose, intr in gt_masks:
        if mask.shape != (intr.height, intr.width):
            raise DimensionError(f"Mask {mask.shape} does not match image {intr.height}x{intr.width}")
        gt = torch.as_tensor(mask.values, dtype=p.dtype, device=p.device)
        diff = soft_silhouette(p, pose, intr, sigma_px) - gt
        total = total + (diff * diff).mean()
    return total


# ── Objective ───────────────────────────────────────────────────────

def loss_terms(
    *,
    fm: torch.Tensor,
    pred: torch.Tensor,
    field: torch.Tensor,
    src: torch.Tensor,
    gt: torch.Tensor,
    graph: KnnGraph,
    gt_masks: Sequence[MaskView],
    sigma_px: float,
    weights: LossWeights = None,
) -> Dict[str, torch.Tensor]:
    """All six terms; with `weights`, zero-weight terms are skipped (reported as 0)."""
    builders = {
        "fm": lambda: fm,
        "cd": lambda: chamfer_loss(pred, gt),
        "lap": lambda: laplacian_loss(pred, src, graph),
        "arap": lambda: arap_loss(pred, src, graph),
        "reg": lambda: reg_loss(field),
        "sil": lambda: silhouette_loss(pred, gt_masks, sigma_px),
    }
    terms = {}
    for name in LOSS_TERMS:
        if weights is not None and getattr(weights, name) == 0.0:
            terms[name] = pred.new_zeros(())
        else:
            terms[name] = builders[name]()
    return terms


def weighted_total(terms: Dict[str, torch.Tensor], weights: LossWeights) -> torch.Tensor:
    total = None
    for name in LOSS_TERMS:
        contrib = getattr(weights, name) * terms[name]
        total = contrib if total is None else total + contrib
    return total


def total_loss(terms: Dict[str, torch.Tensor], weights: LossWeights) -> Tuple[torch.Tensor, LossBreakdown]:
    """Weighted sum of the six terms and its float breakdown."""
    total = weighted_total(terms, weights)
    breakdown = LossBreakdown.from_terms({k: float(v.detach()) for k, v in terms.items()}, weights)
    return total, breakdown
