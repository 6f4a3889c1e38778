"""
Geometry-guided propagation.

A local-neighbourhood MLP encodes every template point; cosine affinities
between all points and the visible ones weight a temperature softmax that
spreads the visible-point features to the complete template.
"""

from typing import Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from core.errors import DimensionError, EmptyVisibleSet, InvalidTemperature
from core.geometry import KnnGraph, PointCloud

POSENC_OCTAVES = 4
EDGE_SCALE = 8.0

TensorLike = Union[PointCloud, np.ndarray, torch.Tensor]


def positional_encoding(x: torch.Tensor, octaves: int = POSENC_OCTAVES) -> torch.Tensor:
    """[x, sin(2^k π x), cos(2^k π x)] for k < octaves; 3 + 6·octaves channels."""
    parts = [x]
    for k in range(octaves):
        arg = (2.0 ** k) * torch.pi * x
        parts.append(torch.sin(arg))
        parts.append(torch.cos(arg))
    return torch.cat(parts, dim=-1)


def posenc_dim(octaves: int = POSENC_OCTAVES) -> int:
    return 3 + 6 * octaves


def points_tensor(cloud: TensorLike, like: torch.Tensor = None) -> torch.Tensor:
    """N x 3 tensor from a cloud, array or tensor (dtype/device follow `like`)."""
    if isinstance(cloud, PointCloud):
        cloud = cloud.points
    t = cloud if isinstance(cloud, torch.Tensor) else torch.tensor(np.asarray(cloud))
    if like is not None:
        t = t.to(dtype=like.dtype, device=like.device)
    return t


class GeoEncoder(nn.Module):
    """Per-point MLP over centred position and neighbour edge statistics."""

    def __init__(self, out_dim: int, layers: int = 3, octaves: int = POSENC_OCTAVES):
        super().__init__()
        self.octaves = octaves
        in_dim = 3 * posenc_dim(octaves)
        dims = [in_dim] + [out_dim] * layers
        self.layers = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))
        self.out_dim = out_dim

    @property
    def embedding_dim(self) -> int:
        return self.out_dim + posenc_dim(self.octaves)

    def encoder_input(self, points: torch.Tensor, neighbors: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        centred = points - points.mean(dim=0, keepdim=True)
        pos = positional_encoding(centred, self.octaves)
        edges = positional_encoding(EDGE_SCALE * (points[neighbors] - points[:, None, :]), self.octaves)
        return torch.cat([pos, edges.mean(dim=1), edges.amax(dim=1)], dim=-1), pos

    def forward(self, points: torch.Tensor, neighbors: torch.Tensor) -> torch.Tensor:
        h, pos = self.encoder_input(points, neighbors)
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < len(self.layers) - 1:
                h = F.gelu(h)
        return torch.cat([h, pos], dim=-1)


# ── Operations ──────────────────────────────────────────────────────

def encode_geometry(cloud: TensorLike, graph: KnnGraph, params: GeoEncoder) -> torch.Tensor:
    """N x (d + posenc) geometric embedding of every template point."""
    like = next(params.parameters())
    pts = points_tensor(cloud, like)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise DimensionError(f"Expected N x 3 points, got {tuple(pts.shape)}")
    if len(graph) != pts.shape[0]:
        raise DimensionError(f"k-NN graph has {len(graph)} rows for {pts.shape[0]} points")
    neighbors = torch.as_tensor(graph.neighbors, dtype=torch.long, device=pts.device)
    return params(pts, neighbors)


def affinity(emb: torch.Tensor, visible_indices) -> torch.Tensor:
    """values[j, i] = cos(g_j, g_visible_i); zero-norm rows give 0."""
    idx = torch.as_tensor(np.asarray(visible_indices), dtype=torch.long, device=emb.device).reshape(-1)
    if idx.numel() == 0:
        raise EmptyVisibleSet("No visible points to propagate from")
    unit = F.normalize(emb, dim=1, eps=1e-12)
    return unit @ unit[idx].T


def propagation_weights(aff: torch.Tensor, temperature: float) -> torch.Tensor:
    """Row-wise softmax of S/τ (max-subtracted)."""
    if not temperature > 0:
        raise InvalidTemperature(f"Temperature must be positive, got {temperature}")
    logits = aff / temperature
    logits = logits - logits.amax(dim=1, keepdim=True)
    return torch.softmax(logits, dim=1)


def propagate_features(aff: torch.Tensor, visible_feats: torch.Tensor, temperature: float) -> torch.Tensor:
    """Row j = Σ_i softmax_i(S_ji / τ) · f_i."""
    if aff.shape[1] != visible_feats.shape[0]:
        raise DimensionError(f"{aff.shape[1]} affinity columns for {visible_feats.shape[0]} visible features")
    return propagation_weights(aff, temperature) @ visible_feats


def scatter_visible(n_points: int, visible_feats: torch.Tensor, visible_indices) -> torch.Tensor:
    """Visible points keep their own features, every other point gets the visible mean."""
    idx = torch.as_tensor(np.asarray(visible_indices), dtype=torch.long, device=visible_feats.device)
    if idx.numel() == 0:
        raise EmptyVisibleSet("No visible points to propagate from")
    out = visible_feats.mean(dim=0, keepdim=True).repeat(n_points, 1)
    return out.index_copy(0, idx, visible_feats)
