"""
View-adaptive aggregation.

Picks the template view that looks most like the target observation, embeds
every view's camera relative to it, adds the embedding to that view's
visible-point features and fuses the primary view's points against the
memory bank of all views with cross-attention.
"""

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
import torch
import torch.nn as nn

from core.errors import DimensionError, EmptyViewSet
from core.geometry import PoseSE3, flatten_pose, relative_pose

from ..models.config import Variant
from .attention import MultiHeadAttention
from .features import PatchFeatureMap, PointFeatureSet, image_similarity


@dataclass(frozen=True)
class TemplateView:
    fmap: PatchFeatureMap
    points: PointFeatureSet


@dataclass(frozen=True)
class ViewSet:
    """K >= 1 views of one template."""
    views: tuple

    def __post_init__(self):
        views = tuple(self.views)
        if not views:
            raise EmptyViewSet("A view set needs at least one view")
        dims = {v.fmap.dim for v in views}
        if len(dims) != 1:
            raise DimensionError(f"Views disagree on feature dim: {sorted(dims)}")
        object.__setattr__(self, "views", views)

    def __len__(self) -> int:
        return len(self.views)

    def __getitem__(self, k: int) -> TemplateView:
        return self.views[k]

    @property
    def maps(self) -> List[PatchFeatureMap]:
        return [v.fmap for v in self.views]

    def reordered(self, order: Sequence[int]) -> "ViewSet":
        return ViewSet(tuple(self.views[k] for k in order))


@dataclass
class AggregatedFeatures:
    """Fused partial features, the template indices they belong to and the primary view."""
    features: torch.Tensor
    indices: np.ndarray
    primary_index: int


class PoseEmbedding(nn.Module):
    """e = W_pose · flatten(rel) + b_pose."""

    def __init__(self, dim: int):
        super().__init__()
        self.linear = nn.Linear(12, dim)

    def forward(self, flat_pose: torch.Tensor) -> torch.Tensor:
        return self.linear(flat_pose)


# ── Operations ──────────────────────────────────────────────────────

def select_primary_view(views: ViewSet, target: PatchFeatureMap) -> int:
    """Index of the most similar view (lowest index on ties)."""
    scores = [image_similarity(v.fmap, target) for v in views.views]
    return int(np.argmax(scores))


def embed_pose(rel: PoseSE3, params: PoseEmbedding) -> torch.Tensor:
    like = params.linear.weight
    flat = torch.as_tensor(flatten_pose(rel), dtype=like.dtype, device=like.device)
    return params(flat)


def modulate(feats: torch.Tensor, e: torch.Tensor) -> torch.Tensor:
    """Add the pose embedding to every row."""
    if feats.ndim != 2 or feats.shape[1] != e.shape[-1]:
        raise DimensionError(f"Cannot add a {e.shape[-1]}-dim embedding to features of shape {tuple(feats.shape)}")
    return feats + e


def cross_view_fuse(primary_mod: torch.Tensor, all_mod: Sequence[torch.Tensor], params: MultiHeadAttention) -> torch.Tensor:
    """Attention(Q = primary, K = V = bank of all views) + primary."""
    bank_rows = [m for m in all_mod if m.shape[0] > 0]
    if not bank_rows:
        raise EmptyViewSet("Memory bank is empty")
    dims = {m.shape[1] for m in bank_rows}
    if dims != {primary_mod.shape[1]}:
        raise DimensionError(f"Memory bank dims {sorted(dims)} differ from query dim {primary_mod.shape[1]}")
    bank = torch.cat(bank_rows, dim=0)
    return primary_mod + params(primary_mod, bank)


def per_point_mean(
    feats: Sequence[torch.Tensor],
    indices: Sequence[np.ndarray],
    keep: np.ndarray,
) -> torch.Tensor:
    """Mean feature of each index in `keep` over the views that observe it."""
    like = feats[0]
    n = int(max([int(keep.max(initial=-1))] + [int(i.max(initial=-1)) for i in indices])) + 1
    total = torch.zeros((n, like.shape[1]), dtype=like.dtype, device=like.device)
    count = torch.zeros(n, dtype=like.dtype, device=like.device)
    for f, idx in zip(feats, indices):
        if len(idx) == 0:
            continue
        t_idx = torch.as_tensor(idx, dtype=torch.long, device=like.device)
        total = total.index_add(0, t_idx, f)
        count = count.index_add(0, t_idx, torch.ones(len(idx), dtype=like.dtype, device=like.device))
    keep_t = torch.as_tensor(keep, dtype=torch.long, device=like.device)
    return total[keep_t] / count[keep_t].clamp_min(1.0)[:, None]


def _features(view: TemplateView, like: torch.Tensor) -> torch.Tensor:
    return torch.as_tensor(view.points.features, dtype=like.dtype, device=like.device)


def aggregate_template(
    views: ViewSet,
    target: PatchFeatureMap,
    pose_embedding: PoseEmbedding,
    view_fusion: MultiHeadAttention,
    variant: Variant = Variant.FULL,
    primary_index: int = None,
) -> AggregatedFeatures:
    """
    Viewpoint-robust partial features for propagation.

    Runs primary-view selection, relative pose embedding, modulation and
    cross-view fusion. `variant` switches off individual stages; a given
    `primary_index` skips the selection.
    """
    variant = Variant(variant)
    like = pose_embedding.linear.weight
    primary = select_primary_view(views, target) if primary_index is None else int(primary_index)
    anchor = views[primary].fmap.pose
    primary_idx = views[primary].points.point_indices

    if variant == Variant.NO_POSE_ENCODING:
        raw = [_features(v, like) for v in views.views]
        idx_list = [v.points.point_indices for v in views.views]
        union = np.unique(np.concatenate(idx_list)) if idx_list else np.zeros(0, dtype=np.int64)
        return AggregatedFeatures(per_point_mean(raw, idx_list, union), union, primary)

    modulated = []
    for view in views.views:
        e = embed_pose(relative_pose(anchor, view.fmap.pose), pose_embedding)
        modulated.append(modulate(_features(view, like), e))

    if variant == Variant.SINGLE_VIEW:
        return AggregatedFeatures(modulated[primary], primary_idx, primary)

    if variant == Variant.NO_PRIMARY_SELECTION:
        query = per_point_mean(modulated, [v.points.point_indices for v in views.views], primary_idx)
    else:
        query = modulated[primary]
    fused = cross_view_fuse(query, modulated, view_fusion)
    return AggregatedFeatures(fused, primary_idx, primary)
