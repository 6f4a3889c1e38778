"""
Deformation Model
=================
The full learnable pipeline and the per-pair precomputation feeding it.

    views ─► aggregate_template ─► propagate (geometry affinity) ─►
    align_to_target ─► refine ─► c ─► velocity net ─► deformation field

Everything that does not depend on parameters (visibility, feature lookup,
k-NN graph, primary view, ground-truth silhouettes) is computed once per
pair in `prepare_pair`. The `no_relation` variant swaps cross-attention
alignment for FiLM modulation by the pooled target feature.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from core.errors import ConfigError, DimensionError
from core.geometry import KnnGraph, PointCloud, build_knn_graph, select_visible

from ..models.config import LossWeights, TrainConfig, Variant
from .aggregation import AggregatedFeatures, PoseEmbedding, TemplateView, ViewSet, aggregate_template, select_primary_view
from .attention import MultiHeadAttention, SelfAttentionBlock, TargetFiLM, align_to_target, film_to_target, refine_self_attention
from .features import PatchFeatureMap, sample_features_at
from .flow import VelocityNet, fm_loss, single_step_deform
from .losses import MaskView, loss_terms, total_loss
from .propagation import GeoEncoder, affinity, encode_geometry, points_tensor, propagate_features, scatter_visible

# Top-level parameter blocks, in layout order
PARAMETER_BLOCKS = ("geo_encoder", "pose_embedding", "view_fusion", "alignment", "refinement", "velocity")


@dataclass
class PreparedPair:
    """Parameter-independent inputs of one template/target pair."""
    pair_id: str
    template: PointCloud
    views: ViewSet
    target_map: PatchFeatureMap
    graph: KnnGraph
    primary_index: int
    target: Optional[PointCloud] = None
    gt_masks: List[MaskView] = field(default_factory=list)

    @property
    def n_points(self) -> int:
        return len(self.template)


def prepare_pair(
    template: PointCloud,
    view_maps: Sequence[PatchFeatureMap],
    target_map: PatchFeatureMap,
    config: TrainConfig,
    target: PointCloud = None,
    gt_masks: Sequence[MaskView] = (),
    pair_id: str = "",
) -> PreparedPair:
    """Visibility, per-view feature sets, k-NN graph and primary view for one pair."""
    if target is not None and len(target) != len(template):
        raise DimensionError(f"Template has {len(template)} points, target {len(target)}")
    views = []
    for fmap in view_maps:
        visible = select_visible(
            template, fmap.pose, fmap.intr, config.max_visible,
            mode=config.visibility_mode,
            splat_radius_px=config.splat_radius_px,
            depth_tolerance=config.depth_tolerance,
        )
        views.append(TemplateView(fmap=fmap, points=sample_features_at(fmap, template, visible)))
    view_set = ViewSet(tuple(views))
    return PreparedPair(
        pair_id=pair_id or template.id,
        template=template,
        views=view_set,
        target_map=target_map,
        graph=build_knn_graph(template, config.knn_k),
        primary_index=select_primary_view(view_set, target_map),
        target=target,
        gt_masks=list(gt_masks),
    )


def check_compatible(config: TrainConfig, pair: PreparedPair, check_points: bool = True) -> None:
    """Raise ConfigError when a pair's point count or feature width differs from the config."""
    if check_points and pair.n_points != config.n_points:
        raise ConfigError(f"Pair '{pair.pair_id}' has {pair.n_points} points, config expects {config.n_points}")
    dims = {fmap.dim for fmap in pair.views.maps} | {pair.target_map.dim}
    if dims != {config.feature_dim}:
        raise ConfigError(f"Pair '{pair.pair_id}' has feature dims {sorted(dims)}, config expects {config.feature_dim}")


class DeformationModel(nn.Module):
    """Every learnable block of the pipeline, built from a TrainConfig."""

    def __init__(self, config: TrainConfig):
        super().__init__()
        self.config = config
        d = config.feature_dim
        self.geo_encoder = GeoEncoder(config.geo_dim, layers=config.geo_layers)
        self.pose_embedding = PoseEmbedding(d)
        self.view_fusion = MultiHeadAttention(d, d, config.attn_width, config.heads)
        if Variant(config.variant) == Variant.NO_RELATION:
            self.alignment = TargetFiLM(d, d)
        else:
            self.alignment = MultiHeadAttention(d, d, config.attn_width, config.heads)
        self.refinement = nn.ModuleList(
            SelfAttentionBlock(d, config.attn_width, config.heads) for _ in range(config.refine_depth)
        )
        self.velocity = VelocityNet(
            cond_dim=d,
            width=config.velocity_width,
            heads=config.heads,
            depth=config.velocity_depth,
            time_dim=config.time_embed_dim,
        )

    @property
    def variant(self) -> Variant:
        return Variant(self.config.variant)

    def parameter_blocks(self) -> dict:
        """Block name → list of (parameter name, parameter)."""
        blocks = {name: [] for name in PARAMETER_BLOCKS}
        for name, p in self.named_parameters():
            blocks[name.split(".", 1)[0]].append((name, p))
        return blocks

    # ── Forward pieces ──────────────────────────────────────

    def aggregate(self, pair: PreparedPair) -> AggregatedFeatures:
        return aggregate_template(
            pair.views, pair.target_map, self.pose_embedding, self.view_fusion,
            variant=self.variant, primary_index=pair.primary_index,
        )

    def propagate(self, pair: PreparedPair, partial: AggregatedFeatures) -> torch.Tensor:
        if self.variant == Variant.NO_PROPAGATION:
            return scatter_visible(pair.n_points, partial.features, partial.indices)
        emb = encode_geometry(pair.template, pair.graph, self.geo_encoder)
        return propagate_features(affinity(emb, partial.indices), partial.features, self.config.temperature)

    def condition(self, pair: PreparedPair) -> torch.Tensor:
        """Conditioning context c (N x D) for one pair."""
        full = self.propagate(pair, self.aggregate(pair))
        if self.variant == Variant.NO_RELATION:
            aligned = film_to_target(full, pair.target_map, self.alignment)
        else:
            aligned = align_to_target(full, pair.target_map, self.alignment)
        return refine_self_attention(aligned, self.refinement)

    def deform(self, pair: PreparedPair) -> tuple[torch.Tensor, torch.Tensor]:
        """Single-step (field, deformed points)."""
        return single_step_deform(pair.template, self.condition(pair), self.velocity)

    def template_tensor(self, pair: PreparedPair) -> torch.Tensor:
        return points_tensor(pair.template, self.velocity.head.weight)


def pair_loss(model: DeformationModel, pair: PreparedPair, t: float, weights: LossWeights, sigma_px: float):
    """
    Objective for one pair at flow time `t`.

    The flow-matching term uses x_t (t = 0 under direct regression); the
    other terms use the single-step deformation. Returns (total, terms, breakdown).
    """
    if pair.target is None:
        raise DimensionError(f"Pair '{pair.pair_id}' has no target cloud")
    c = model.condition(pair)
    x0 = model.template_tensor(pair)
    x1 = points_tensor(pair.target, x0)
    t_fm = 0.0 if model.variant == Variant.DIRECT_REGRESSION else t
    fm = fm_loss(model.velocity, x0, x1, c, t_fm) if weights.fm > 0 else x0.new_zeros(())
    field, pred = single_step_deform(x0, c, model.velocity)
    terms = loss_terms(
        fm=fm, pred=pred, field=field, src=x0, gt=x1, graph=pair.graph,
        gt_masks=pair.gt_masks, sigma_px=sigma_px, weights=weights,
    )
    total, breakdown = total_loss(terms, weights)
    return total, terms, breakdown


def field_to_numpy(field: torch.Tensor) -> np.ndarray:
    return field.detach().cpu().numpy().astype(np.float64)
