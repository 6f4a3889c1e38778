"""
Experiment configuration schemas.

TrainConfig mirrors the JSON document accepted by `train --config`; its
defaults are the desk-scale setup, `TrainConfig.full_scale()` gives the
full-scale preset.
"""

import json
from enum import Enum
from pathlib import Path
from typing import Any, Optional, Type, TypeVar

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from core.errors import ConfigError
from core.geometry import CameraIntrinsics, VisibilityMode

M = TypeVar("M", bound=BaseModel)


# =============================================================================
# ENUMS
# =============================================================================

class Variant(str, Enum):
    """Pipeline variants (ablations of the full model)."""
    FULL = "full"
    SINGLE_VIEW = "single_view"
    NO_PRIMARY_SELECTION = "no_primary_selection"
    NO_POSE_ENCODING = "no_pose_encoding"
    NO_PROPAGATION = "no_propagation"
    DIRECT_REGRESSION = "direct_regression"
    NO_RELATION = "no_relation"


class ShapeFamily(str, Enum):
    SUPERQUADRIC = "superquadric"


# =============================================================================
# HELPERS
# =============================================================================

def validated(model_cls: Type[M], data: Any) -> M:
    """Validate `data` into `model_cls`, turning pydantic errors into ConfigError."""
    if isinstance(data, model_cls):
        return data
    try:
        return model_cls.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid {model_cls.__name__}: {e}") from e


# =============================================================================
# MODELS
# =============================================================================

class LossWeights(BaseModel):
    """Weights of the six objective terms."""
    model_config = ConfigDict(extra="forbid")

    fm: float = Field(1.0, ge=0.0, allow_inf_nan=False)
    cd: float = Field(100.0, ge=0.0, allow_inf_nan=False)
    lap: float = Field(1.0, ge=0.0, allow_inf_nan=False)
    arap: float = Field(1.0, ge=0.0, allow_inf_nan=False)
    reg: float = Field(1.0, ge=0.0, allow_inf_nan=False)
    sil: float = Field(5.0, ge=0.0, allow_inf_nan=False)

    @classmethod
    def only(cls, **terms: float) -> "LossWeights":
        """Weights with every term zero except the ones given."""
        base = {name: 0.0 for name in cls.model_fields}
        base.update(terms)
        return cls(**base)


class TrainConfig(BaseModel):
    """Model, objective, optimizer and camera setup for one experiment."""
    model_config = ConfigDict(extra="forbid", use_enum_values=True)

    # Data shape
    n_points: int = Field(256, ge=2, description="N, template points")
    max_visible: int = Field(128, ge=1, description="M, visible points kept per view")
    n_views: int = Field(4, ge=1, description="K, template support views")
    feature_dim: int = Field(32, ge=1, description="D, image feature channels")

    # Network
    geo_dim: int = Field(64, ge=1, description="d, learned geometric embedding width")
    geo_layers: int = Field(3, ge=1)
    attn_width: int = Field(64, ge=1, description="attention query-stream width")
    heads: int = Field(8, ge=1)
    refine_depth: int = Field(2, ge=1, description="self-attention refinement blocks")
    velocity_width: int = Field(64, ge=1)
    velocity_depth: int = Field(2, ge=1)
    time_embed_dim: int = Field(16, ge=2)
    temperature: float = Field(0.07, gt=0.0)
    variant: Variant = Variant.FULL

    # Geometry / rendering
    knn_k: int = Field(8, ge=1)
    sigma_px: float = Field(1.5, gt=0.0)
    splat_radius_px: int = Field(2, ge=0)
    depth_tolerance: float = Field(0.01, ge=0.0)
    visibility_mode: VisibilityMode = VisibilityMode.ZBUFFER_TOP_M
    image_size: int = Field(64, ge=1)
    focal: float = Field(64.0, gt=0.0)
    patch_size: int = Field(8, ge=1)
    camera_radius: float = Field(2.2, gt=0.0)
    ring_elevation_deg: float = Field(30.0, ge=0.0, lt=90.0)
    siou_threshold: float = Field(0.5, ge=0.0, le=1.0)

    # Objective
    weights: LossWeights = Field(default_factory=LossWeights)

    # Optimizer
    lr: float = Field(1e-3, gt=0.0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    eps: float = Field(1e-8, gt=0.0)
    batch_size: int = Field(4, ge=1)
    epochs: int = Field(300, ge=0)
    anneal_start: float = Field(0.5, ge=0.0, le=1.0, description="fraction of epochs before cosine decay")
    lr_floor: float = Field(0.01, ge=0.0, le=1.0, description="final LR as a fraction of lr")
    seed: int = 0

    # Evaluation
    emd_exact_max: int = Field(512, ge=1, description="largest N solved exactly for EMD")

    @model_validator(mode="after")
    def _check_shapes(self) -> "TrainConfig":
        if self.attn_width % self.heads:
            raise ValueError(f"attn_width {self.attn_width} not divisible by heads {self.heads}")
        if self.velocity_width % self.heads:
            raise ValueError(f"velocity_width {self.velocity_width} not divisible by heads {self.heads}")
        if self.time_embed_dim % 2:
            raise ValueError("time_embed_dim must be even")
        if self.knn_k >= self.n_points:
            raise ValueError(f"knn_k {self.knn_k} must be smaller than n_points {self.n_points}")
        if self.patch_size > self.image_size:
            raise ValueError("patch_size larger than image")
        return self

    # ── Derived ─────────────────────────────────────────────

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics.centered(self.image_size, self.focal)

    @property
    def patch_grid(self) -> int:
        return self.image_size // self.patch_size

    # ── Presets / IO ────────────────────────────────────────

    @classmethod
    def full_scale(cls, **overrides) -> "TrainConfig":
        """Full-scale preset (large template, 16 views, 768-dim features)."""
        values = dict(
            n_points=1024, max_visible=512, n_views=16, feature_dim=768,
            geo_dim=256, attn_width=512, heads=8, velocity_width=512,
            lr=1e-5, epochs=100, batch_size=8, image_size=224, focal=224.0, patch_size=16,
        )
        values.update(overrides)
        return cls(**values)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot read config {path}: {e}") from e
        return validated(cls, data)

    def to_json(self, path=None) -> str:
        text = self.model_dump_json(indent=2)
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


class SyntheticSpec(BaseModel):
    """Synthetic superquadric dataset description."""
    model_config = ConfigDict(extra="forbid", use_enum_values=True)

    family: ShapeFamily = ShapeFamily.SUPERQUADRIC
    count: int = Field(64, ge=1)
    n_points: int = Field(256, ge=2)
    n_views: int = Field(4, ge=1)
    feature_dim: int = Field(32, ge=8)
    image_size: int = Field(64, ge=1)
    focal: float = Field(64.0, gt=0.0)
    patch_size: int = Field(8, ge=1)
    camera_radius: float = Field(2.2, gt=0.0)
    ring_elevation_deg: float = Field(30.0, ge=0.0, lt=90.0)

    # Target family ranges
    scale_min: float = Field(0.5, gt=0.0)
    scale_max: float = Field(1.5, gt=0.0)
    exponent_min: float = Field(0.4, gt=0.0)
    exponent_max: float = Field(1.0, gt=0.0)

    # Fixed parameters override the random draw (scales sx, sy, sz; exponents e1, e2)
    fixed_scales: Optional[tuple[float, float, float]] = None
    fixed_exponents: Optional[tuple[float, float]] = None

    randomize_template: bool = False
    feature_seed: int = Field(0, description="synthetic feature provider seed")

    @model_validator(mode="after")
    def _check_ranges(self) -> "SyntheticSpec":
        if self.scale_min > self.scale_max or self.exponent_min > self.exponent_max:
            raise ValueError("range minimum exceeds maximum")
        return self

    @classmethod
    def for_config(cls, config: TrainConfig, **overrides) -> "SyntheticSpec":
        """Spec whose shapes and cameras match a training config."""
        values = dict(
            n_points=config.n_points, n_views=config.n_views, feature_dim=config.feature_dim,
            image_size=config.image_size, focal=config.focal, patch_size=config.patch_size,
            camera_radius=config.camera_radius, ring_elevation_deg=config.ring_elevation_deg,
        )
        values.update(overrides)
        return validated(cls, values)
