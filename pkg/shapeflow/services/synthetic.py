"""
Synthetic Superquadric Pairs
============================
Analytically corresponded template/target pairs: both shapes are sampled at
the same parameter-space points (a Fibonacci sphere), so index i is the same
surface location on both. Template views sit on an upper-hemisphere ring;
the target is observed from one pose drawn uniformly from the hemisphere.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Union

import numpy as np

from core.geometry import (
    CameraIntrinsics,
    PointCloud,
    PoseSE3,
    SilhouetteMask,
    hemisphere_ring_poses,
    normalize_to_unit_cube,
    random_hemisphere_pose,
)

from ..models.config import SyntheticSpec, validated
from ..utils import logger, settings
from .features import PatchFeatureMap, synthetic_feature_map
from .renderer import render_silhouette

SPHERE_PARAMS = {"scales": [1.0, 1.0, 1.0], "exponents": [1.0, 1.0]}


@dataclass
class SyntheticPair:
    pair_id: str
    template: PointCloud
    target: PointCloud
    template_views: List[PatchFeatureMap]
    target_view: PatchFeatureMap
    gt_masks: List[SilhouetteMask] = field(default_factory=list)
    params: dict = field(default_factory=dict)

    @property
    def gt_deformation(self) -> np.ndarray:
        return self.target.points - self.template.points

    @property
    def mask_poses(self) -> List[PoseSE3]:
        """Target observation pose first, then the support ring."""
        return [self.target_view.pose] + [m.pose for m in self.template_views]


# ── Shapes ──────────────────────────────────────────────────────────

def fibonacci_sphere(n: int) -> np.ndarray:
    """n near-uniform unit directions (golden-angle spiral)."""
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - 2.0 * (i + 0.5) / n
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _signed_pow(w: np.ndarray, e: float) -> np.ndarray:
    return np.sign(w) * np.abs(w) ** e


def superquadric(directions: np.ndarray, scales, exponents) -> np.ndarray:
    """
    Superquadric surface points at the latitude/longitude of `directions`.

    Unit scales with exponents (1, 1) reproduce the directions (up to rounding).
    """
    sx, sy, sz = scales
    e1, e2 = exponents
    eta = np.arcsin(np.clip(directions[:, 2], -1.0, 1.0))
    omega = np.arctan2(directions[:, 1], directions[:, 0])
    ce = _signed_pow(np.cos(eta), e1)
    return np.stack([
        sx * ce * _signed_pow(np.cos(omega), e2),
        sy * ce * _signed_pow(np.sin(omega), e2),
        sz * _signed_pow(np.sin(eta), e1),
    ], axis=1)


def _draw_params(spec: SyntheticSpec, rng: np.random.Generator) -> dict:
    scales = rng.uniform(spec.scale_min, spec.scale_max, size=3).tolist()
    exponents = rng.uniform(spec.exponent_min, spec.exponent_max, size=2).tolist()
    if spec.fixed_scales is not None:
        scales = list(spec.fixed_scales)
    if spec.fixed_exponents is not None:
        exponents = list(spec.fixed_exponents)
    return {"scales": scales, "exponents": exponents}


def make_cloud(n: int, params: dict, cloud_id: str) -> PointCloud:
    """Normalized superquadric cloud, rounded through float32 so it round-trips PCF1."""
    raw = PointCloud(superquadric(fibonacci_sphere(n), params["scales"], params["exponents"]), id=cloud_id)
    normalized, _, _ = normalize_to_unit_cube(raw)
    return normalized.with_points(normalized.points.astype(np.float32).astype(np.float64))


def render_gt_masks(target: PointCloud, poses: List[PoseSE3], intr, sigma_px: float) -> List[SilhouetteMask]:
    return [render_silhouette(target, pose, intr, sigma_px) for pose in poses]


# ── Generation ──────────────────────────────────────────────────────

def _make_pair(spec: SyntheticSpec, index: int, seq: np.random.SeedSequence, sigma_px: float) -> SyntheticPair:
    rng = np.random.default_rng(seq)
    pair_id = f"pair_{index:04d}"
    target_params = _draw_params(spec, rng)
    template_params = _draw_params(spec.model_copy(update={"fixed_scales": None, "fixed_exponents": None}), rng) \
        if spec.randomize_template else dict(SPHERE_PARAMS)
    target_pose = random_hemisphere_pose(rng, spec.camera_radius)

    template = make_cloud(spec.n_points, template_params, f"{pair_id}_template")
    target = make_cloud(spec.n_points, target_params, f"{pair_id}_target")

    intr = _intrinsics(spec)
    ring = hemisphere_ring_poses(spec.n_views, spec.ring_elevation_deg, spec.camera_radius)
    views = [synthetic_feature_map(template, pose, intr, spec.feature_dim, spec.feature_seed, spec.patch_size) for pose in ring]
    target_view = synthetic_feature_map(target, target_pose, intr, spec.feature_dim, spec.feature_seed, spec.patch_size)

    pair = SyntheticPair(
        pair_id=pair_id,
        template=template,
        target=target,
        template_views=views,
        target_view=target_view,
        params={"template": template_params, "target": target_params, "sigma_px": sigma_px},
    )
    pair.gt_masks = render_gt_masks(target, pair.mask_poses, intr, sigma_px)
    return pair


def _intrinsics(spec: SyntheticSpec) -> CameraIntrinsics:
    return CameraIntrinsics.centered(spec.image_size, spec.focal)


def generate_synthetic_pairs(
    spec: Union[SyntheticSpec, dict],
    seed: int,
    sigma_px: float = 1.5,
    workers: int = None,
) -> List[SyntheticPair]:
    """
    Deterministic list of `spec.count` pairs for `seed`.

    Each pair draws from its own spawned seed sequence, so the result does
    not depend on the worker count.
    """
    spec = validated(SyntheticSpec, spec)
    children = np.random.SeedSequence(seed).spawn(spec.count)
    workers = workers or settings.NUM_WORKERS
    logger.info(f"Generating {spec.count} {spec.family} pairs (seed={seed}, N={spec.n_points}, K={spec.n_views})")
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        pairs = list(pool.map(lambda i: _make_pair(spec, i, children[i], sigma_px), range(spec.count)))
    return pairs
