"""
Inference from files: template cloud + template view feature maps + target
observation feature map → deformed cloud and deformation field (both PCF1).
"""

import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import torch

from core.formats import read_pcf, write_pcf
from core.geometry import PointCloud

from ..utils import logger
from .checkpoint import Checkpoint, build_model, load_checkpoint
from .features import PatchFeatureMap, load_feature_map
from .network import DeformationModel, check_compatible, field_to_numpy, prepare_pair


@dataclass
class InferenceResult:
    deformed: PointCloud
    field: np.ndarray       # N x 3, float32 values

    def reconstruct(self, template: PointCloud) -> np.ndarray:
        return (template.points.astype(np.float32) + self.field.astype(np.float32)).astype(np.float64)


def field_path_for(out_path) -> Path:
    path = Path(out_path)
    return path.with_name(f"{path.stem}_field{path.suffix or '.pcf'}")


def deform_template(
    model: DeformationModel,
    template: PointCloud,
    view_maps: Sequence[PatchFeatureMap],
    target_map: PatchFeatureMap,
) -> InferenceResult:
    """Single-step deformation; point order follows the template."""
    pair = prepare_pair(template, view_maps, target_map, model.config, pair_id=template.id)
    check_compatible(model.config, pair, check_points=False)
    model.eval()
    with torch.no_grad():
        field_t, _ = model.deform(pair)
    field = field_to_numpy(field_t).astype(np.float32)
    deformed = template.points.astype(np.float32) + field
    return InferenceResult(
        deformed=PointCloud(deformed.astype(np.float64), id=f"{template.id}_deformed"),
        field=field,
    )


def infer(
    checkpoint: Union[Checkpoint, str, Path],
    template_path,
    view_paths: Sequence,
    target_feat_path,
    out_path,
    field_out: Optional[Union[str, Path]] = None,
) -> InferenceResult:
    """Run the model on files and write `out_path` plus the field file."""
    started = time.perf_counter()
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    model = build_model(ckpt)
    template = read_pcf(template_path)
    views = [load_feature_map(p) for p in view_paths]
    target_map = load_feature_map(target_feat_path)

    result = deform_template(model, template, views, target_map)
    field_out = Path(field_out) if field_out else field_path_for(out_path)
    write_pcf(result.deformed, out_path)
    write_pcf(result.field.astype(np.float64), field_out)
    logger.info(
        f"Deformed {len(template)} points with {len(views)} views in "
        f"{time.perf_counter() - started:.2f}s → {out_path} (field → {field_out})"
    )
    return result
