"""
Gradient Check
==============
Compares autograd gradients of the total loss with central finite
differences, block by block, on a float64 copy of the model.

Relative error of a block: max|a − n| / max(max|a|, max|n|, 1e-12).
"""

from typing import Optional, Sequence, Union

import numpy as np
import torch

from ..models.config import LossWeights, SyntheticSpec, TrainConfig, validated
from ..models.results import BlockReport, GradCheckReport
from ..utils import logger
from .attention import randomize_parameters_
from .dataset import to_prepared
from .network import PARAMETER_BLOCKS, DeformationModel, PreparedPair, pair_loss
from .synthetic import generate_synthetic_pairs

FD_STEP = 1e-5
CHECK_TIME = 0.37


def tiny_config(**overrides) -> TrainConfig:
    """Smallest sensible instance: N = 6, widths 8, two views on a 16 x 16 image."""
    values = dict(
        n_points=6, max_visible=4, n_views=2, feature_dim=8,
        geo_dim=8, geo_layers=3, attn_width=8, heads=2, refine_depth=1,
        velocity_width=8, velocity_depth=1, time_embed_dim=4,
        knn_k=3, splat_radius_px=1, image_size=16, focal=16.0, patch_size=4,
        batch_size=1, epochs=1,
    )
    values.update(overrides)
    return validated(TrainConfig, values)


def tiny_pair(config: TrainConfig, seed: int = 0) -> PreparedPair:
    """One synthetic pair shaped for `config`."""
    spec = SyntheticSpec.for_config(config, count=1)
    pair = generate_synthetic_pairs(spec, seed, sigma_px=config.sigma_px, workers=1)[0]
    return to_prepared(pair, config)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    if analytic.size == 0:
        return 0.0
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-12)
    return float(np.abs(analytic - numeric).max() / scale)


def _element_indices(size: int, limit: Optional[int]) -> np.ndarray:
    if limit is None or size <= limit:
        return np.arange(size)
    return np.unique(np.linspace(0, size - 1, limit).round().astype(np.int64))


def gradient_check(
    config: Union[TrainConfig, dict],
    pair: Optional[PreparedPair] = None,
    tolerance: float = 1e-4,
    weights: Optional[LossWeights] = None,
    blocks: Sequence[str] = PARAMETER_BLOCKS,
    step: float = FD_STEP,
    t: float = CHECK_TIME,
    seed: int = 0,
    max_elements: Optional[int] = None,
    corrupt: Optional[str] = None,
) -> GradCheckReport:
    """
    Check every parameter block of a randomly initialised float64 model.

    `max_elements` samples that many evenly spaced entries per block
    (all by default). `corrupt` perturbs the analytic gradient of one
    block, for exercising the failure path.
    """
    config = validated(TrainConfig, config)
    weights = weights or config.weights
    pair = pair or tiny_pair(config, seed)

    torch.manual_seed(seed)
    model = DeformationModel(config).to(torch.float64)
    randomize_parameters_(model, torch.Generator().manual_seed(seed))

    def loss() -> torch.Tensor:
        return pair_loss(model, pair, t, weights, config.sigma_px)[0]

    model.zero_grad(set_to_none=True)
    loss().backward()

    report = GradCheckReport(tolerance=tolerance)
    grouped = model.parameter_blocks()
    for name in blocks:
        analytic, numeric = [], []
        for _, p in grouped[name]:
            flat = p.data.view(-1)
            grad = p.grad.detach().reshape(-1) if p.grad is not None else torch.zeros_like(flat)
            idx = _element_indices(flat.numel(), max_elements)
            fd = np.empty(idx.size)
            with torch.no_grad():
                for j, i in enumerate(idx):
                    orig = flat[i].item()
                    flat[i] = orig + step
                    f_plus = loss().item()
                    flat[i] = orig - step
                    f_minus = loss().item()
                    flat[i] = orig
                    fd[j] = (f_plus - f_minus) / (2.0 * step)
            analytic.append(grad.numpy()[idx])
            numeric.append(fd)

        a = np.concatenate(analytic) if analytic else np.zeros(0)
        n = np.concatenate(numeric) if numeric else np.zeros(0)
        if corrupt == name and a.size:
            a = a.copy()
            a[0] += 0.1 * max(np.abs(a).max(), 1e-3)
        err = relative_error(a, n)
        block = BlockReport(name=name, n_params=int(a.size), max_rel_error=err, passed=err <= tolerance)
        report.blocks.append(block)
        level = "INFO" if block.passed else "WARNING"
        logger.log(level, f"gradcheck {name}: {block.n_params} entries, max rel error {err:.3e}")

    return report
