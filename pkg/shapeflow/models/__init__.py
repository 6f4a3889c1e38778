"""
Pydantic schemas for experiment configuration and results.
"""

from .config import LossWeights, ShapeFamily, SyntheticSpec, TrainConfig, Variant, validated
from .results import LOSS_TERMS, BlockReport, EvaluationRow, GradCheckReport, LossBreakdown

__all__ = [
    "LossWeights", "ShapeFamily", "SyntheticSpec", "TrainConfig", "Variant", "validated",
    "LOSS_TERMS", "BlockReport", "EvaluationRow", "GradCheckReport", "LossBreakdown",
]
