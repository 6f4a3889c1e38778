"""
Result schemas: loss breakdowns, evaluation rows and gradient-check reports.
"""

from typing import List

from pydantic import BaseModel, Field

from .config import LossWeights

LOSS_TERMS = ("fm", "cd", "lap", "arap", "reg", "sil")


class LossBreakdown(BaseModel):
    """The six objective terms of one pair (or a mean over pairs) and their weighted total."""
    fm: float = 0.0
    cd: float = 0.0
    lap: float = 0.0
    arap: float = 0.0
    reg: float = 0.0
    sil: float = 0.0
    total: float = 0.0

    @classmethod
    def from_terms(cls, terms: dict, weights: LossWeights) -> "LossBreakdown":
        values = {name: float(terms.get(name, 0.0)) for name in LOSS_TERMS}
        total = sum(getattr(weights, name) * values[name] for name in LOSS_TERMS)
        return cls(total=total, **values)

    @classmethod
    def mean(cls, items: List["LossBreakdown"]) -> "LossBreakdown":
        if not items:
            return cls()
        fields = LOSS_TERMS + ("total",)
        return cls(**{f: sum(getattr(b, f) for b in items) / len(items) for f in fields})

    def summary(self) -> str:
        parts = " ".join(f"{name}={getattr(self, name):.4g}" for name in LOSS_TERMS)
        return f"total={self.total:.6g} | {parts}"


class EvaluationRow(BaseModel):
    pair_id: str
    cd: float
    emd: float
    siou: float
    emd_approximate: bool = False


class BlockReport(BaseModel):
    """Finite-difference agreement for one named parameter block."""
    name: str
    n_params: int
    max_rel_error: float
    passed: bool


class GradCheckReport(BaseModel):
    tolerance: float
    blocks: List[BlockReport] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(b.passed for b in self.blocks)

    @property
    def failed_blocks(self) -> List[str]:
        return [b.name for b in self.blocks if not b.passed]

    def block(self, name: str) -> BlockReport:
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(name)
