"""
Evaluation
==========
Single-step deformation of every pair, scored with Chamfer distance, EMD and
silhouette IoU at the target's observation pose.

Table format (tab separated):

    # pair_id  cd  emd  siou
    pair_0000  ...
    # mean     ...
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np
import pandas as pd
import torch

from core.errors import FormatError
from core.geometry import PointCloud

from ..models.results import EvaluationRow
from ..utils import logger, settings
from .checkpoint import Checkpoint, build_model
from .dataset import as_prepared
from .metrics import emd, metric_cd, metric_siou
from .network import DeformationModel, PreparedPair, check_compatible, field_to_numpy
from .renderer import render_silhouette
from .synthetic import SyntheticPair

COLUMNS = ["pair_id", "cd", "emd", "siou"]
METRICS = COLUMNS[1:]


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


@dataclass
class EvaluationTable:
    rows: List[EvaluationRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def mean(self) -> Dict[str, float]:
        if not self.rows:
            return {m: float("nan") for m in METRICS}
        return {m: float(np.mean([getattr(r, m) for r in self.rows])) for m in METRICS}

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.model_dump() for r in self.rows], columns=COLUMNS + ["emd_approximate"])

    def to_text(self) -> str:
        lines = ["# " + "\t".join(COLUMNS)]
        for r in self.rows:
            lines.append("\t".join([r.pair_id, _fmt(r.cd), _fmt(r.emd), _fmt(r.siou)]))
        mean = self.mean()
        lines.append("\t".join(["# mean"] + [_fmt(mean[m]) for m in METRICS]))
        return "\n".join(lines) + "\n"

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_text(), encoding="utf-8")
        return path


def read_table(path) -> tuple[pd.DataFrame, Dict[str, float]]:
    """Rows as a DataFrame plus the trailing `# mean` record."""
    path = Path(path)
    try:
        rows = pd.read_csv(path, sep="\t", comment="#", header=None, names=COLUMNS, dtype={"pair_id": str})
    except (OSError, pd.errors.ParserError) as e:
        raise FormatError(f"Cannot read evaluation table {path}: {e}") from e
    except pd.errors.EmptyDataError:
        rows = pd.DataFrame(columns=COLUMNS)
    mean = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.startswith("# mean"):
            mean = dict(zip(METRICS, map(float, line.split("\t")[1:])))
    return rows, mean


# =============================================================================
# EVALUATE
# =============================================================================

def score_pair(model: DeformationModel, pair: PreparedPair) -> EvaluationRow:
    config = model.config
    with torch.no_grad():
        field_t, _ = model.deform(pair)
    deformed = PointCloud(pair.template.points + field_to_numpy(field_t), id=f"{pair.pair_id}_deformed")
    target = pair.target
    target_pose, intr = pair.target_map.pose, pair.target_map.intr
    gt_mask = pair.gt_masks[0][0] if pair.gt_masks else render_silhouette(target, target_pose, intr, config.sigma_px)
    pred_mask = render_silhouette(deformed, target_pose, intr, config.sigma_px)
    e = emd(deformed, target, exact_max=config.emd_exact_max)
    return EvaluationRow(
        pair_id=pair.pair_id,
        cd=metric_cd(deformed, target),
        emd=e.value,
        siou=metric_siou(pred_mask, gt_mask, config.siou_threshold),
        emd_approximate=e.approximate,
    )


def evaluate(
    model: Union[Checkpoint, DeformationModel],
    dataset: Sequence[Union[SyntheticPair, PreparedPair]],
    workers: int = None,
) -> EvaluationTable:
    """Score every pair; rows keep dataset order."""
    if isinstance(model, Checkpoint):
        model = build_model(model)
    model.eval()
    config = model.config
    pairs = as_prepared(dataset, config)
    for p in pairs:
        check_compatible(config, p)
        if p.target is None:
            raise FormatError(f"Pair '{p.pair_id}' has no target cloud to evaluate against")

    with ThreadPoolExecutor(max_workers=max(1, workers or settings.NUM_WORKERS)) as pool:
        rows = list(pool.map(lambda p: score_pair(model, p), pairs))

    table = EvaluationTable(rows)
    mean = table.mean()
    logger.info(
        f"Evaluated {len(rows)} pairs: CD={mean['cd']:.4e} EMD={mean['emd']:.4e} S-IoU={mean['siou']:.4f}"
    )
    return table
