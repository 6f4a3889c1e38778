"""
Evaluation metrics: averaged Chamfer distance, Earth Mover's distance over
bijections and silhouette IoU.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from core.errors import CardinalityError, DimensionError, EmptyCloud
from core.geometry import CloudLike, SilhouetteMask, as_points

from ..utils import logger

# Largest N solved with the exact assignment by default
EMD_EXACT_MAX = 512


@dataclass(frozen=True)
class EmdResult:
    value: float
    approximate: bool


def _nonempty(cloud: CloudLike) -> np.ndarray:
    pts = as_points(cloud).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise EmptyCloud("Metric needs non-empty clouds")
    return pts


def nearest_squared(a: np.ndarray, b: np.ndarray, chunk_size: int = 1024) -> np.ndarray:
    """For every row of `a`, squared distance to its nearest row of `b` (brute force)."""
    out = np.empty(a.shape[0])
    for start in range(0, a.shape[0], chunk_size):
        diff = a[start:start + chunk_size, None, :] - b[None, :, :]
        out[start:start + chunk_size] = np.min(np.sum(diff * diff, axis=-1), axis=1)
    return out


def metric_cd(pred: CloudLike, gt: CloudLike) -> float:
    """1/|P| Σ_p min_g ‖p − g‖² + 1/|G| Σ_g min_p ‖g − p‖²."""
    p, g = _nonempty(pred), _nonempty(gt)
    return float(nearest_squared(p, g).mean() + nearest_squared(g, p).mean())


def distance_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


# ── EMD ─────────────────────────────────────────────────────────────

def auction_assignment(cost: np.ndarray, eps_final: float) -> np.ndarray:
    """
    ε-scaling auction for a square min-cost assignment.

    Returns `assign` with person i matched to object assign[i]. The total
    cost is within N·eps_final of the optimum.
    """
    n = cost.shape[0]
    benefit = -cost
    prices = np.zeros(n)
    eps = max(float(cost.max() - cost.min()) / 4.0, eps_final)
    while True:
        assign = np.full(n, -1, dtype=np.int64)
        owner = np.full(n, -1, dtype=np.int64)
        while True:
            free = np.nonzero(assign < 0)[0]
            if free.size == 0:
                break
            values = benefit[free] - prices[None, :]
            best = np.argmax(values, axis=1)
            v1 = values[np.arange(free.size), best]
            if n > 1:
                values[np.arange(free.size), best] = -np.inf
                v2 = values.max(axis=1)
            else:
                v2 = v1
            bids = prices[best] + (v1 - v2) + eps

            # per object: highest bid wins, lower person index on ties
            order = np.lexsort((free, -bids, best))
            objs = best[order]
            first = np.r_[True, objs[1:] != objs[:-1]]
            win_obj = objs[first]
            win_person = free[order][first]
            prev = owner[win_obj]
            assign[prev[prev >= 0]] = -1
            owner[win_obj] = win_person
            assign[win_person] = win_obj
            prices[win_obj] = bids[order][first]
        if eps <= eps_final:
            return assign
        eps = max(eps / 5.0, eps_final)


def emd(
    pred: CloudLike,
    gt: CloudLike,
    exact_max: int = EMD_EXACT_MAX,
    approximate: bool = None,
    rel_gap: float = 0.01,
) -> EmdResult:
    """
    Mean unsquared distance under the optimal bijection.

    N <= exact_max uses the exact assignment (scipy); larger sets, or
    approximate=True, use the auction solver whose result is >= exact and
    within `rel_gap` of it.
    """
    p, g = _nonempty(pred), _nonempty(gt)
    if p.shape[0] != g.shape[0]:
        raise CardinalityError(f"EMD needs equal cardinalities, got {p.shape[0]} and {g.shape[0]}")
    n = p.shape[0]
    cost = distance_matrix(p, g)
    use_approx = (n > exact_max) if approximate is None else approximate

    if not use_approx:
        rows, cols = linear_sum_assignment(cost)
        return EmdResult(float(cost[rows, cols].mean()), approximate=False)

    if approximate is None:
        logger.warning(f"EMD on {n} points exceeds exact limit {exact_max}; using approximate solver")
    # one-sided nearest distance is a lower bound on the exact mean
    lower = max(cost.min(axis=1).mean(), cost.min(axis=0).mean())
    eps_final = rel_gap * lower if lower > 0 else 1e-12 * max(float(cost.max()), 1.0)
    assign = auction_assignment(cost, eps_final)
    return EmdResult(float(cost[np.arange(n), assign].mean()), approximate=True)


def metric_emd(pred: CloudLike, gt: CloudLike, **kwargs) -> float:
    return emd(pred, gt, **kwargs).value


# ── Silhouette IoU ──────────────────────────────────────────────────

def metric_siou(pred_mask, gt_mask, threshold: float = 0.5) -> float:
    """IoU of masks binarised at >= threshold; two empty masks score 1."""
    a = pred_mask.values if isinstance(pred_mask, SilhouetteMask) else np.asarray(pred_mask)
    b = gt_mask.values if isinstance(gt_mask, SilhouetteMask) else np.asarray(gt_mask)
    if a.shape != b.shape:
        raise DimensionError(f"Mask shapes differ: {a.shape} vs {b.shape}")
    ba, bb = a >= threshold, b >= threshold
    union = np.logical_or(ba, bb).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(ba, bb).sum() / union)
