"""
Flow Matching
=============
Linear interpolation path between corresponded clouds, its constant target
velocity, the per-point velocity network v(x_t, t, c) and the inference
paths: a single step at t = 0 or explicit Euler integration.
"""

from typing import Union

import numpy as np
import torch
import torch.nn as nn

from core.errors import CorrespondenceError, DimensionError, InvalidSteps, InvalidTime
from core.geometry import PointCloud

from .attention import SelfAttentionBlock
from .propagation import POSENC_OCTAVES, points_tensor, positional_encoding, posenc_dim

CloudArg = Union[PointCloud, np.ndarray, torch.Tensor]


def _check_time(t: float) -> float:
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise InvalidTime(f"t must lie in [0, 1], got {t}")
    return t


def _check_aligned(a, b) -> None:
    if a.shape[0] != b.shape[0]:
        raise CorrespondenceError(f"Clouds are not index-aligned: {a.shape[0]} vs {b.shape[0]} points")


def _np(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        return x.detach().cpu().numpy().astype(np.float64)
    return x.points if isinstance(x, PointCloud) else np.asarray(x, dtype=np.float64)


def time_embedding(t: float, dim: int = 16, like: torch.Tensor = None) -> torch.Tensor:
    """Sinusoidal features of t at dim/2 log-spaced frequencies in [1, 100]."""
    half = dim // 2
    dtype = like.dtype if like is not None else torch.float64
    device = like.device if like is not None else None
    freqs = torch.logspace(0.0, 2.0, half, dtype=dtype, device=device)
    arg = float(t) * freqs
    return torch.cat([torch.sin(arg), torch.cos(arg)])


# ── Path ────────────────────────────────────────────────────────────

def interpolate_path(x0: CloudArg, x1: CloudArg, t: float):
    """x_t = (1 − t)·x0 + t·x1 (PointCloud in, PointCloud out)."""
    t = _check_time(t)
    if isinstance(x0, PointCloud):
        p0, p1 = x0.points, _np(x1)
        _check_aligned(p0, p1)
        return x0.with_points((1.0 - t) * p0 + t * p1)
    a, b = points_tensor(x0), points_tensor(x1, points_tensor(x0))
    _check_aligned(a, b)
    return (1.0 - t) * a + t * b


def target_velocity(x0: CloudArg, x1: CloudArg):
    """u = x1 − x0 per point."""
    if isinstance(x0, PointCloud) or isinstance(x0, np.ndarray):
        a, b = _np(x0), _np(x1)
        _check_aligned(a, b)
        return b - a
    a, b = points_tensor(x0), points_tensor(x1, points_tensor(x0))
    _check_aligned(a, b)
    return b - a


# ── Network ─────────────────────────────────────────────────────────

class VelocityNet(nn.Module):
    """
    Input projection of [posenc(x_t) ‖ c ‖ time embedding], residual
    self-attention blocks over the N points and a zero-initialised linear head.
    """

    def __init__(self, cond_dim: int, width: int, heads: int, depth: int = 2, time_dim: int = 16):
        super().__init__()
        self.cond_dim = cond_dim
        self.time_dim = time_dim
        self.input = nn.Linear(posenc_dim(POSENC_OCTAVES) + cond_dim + time_dim, width)
        self.blocks = nn.ModuleList(SelfAttentionBlock(width, width, heads) for _ in range(depth))
        self.norm = nn.LayerNorm(width)
        self.head = nn.Linear(width, 3)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, x: torch.Tensor, t: float, c: torch.Tensor) -> torch.Tensor:
        n = x.shape[0]
        temb = time_embedding(t, self.time_dim, like=x).expand(n, -1)
        h = self.input(torch.cat([positional_encoding(x, POSENC_OCTAVES), c, temb], dim=-1))
        for block in self.blocks:
            h = block(h)
        return self.head(self.norm(h))


# ── Operations ──────────────────────────────────────────────────────

def velocity_forward(x_t: CloudArg, t: float, c: torch.Tensor, params: VelocityNet) -> torch.Tensor:
    """v(x_t, t, c), an N x 3 field."""
    t = _check_time(t)
    x = points_tensor(x_t, params.head.weight)
    if x.ndim != 2 or x.shape[1] != 3:
        raise DimensionError(f"Expected N x 3 points, got {tuple(x.shape)}")
    if c.ndim != 2 or c.shape[0] != x.shape[0] or c.shape[1] != params.cond_dim:
        raise DimensionError(
            f"Conditioning must be {x.shape[0]} x {params.cond_dim}, got {tuple(c.shape)}"
        )
    return params(x, t, c)


def single_step_deform(template: CloudArg, c: torch.Tensor, params: VelocityNet) -> tuple[torch.Tensor, torch.Tensor]:
    """D = v(S, 0, c); T̂ = S + D."""
    s = points_tensor(template, params.head.weight)
    field = velocity_forward(s, 0.0, c, params)
    return field, s + field


def integrate_ode(template: CloudArg, c: torch.Tensor, params: VelocityNet, steps: int) -> torch.Tensor:
    """Explicit Euler with `steps` uniform steps from t = 0 to 1."""
    if int(steps) < 1:
        raise InvalidSteps(f"steps must be >= 1, got {steps}")
    steps = int(steps)
    x = points_tensor(template, params.head.weight)
    dt = 1.0 / steps
    for k in range(steps):
        x = x + dt * velocity_forward(x, k / steps, c, params)
    return x


def fm_loss(params: VelocityNet, x0: CloudArg, x1: CloudArg, c: torch.Tensor, t_sample: float) -> torch.Tensor:
    """Mean over points of ‖v(x_t, t, c) − (x1 − x0)‖²."""
    like = params.head.weight
    a, b = points_tensor(x0, like), points_tensor(x1, like)
    _check_aligned(a, b)
    x_t = interpolate_path(a, b, t_sample)
    residual = velocity_forward(x_t, t_sample, c, params) - (b - a)
    return residual.pow(2).sum(dim=1).mean()

