"""
Attention primitives and target alignment.

MultiHeadAttention projects queries and keys/values into a shared working
width, attends per head and maps back to the query dimension so every use
can be residual. Output projections start at zero: a freshly built block is
the identity.
"""

import math
from typing import Sequence

import torch
import torch.nn as nn

from core.errors import ConfigError, DimensionError, EmptyTarget

from .features import PatchFeatureMap, pooled_features


class MultiHeadAttention(nn.Module):
    """softmax((Q Wq)(K Wk)ᵀ / √(width/h)) (V Wv), heads concatenated, then W_O."""

    def __init__(self, query_dim: int, kv_dim: int, width: int, heads: int, zero_init_output: bool = True):
        super().__init__()
        if width % heads:
            raise DimensionError(f"Attention width {width} not divisible by {heads} heads")
        self.query_dim = query_dim
        self.kv_dim = kv_dim
        self.width = width
        self.heads = heads
        self.w_q = nn.Linear(query_dim, width, bias=False)
        self.w_k = nn.Linear(kv_dim, width, bias=False)
        self.w_v = nn.Linear(kv_dim, width, bias=False)
        self.w_o = nn.Linear(width, query_dim, bias=False)
        if zero_init_output:
            nn.init.zeros_(self.w_o.weight)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        # (n, width) -> (heads, n, head_dim)
        return x.reshape(x.shape[0], self.heads, -1).transpose(0, 1)

    def attend(self, q_in: torch.Tensor, kv_in: torch.Tensor) -> torch.Tensor:
        """Concatenated head outputs before W_O, shape (n_q, width)."""
        if q_in.ndim != 2 or q_in.shape[1] != self.query_dim:
            raise DimensionError(f"Queries must be n x {self.query_dim}, got {tuple(q_in.shape)}")
        if kv_in.ndim != 2 or kv_in.shape[1] != self.kv_dim:
            raise DimensionError(f"Keys/values must be n x {self.kv_dim}, got {tuple(kv_in.shape)}")
        if kv_in.shape[0] < 1:
            raise DimensionError("Attention needs at least one key")

        q = self._split(self.w_q(q_in))
        k = self._split(self.w_k(kv_in))
        v = self._split(self.w_v(kv_in))
        logits = q @ k.transpose(1, 2) / math.sqrt(self.width // self.heads)
        out = torch.softmax(logits, dim=-1) @ v
        return out.transpose(0, 1).reshape(q_in.shape[0], self.width)

    def forward(self, q_in: torch.Tensor, kv_in: torch.Tensor) -> torch.Tensor:
        return self.w_o(self.attend(q_in, kv_in))


class SelfAttentionBlock(nn.Module):
    """Pre-layer-norm residual block: x + Attn(LN(x)), then x + MLP(LN(x))."""

    def __init__(self, dim: int, width: int, heads: int, mlp_ratio: int = 2):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, dim, width, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, mlp_ratio * width),
            nn.GELU(),
            nn.Linear(mlp_ratio * width, dim),
        )
        nn.init.zeros_(self.mlp[2].weight)
        nn.init.zeros_(self.mlp[2].bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.norm1(x)
        x = x + self.attn(h, h)
        return x + self.mlp(self.norm2(x))


class TargetFiLM(nn.Module):
    """
    Relation-free alignment: the pooled target feature g is broadcast to
    every template row as feats·(1 + γ) + β, with [γ ‖ β] = W g + b.

    W and b start at zero, so a fresh block is the identity.
    """

    def __init__(self, dim: int, target_dim: int):
        super().__init__()
        self.dim = dim
        self.linear = nn.Linear(target_dim, 2 * dim)
        nn.init.zeros_(self.linear.weight)
        nn.init.zeros_(self.linear.bias)

    def forward(self, feats: torch.Tensor, pooled: torch.Tensor) -> torch.Tensor:
        if feats.ndim != 2 or feats.shape[1] != self.dim:
            raise DimensionError(f"Template features must be n x {self.dim}, got {tuple(feats.shape)}")
        if pooled.shape != (self.linear.in_features,):
            raise DimensionError(f"Pooled target must have {self.linear.in_features} entries, got {tuple(pooled.shape)}")
        gamma, beta = self.linear(pooled).chunk(2, dim=-1)
        return feats * (1.0 + gamma) + beta


# ── Operations ──────────────────────────────────────────────────────

def attention(q_in: torch.Tensor, kv_in: torch.Tensor, params: MultiHeadAttention) -> torch.Tensor:
    """Multi-head cross-attention of `q_in` over `kv_in`."""
    return params(q_in, kv_in)


def target_tokens(target_map: PatchFeatureMap, like: torch.Tensor) -> torch.Tensor:
    """Flattened target grid as (H_p·W_p) x D tokens matching `like`'s dtype/device."""
    return torch.as_tensor(target_map.flattened(), dtype=like.dtype, device=like.device)


def align_to_target(template_feats: torch.Tensor, target_map: PatchFeatureMap, params: MultiHeadAttention) -> torch.Tensor:
    """Template rows attend over the flattened target patches, plus a residual."""
    hp, wp = target_map.grid_shape
    if hp * wp == 0:
        raise EmptyTarget("Target feature grid has no patches")
    kv = target_tokens(target_map, template_feats)
    return template_feats + params(template_feats, kv)


def film_to_target(template_feats: torch.Tensor, target_map: PatchFeatureMap, params: TargetFiLM) -> torch.Tensor:
    """Modulate every template row by the pooled target feature (no per-patch relation)."""
    hp, wp = target_map.grid_shape
    if hp * wp == 0:
        raise EmptyTarget("Target feature grid has no patches")
    pooled = torch.as_tensor(pooled_features(target_map), dtype=template_feats.dtype, device=template_feats.device)
    return params(template_feats, pooled)


def refine_self_attention(feats: torch.Tensor, blocks: Sequence[SelfAttentionBlock]) -> torch.Tensor:
    """Run the refinement stack; the result is the conditioning context c."""
    if len(blocks) == 0:
        raise ConfigError("Self-attention refinement needs at least one block")
    for block in blocks:
        feats = block(feats)
    return feats


def randomize_parameters_(module: nn.Module, generator: torch.Generator, scale: float = 0.3) -> nn.Module:
    """Overwrite every parameter with seeded N(0, scale²) noise (LayerNorm gains around 1)."""
    with torch.no_grad():
        for name, p in module.named_parameters():
            noise = torch.randn(p.shape, generator=generator, dtype=torch.float64).to(p.dtype)
            if "norm" in name and name.endswith("weight"):
                p.copy_(1.0 + 0.1 * noise)
            else:
                p.copy_(scale * noise)
    return module

