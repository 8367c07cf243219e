"""Self-attention variants over a ``[Color, ReID, spatial...]`` token layout.

Token batches are tensors of shape ``(B, T, d)``. When ``has_color`` is true,
row 0 is the Color token and row 1 the ReID token; otherwise row 0 is the
ReID token and there is no Color row. Every mask is built from indices.
"""

from __future__ import annotations

import math
from enum import Enum

import torch
import torch.nn.functional as F
from torch import Tensor, nn

CO, ID = 0, 1


class AttentionVariant(str, Enum):
    TRADITIONAL = "traditional"
    MASKED = "masked"
    S2A = "s2a"


def attention_weights(scores: Tensor, mask: Tensor | None = None, scale: float = 1.0) -> Tensor:
    """Row-wise softmax of ``scale * scores``.

    ``mask`` is boolean with True marking blocked entries; those get ``-inf``
    before the softmax and are exactly zero afterwards.
    """
    scores = scores * scale
    if mask is not None:
        if mask.shape[-2:] != scores.shape[-2:]:
            raise ValueError("mask shape does not match scores")
        if bool(mask.all(dim=-1).any()):
            raise ValueError("empty attention row")
        scores = scores.masked_fill(mask, float("-inf"))
    return torch.softmax(scores, dim=-1)


def color_reid_mask(num_tokens: int, device=None) -> Tensor:
    """Blocks ReID->Color and Color->ReID, leaves everything else open."""
    mask = torch.zeros(num_tokens, num_tokens, dtype=torch.bool, device=device)
    mask[ID, CO] = True
    mask[CO, ID] = True
    return mask


class Block(nn.Module):
    """Pre-norm transformer block whose attention wiring is chosen per call."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float = 4.0, eps: float = 1e-6):
        super().__init__()
        if dim % heads:
            raise ValueError(f"heads ({heads}) must divide dim ({dim})")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.norm1 = nn.LayerNorm(dim, eps=eps)
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.proj = nn.Linear(dim, dim)
        self.norm2 = nn.LayerNorm(dim, eps=eps)
        hidden = int(dim * mlp_ratio)
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def _split(self, x: Tensor) -> Tensor:
        B, T, _ = x.shape
        return x.view(B, T, self.heads, self.head_dim).transpose(1, 2)

    def _merge(self, x: Tensor) -> Tensor:
        B, _, T, _ = x.shape
        return x.transpose(1, 2).reshape(B, T, self.dim)

    def qkv(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        return self._split(self.q(x)), self._split(self.k(x)), self._split(self.v(x))

    def context(self, q: Tensor, k: Tensor, v: Tensor, mask: Tensor | None = None) -> Tensor:
        """Multi-head ``softmax(QK^T / sqrt(d_head)) V`` before the output projection."""
        scores = q @ k.transpose(-2, -1)
        w = attention_weights(scores, mask, scale=1.0 / math.sqrt(self.head_dim))
        return self._merge(w @ v)

    def weights(self, x: Tensor, mask: Tensor | None = None) -> Tensor:
        q, k, _ = self.qkv(x)
        return attention_weights(q @ k.transpose(-2, -1), mask, scale=1.0 / math.sqrt(self.head_dim))

    def attend(self, x: Tensor, variant: AttentionVariant = AttentionVariant.TRADITIONAL,
               has_color: bool = True) -> Tensor:
        variant = AttentionVariant(variant)
        if not has_color or variant is AttentionVariant.TRADITIONAL:
            return traditional_attention(x, self)
        if variant is AttentionVariant.MASKED:
            return masked_attention(x, self)
        return s2a_attention(x, self)

    def mlp(self, x: Tensor) -> Tensor:
        return self.fc2(F.gelu(self.fc1(x)))

    def forward(self, x: Tensor, variant: AttentionVariant = AttentionVariant.TRADITIONAL,
                has_color: bool = True) -> Tensor:
        x = x + self.attend(self.norm1(x), variant, has_color)
        return x + self.mlp(self.norm2(x))


def traditional_attention(x: Tensor, block: Block) -> Tensor:
    q, k, v = block.qkv(x)
    return block.proj(block.context(q, k, v))


def masked_attention(x: Tensor, block: Block) -> Tensor:
    if x.shape[1] < 2:
        raise ValueError("masked attention needs Color and ReID rows")
    q, k, v = block.qkv(x)
    return block.proj(block.context(q, k, v, color_reid_mask(x.shape[1], x.device)))


def s2a_attention(x: Tensor, block: Block) -> Tensor:
    """Two attention passes: one without the Color row, one without the ReID row.

    The ReID row comes from the first pass, the Color row from the second and
    spatial rows are the mean of both. Averaging happens before the output
    projection.
    """
    T = x.shape[1]
    if T < 2:
        raise ValueError("S2A attention needs Color and ReID rows")
    q, k, v = block.qkv(x)
    no_co = torch.arange(1, T, device=x.device)
    no_id = torch.cat([torch.tensor([CO], device=x.device), torch.arange(2, T, device=x.device)])
    ctx_a = block.context(q[:, :, no_co], k[:, :, no_co], v[:, :, no_co])
    ctx_b = block.context(q[:, :, no_id], k[:, :, no_id], v[:, :, no_id])
    out = torch.cat([ctx_b[:, :1], ctx_a[:, :1], (ctx_a[:, 1:] + ctx_b[:, 1:]) / 2], dim=1)
    return block.proj(out)


def block_forward(x: Tensor, block: Block, variant: AttentionVariant = AttentionVariant.TRADITIONAL,
                  has_color: bool = True) -> Tensor:
    return block(x, variant, has_color)


def flop_model(variant: AttentionVariant, tokens: int, dim: int, heads: int, depth: int,
               mlp_ratio: float = 4.0) -> dict[str, int]:
    """Analytic multiply-accumulate count of the transformer blocks.

    One attention pass over ``n`` tokens costs ``3 n d^2`` for the Q/K/V
    projections plus ``2 n^2 d`` for scores and value mixing. Traditional and
    masked attention run one pass over all tokens; S2A runs two passes over
    ``tokens - 1`` tokens. The output projection and MLP are shared.
    """
    variant = AttentionVariant(variant)
    if min(tokens, dim, heads, depth) <= 0 or dim % heads:
        raise ValueError("dimensions must be positive and heads must divide dim")

    def one_pass(n: int) -> int:
        return 3 * n * dim * dim + 2 * n * n * dim

    if variant is AttentionVariant.S2A:
        attn = 2 * one_pass(tokens - 1)
    else:
        attn = one_pass(tokens)
    attn += tokens * dim * dim
    mlp = 2 * tokens * dim * int(dim * mlp_ratio)
    return {"attention": depth * attn, "mlp": depth * mlp, "total": depth * (attn + mlp)}
