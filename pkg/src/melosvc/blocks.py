"""Feed-forward Transformer blocks shared by the extractor and the
synthesis models.

Each block is self-attention followed by a two-layer 1-D convolutional
feed-forward, both with residual connections and post-layer-norm.
Batches are equal-length crops, so no padding mask is threaded through.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .errors import ParameterError


def sinusoidal_positions(length: int, dim: int, device=None, dtype=None) -> torch.Tensor:
    """Fixed sinusoidal position encodings, shape ``(length, dim)``."""
    if dim % 2 != 0:
        raise ParameterError(f"position encoding dim must be even, got {dim}")
    dtype = dtype or torch.get_default_dtype()
    pos = torch.arange(length, device=device, dtype=dtype)[:, None]
    idx = torch.arange(dim // 2, device=device, dtype=dtype)[None, :]
    angle = pos / torch.pow(torch.tensor(10000.0, device=device, dtype=dtype), 2.0 * idx / dim)
    enc = torch.zeros(length, dim, device=device, dtype=dtype)
    enc[:, 0::2] = torch.sin(angle)
    enc[:, 1::2] = torch.cos(angle)
    return enc


class SelfAttention(nn.Module):
    """Multi-head scaled dot-product self-attention over (B, T, D)."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads != 0:
            raise ParameterError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = dim // heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, d = x.shape
        qkv = self.qkv(x).reshape(b, t, 3, self.heads, self.head_dim)
        q, k, v = (qkv[:, :, i].transpose(1, 2) for i in range(3))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        ctx = torch.softmax(scores, dim=-1) @ v
        return self.out(ctx.transpose(1, 2).reshape(b, t, d))


class ConvFeedForward(nn.Module):
    """Position-wise feed-forward realized as two 1-D convolutions."""

    def __init__(self, dim: int, ff_dim: int, kernel: int):
        super().__init__()
        self.conv1 = nn.Conv1d(dim, ff_dim, kernel, padding=kernel // 2)
        self.conv2 = nn.Conv1d(ff_dim, dim, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = x.transpose(1, 2)
        y = self.conv2(torch.relu(self.conv1(y)))
        return y.transpose(1, 2)


class FFTBlock(nn.Module):
    """One feed-forward Transformer block with post-layer-norm."""

    def __init__(self, dim: int, heads: int = 2, kernel: int = 9, ff_dim: int = 512, dropout: float = 0.1):
        super().__init__()
        self.attention = SelfAttention(dim, heads)
        self.feed_forward = ConvFeedForward(dim, ff_dim, kernel)
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.norm1(x + self.dropout(self.attention(x)))
        return self.norm2(x + self.dropout(self.feed_forward(x)))


class FFTStack(nn.Module):
    """A stack of FFT blocks with sinusoidal positions added at entry."""

    def __init__(
        self,
        num_blocks: int,
        dim: int,
        heads: int = 2,
        kernel: int = 9,
        ff_dim: int = 512,
        dropout: float = 0.1,
    ):
        super().__init__()
        self.dim = dim
        self.blocks = nn.ModuleList(
            FFTBlock(dim, heads, kernel, ff_dim, dropout) for _ in range(num_blocks)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + sinusoidal_positions(x.shape[1], self.dim, x.device, x.dtype)[None]
        for block in self.blocks:
            x = block(x)
        return x
