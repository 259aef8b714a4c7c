"""Shared attention building blocks for the matcher heads."""

import torch
from torch import nn
from torch.nn.functional import scaled_dot_product_attention


class Attention(nn.Module):
    """Multi-head attention with separate source/target inputs; the output
    projection is the residual branch (zero-initializable for untrained
    smoke checkpoints)."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        assert dim % heads == 0
        self.heads = heads
        self.to_q = nn.Linear(dim, dim)
        self.to_k = nn.Linear(dim, dim)
        self.to_v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor, source: torch.Tensor) -> torch.Tensor:
        n, d = x.shape
        m = source.shape[0]
        hd = d // self.heads
        q = self.to_q(x).reshape(n, self.heads, hd).transpose(0, 1)
        k = self.to_k(source).reshape(m, self.heads, hd).transpose(0, 1)
        v = self.to_v(source).reshape(m, self.heads, hd).transpose(0, 1)
        attended = scaled_dot_product_attention(q, k, v)
        return self.out(attended.transpose(0, 1).reshape(n, d))


class ResidualBlock(nn.Module):
    """attention + MLP, both residual; second MLP linear zero-initializable."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.attn = Attention(dim, heads)
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, 2 * dim), nn.GELU(),
                                 nn.Linear(2 * dim, dim))

    def forward(self, x: torch.Tensor, source: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x), self.norm1(source))
        return x + self.mlp(self.norm2(x))
