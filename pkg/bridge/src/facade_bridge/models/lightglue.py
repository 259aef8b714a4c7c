"""LightGlue-style sparse matcher (inference only): per-layer self and
cross attention over both keypoint sets, then a dual-softmax assignment
with per-keypoint matchability gating.

State-dict layout is this module's own; see the bridge README about
converting published checkpoints.
"""

import torch
from torch import nn
from torch.nn.functional import log_softmax

from .attention import ResidualBlock


class LightGlueStyle(nn.Module):
    def __init__(self, input_dim: int = 256, dim: int = 256, heads: int = 4,
                 layers: int = 4):
        super().__init__()
        self.input_proj = nn.Linear(input_dim, dim)
        self.pos_proj = nn.Linear(2, dim)
        self.self_blocks = nn.ModuleList(
            ResidualBlock(dim, heads) for _ in range(layers))
        self.cross_blocks = nn.ModuleList(
            ResidualBlock(dim, heads) for _ in range(layers))
        self.final_proj = nn.Linear(dim, dim)
        self.matchability = nn.Linear(dim, 1)
        self.dim = dim

    @staticmethod
    def _normalize_positions(kpts: torch.Tensor, size) -> torch.Tensor:
        wh = torch.tensor(size, dtype=kpts.dtype)
        return (kpts - wh / 2.0) / wh.max()

    def forward(self, kpts0, desc0, size0, kpts1, desc1, size1, *,
                min_score: float = 1e-4):
        """Returns (matches (M, 2) long, scores (M,))."""
        if len(kpts0) == 0 or len(kpts1) == 0:
            return torch.empty(0, 2, dtype=torch.long), torch.empty(0)
        x0 = self.input_proj(desc0) \
            + self.pos_proj(self._normalize_positions(kpts0, size0))
        x1 = self.input_proj(desc1) \
            + self.pos_proj(self._normalize_positions(kpts1, size1))
        for self_block, cross_block in zip(self.self_blocks,
                                           self.cross_blocks):
            x0 = self_block(x0, x0)
            x1 = self_block(x1, x1)
            x0, x1 = cross_block(x0, x1), cross_block(x1, x0)
        f0 = self.final_proj(x0) / self.dim ** 0.25
        f1 = self.final_proj(x1) / self.dim ** 0.25
        sim = f0 @ f1.t()
        assignment = (log_softmax(sim, dim=1) + log_softmax(sim, dim=0)).exp()
        gate0 = self.matchability(x0).sigmoid().reshape(-1, 1)
        gate1 = self.matchability(x1).sigmoid().reshape(1, -1)
        scores = assignment * gate0 * gate1
        return mutual_matches(scores, min_score)


def mutual_matches(scores: torch.Tensor, min_score: float):
    nn0 = scores.argmax(dim=1)
    nn1 = scores.argmax(dim=0)
    i0 = torch.arange(scores.shape[0])
    mutual = nn1[nn0] == i0
    strong = scores[i0, nn0] >= min_score
    keep = mutual & strong
    matches = torch.stack([i0[keep], nn0[keep]], dim=1)
    return matches, scores[matches[:, 0], matches[:, 1]]
