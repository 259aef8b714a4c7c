"""SuperGlue-style sparse matcher (inference only): a keypoint encoder,
alternating self/cross attentional message passing, and a Sinkhorn
assignment with dustbins.
"""

import torch
from torch import nn

from .attention import ResidualBlock


def log_sinkhorn(scores: torch.Tensor, bin_score: torch.Tensor,
                 iters: int = 20) -> torch.Tensor:
    """Log-domain Sinkhorn over the score matrix augmented with dustbins;
    returns the (n+1, m+1) log assignment."""
    n, m = scores.shape
    alpha = bin_score.expand(1, 1)
    couplings = torch.cat(
        [torch.cat([scores, alpha.expand(n, 1)], dim=1),
         torch.cat([alpha.expand(1, m), alpha], dim=1)], dim=0)
    log_mu = torch.cat([torch.zeros(n), torch.tensor([float(m)]).log()])
    log_nu = torch.cat([torch.zeros(m), torch.tensor([float(n)]).log()])
    u = torch.zeros(n + 1)
    v = torch.zeros(m + 1)
    for _ in range(iters):
        u = log_mu - torch.logsumexp(couplings + v.reshape(1, -1), dim=1)
        v = log_nu - torch.logsumexp(couplings + u.reshape(-1, 1), dim=0)
    z = couplings + u.reshape(-1, 1) + v.reshape(1, -1)
    return z - torch.tensor(float(n + m)).log().neg()  # normalized total mass


class SuperGlueStyle(nn.Module):
    def __init__(self, input_dim: int = 256, dim: int = 256, heads: int = 4,
                 layers: int = 4):
        super().__init__()
        self.input_proj = nn.Linear(input_dim, dim)
        self.kenc = nn.Sequential(nn.Linear(3, dim), nn.ReLU(),
                                  nn.Linear(dim, dim))
        self.blocks = nn.ModuleList(
            ResidualBlock(dim, heads) for _ in range(2 * layers))
        self.final_proj = nn.Linear(dim, dim)
        self.bin_score = nn.Parameter(torch.tensor(1.0))
        self.dim = dim

    def forward(self, kpts0, desc0, scores0, size0, kpts1, desc1, scores1,
                size1, *, min_score: float = 1e-4):
        if len(kpts0) == 0 or len(kpts1) == 0:
            return torch.empty(0, 2, dtype=torch.long), torch.empty(0)

        def encode(kpts, desc, kp_scores, size):
            wh = torch.tensor(size, dtype=kpts.dtype)
            pos = (kpts - wh / 2.0) / wh.max()
            geom = torch.cat([pos, kp_scores.reshape(-1, 1)], dim=1)
            return self.input_proj(desc) + self.kenc(geom)

        x0 = encode(kpts0, desc0, scores0, size0)
        x1 = encode(kpts1, desc1, scores1, size1)
        for i, block in enumerate(self.blocks):
            if i % 2 == 0:
                x0, x1 = block(x0, x0), block(x1, x1)
            else:
                x0, x1 = block(x0, x1), block(x1, x0)
        f0 = self.final_proj(x0)
        f1 = self.final_proj(x1)
        sim = f0 @ f1.t() / self.dim ** 0.5
        z = log_sinkhorn(sim, self.bin_score)
        scores = z[:-1, :-1].exp()
        from .lightglue import mutual_matches
        return mutual_matches(scores, min_score)
