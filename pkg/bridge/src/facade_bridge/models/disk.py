"""DISK-style dense extractor: U-Net producing a detection heatmap and
128-d descriptors (inference only).

The state-dict layout is this module's own (documented in the bridge
README); converting an official release requires a one-off key mapping.
"""

import torch
from torch import nn
from torch.nn.functional import grid_sample, interpolate, max_pool2d, relu


def _block(cin, cout):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, 1, 1), nn.ReLU(inplace=True),
        nn.Conv2d(cout, cout, 3, 1, 1), nn.ReLU(inplace=True))


class DiskUnet(nn.Module):
    def __init__(self, descriptor_dim: int = 128):
        super().__init__()
        ch = (32, 64, 128, 128)
        self.down1 = _block(3, ch[0])
        self.down2 = _block(ch[0], ch[1])
        self.down3 = _block(ch[1], ch[2])
        self.bottom = _block(ch[2], ch[3])
        self.up3 = _block(ch[3] + ch[2], ch[2])
        self.up2 = _block(ch[2] + ch[1], ch[1])
        self.up1 = _block(ch[1] + ch[0], ch[0])
        self.head = nn.Conv2d(ch[0], descriptor_dim + 1, 1)
        self.descriptor_dim = descriptor_dim

    def dense(self, image: torch.Tensor) -> torch.Tensor:
        d1 = self.down1(image)
        d2 = self.down2(max_pool2d(d1, 2))
        d3 = self.down3(max_pool2d(d2, 2))
        b = self.bottom(max_pool2d(d3, 2))
        u3 = self.up3(torch.cat([interpolate(b, scale_factor=2.0), d3], 1))
        u2 = self.up2(torch.cat([interpolate(u3, scale_factor=2.0), d2], 1))
        u1 = self.up1(torch.cat([interpolate(u2, scale_factor=2.0), d1], 1))
        return self.head(u1)

    def forward(self, image: torch.Tensor, *, max_keypoints: int = 2048,
                score_threshold: float = 0.0, nms_radius: int = 2):
        """image: (1, 3, H, W) in [0, 1], H and W divisible by 8."""
        _, _, h, w = image.shape
        out = self.dense(image)
        heat = out[:, -1:].sigmoid()
        desc_map = out[:, :-1]

        size = nms_radius * 2 + 1
        local_max = max_pool2d(heat, size, stride=1, padding=nms_radius)
        keep = (heat == local_max) & (heat > score_threshold)
        heat = torch.where(keep, heat, torch.zeros_like(heat))
        flat = heat.reshape(-1)
        n = min(max_keypoints, int((flat > 0).sum()))
        if n == 0:
            empty = torch.empty(0)
            return (empty.reshape(0, 2), empty,
                    torch.empty(0, self.descriptor_dim))
        values, idx = torch.topk(flat, n)
        kpts = torch.stack([(idx % w).float(), (idx // w).float()], dim=1)
        grid = kpts.clone()
        grid[:, 0] = (grid[:, 0] + 0.5) / w * 2.0 - 1.0
        grid[:, 1] = (grid[:, 1] + 0.5) / h * 2.0 - 1.0
        sampled = grid_sample(desc_map, grid.reshape(1, 1, -1, 2),
                              mode="bilinear", align_corners=False)
        desc = torch.nn.functional.normalize(
            sampled.reshape(self.descriptor_dim, -1).t(), dim=1)
        return kpts, values, desc
