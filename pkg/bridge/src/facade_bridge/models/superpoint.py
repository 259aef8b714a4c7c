"""SuperPoint-style keypoint extractor (inference only).

Module names follow the original release (conv1a..convDb), so published
checkpoints load as a plain state dict without key remapping.
"""

import torch
from torch import nn
from torch.nn.functional import grid_sample, max_pool2d, relu, softmax

CELL = 8


class SuperPoint(nn.Module):
    def __init__(self, descriptor_dim: int = 256):
        super().__init__()
        c1, c2, c3, c4, c5 = 64, 64, 128, 128, 256
        self.conv1a = nn.Conv2d(1, c1, 3, 1, 1)
        self.conv1b = nn.Conv2d(c1, c1, 3, 1, 1)
        self.conv2a = nn.Conv2d(c1, c2, 3, 1, 1)
        self.conv2b = nn.Conv2d(c2, c2, 3, 1, 1)
        self.conv3a = nn.Conv2d(c2, c3, 3, 1, 1)
        self.conv3b = nn.Conv2d(c3, c3, 3, 1, 1)
        self.conv4a = nn.Conv2d(c3, c4, 3, 1, 1)
        self.conv4b = nn.Conv2d(c4, c4, 3, 1, 1)
        self.convPa = nn.Conv2d(c4, c5, 3, 1, 1)
        self.convPb = nn.Conv2d(c5, CELL * CELL + 1, 1, 1, 0)
        self.convDa = nn.Conv2d(c4, c5, 3, 1, 1)
        self.convDb = nn.Conv2d(c5, descriptor_dim, 1, 1, 0)
        self.descriptor_dim = descriptor_dim

    def backbone(self, image: torch.Tensor) -> torch.Tensor:
        x = relu(self.conv1a(image))
        x = relu(self.conv1b(x))
        x = max_pool2d(x, 2)
        x = relu(self.conv2a(x))
        x = relu(self.conv2b(x))
        x = max_pool2d(x, 2)
        x = relu(self.conv3a(x))
        x = relu(self.conv3b(x))
        x = max_pool2d(x, 2)
        x = relu(self.conv4a(x))
        x = relu(self.conv4b(x))
        return x

    def forward(self, image: torch.Tensor, *, max_keypoints: int = 2048,
                score_threshold: float = 5e-4, nms_radius: int = 4):
        """image: (1, 1, H, W) in [0, 1], H and W divisible by 8.

        Returns (keypoints (N, 2) xy pixel-index, scores (N,),
        descriptors (N, D) L2-normalized).
        """
        _, _, h, w = image.shape
        feats = self.backbone(image)

        logits = self.convPb(relu(self.convPa(feats)))
        scores = softmax(logits, dim=1)[:, :-1]  # drop the dustbin
        hc, wc = h // CELL, w // CELL
        scores = scores.permute(0, 2, 3, 1).reshape(1, hc, wc, CELL, CELL)
        heat = scores.permute(0, 1, 3, 2, 4).reshape(1, 1, h, w)

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
        ys = (idx // w).float()
        xs = (idx % w).float()
        kpts = torch.stack([xs, ys], dim=1)

        dense = self.convDb(relu(self.convDa(feats)))
        dense = torch.nn.functional.normalize(dense, dim=1)
        grid = kpts.clone()
        grid[:, 0] = (grid[:, 0] + 0.5) / w * 2.0 - 1.0
        grid[:, 1] = (grid[:, 1] + 0.5) / h * 2.0 - 1.0
        sampled = grid_sample(dense, grid.reshape(1, 1, -1, 2),
                              mode="bilinear", align_corners=False)
        desc = torch.nn.functional.normalize(
            sampled.reshape(self.descriptor_dim, -1).t(), dim=1)
        return kpts, values, desc
