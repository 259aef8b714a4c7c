"""Untrained "smoke" checkpoints for pipeline conformance testing.

These are NOT trained weights and say nothing about matching quality. The
point is that the full inference path can be exercised offline: extractor
convolutions get a seeded random init (descriptors then still vary with
image content, so near-identical views produce similar descriptors), and
every residual branch of the matcher transformers is zero-initialized, so
the untrained attention stack degenerates to the identity and assignment
reduces to projected-descriptor similarity. Real evaluation requires real
pretrained checkpoints in the weights directory.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import torch

from .matchers import WEIGHT_FILES
from .models.disk import DiskUnet
from .models.lightglue import LightGlueStyle
from .models.superglue import SuperGlueStyle
from .models.superpoint import SuperPoint


def _zero_residual_branches(model: torch.nn.Module) -> None:
    from .models.attention import ResidualBlock
    for module in model.modules():
        if isinstance(module, ResidualBlock):
            torch.nn.init.zeros_(module.attn.out.weight)
            torch.nn.init.zeros_(module.attn.out.bias)
            torch.nn.init.zeros_(module.mlp[-1].weight)
            torch.nn.init.zeros_(module.mlp[-1].bias)


def _delta_orthogonal_convs(model: torch.nn.Module, first: torch.nn.Conv2d,
                            gain: float = 1.414) -> None:
    """Structured init that keeps untrained descriptors input-dependent.

    Default random init collapses deep ReLU representations: the image DC
    component dominates every activation, so after L2 normalization all
    descriptors are nearly parallel and matching is vacuous. Two measures:
    the first conv gets random zero-mean spatial filters (pure local
    contrast, like trained front ends), and all remaining convs get
    delta-orthogonal kernels, which propagate variation through depth.
    """
    for module in model.modules():
        if not isinstance(module, torch.nn.Conv2d):
            continue
        if module.bias is not None:
            torch.nn.init.zeros_(module.bias)
        if module is first:
            torch.nn.init.normal_(module.weight)
            module.weight.data -= module.weight.data.mean(
                dim=(2, 3), keepdim=True)
            module.weight.data *= gain / module.weight.data.reshape(
                module.weight.shape[0], -1).norm(dim=1).reshape(-1, 1, 1, 1)
            continue
        torch.nn.init.zeros_(module.weight)
        kh, kw = module.kernel_size
        center = module.weight[:, :, kh // 2, kw // 2]
        torch.nn.init.orthogonal_(center, gain=gain)


def generate_smoke_weights(out_dir: Path, seed: int = 0,
                           layers: int = 2) -> dict[str, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}

    def save(component: str, model: torch.nn.Module, config: dict):
        path = out_dir / WEIGHT_FILES[component]
        torch.save({"state_dict": model.state_dict(),
                    "config": config,
                    "provenance": "untrained smoke checkpoint"}, path)
        written[component] = path

    torch.manual_seed(seed)
    sp = SuperPoint()
    _delta_orthogonal_convs(sp, first=sp.conv1a)
    save("superpoint", sp, {})
    torch.manual_seed(seed + 1)
    disk = DiskUnet()
    _delta_orthogonal_convs(disk, first=disk.down1[0])
    save("disk", disk, {})
    # Orthogonal input/final projections with a sharp similarity scale:
    # untrained magnitudes would leave softmax assignments near-uniform over
    # thousands of keypoints, below any sensible score floor.
    def _projection_init(matcher):
        torch.nn.init.orthogonal_(matcher.input_proj.weight)
        torch.nn.init.zeros_(matcher.input_proj.bias)
        torch.nn.init.orthogonal_(matcher.final_proj.weight, gain=64.0)
        torch.nn.init.zeros_(matcher.final_proj.bias)

    for name, input_dim, offset in (("lightglue_superpoint", 256, 2),
                                    ("lightglue_disk", 128, 3)):
        torch.manual_seed(seed + offset)
        matcher = LightGlueStyle(input_dim=input_dim, layers=layers)
        _zero_residual_branches(matcher)
        _projection_init(matcher)
        torch.nn.init.zeros_(matcher.pos_proj.weight)
        torch.nn.init.zeros_(matcher.pos_proj.bias)
        torch.nn.init.zeros_(matcher.matchability.weight)
        # Open the matchability gates: untrained gating has nothing to say.
        torch.nn.init.constant_(matcher.matchability.bias, 10.0)
        save(name, matcher, {"layers": layers, "heads": 4, "dim": 256})
    torch.manual_seed(seed + 4)
    sg = SuperGlueStyle(input_dim=256, layers=layers)
    _zero_residual_branches(sg)
    _projection_init(sg)
    torch.nn.init.zeros_(sg.kenc[-1].weight)
    torch.nn.init.zeros_(sg.kenc[-1].bias)
    save("superglue", sg, {"layers": layers, "heads": 4, "dim": 256})
    return written


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="Generate untrained smoke checkpoints (pipeline "
                    "conformance only, never benchmarking)")
    parser.add_argument("--out", type=Path, required=True)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--layers", type=int, default=2)
    args = parser.parse_args(argv)
    written = generate_smoke_weights(args.out, seed=args.seed,
                                     layers=args.layers)
    for component, path in sorted(written.items()):
        print(f"{component}: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
