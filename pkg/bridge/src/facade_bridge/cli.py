"""Bridge CLI: run a learnable matcher over a pair manifest and emit one
matchset/1 file per pair.

    bridge --manifest <path> --matcher <name> --out <dir>
           [--resize 1024|off] [--device cpu] [--weights-dir weights]
           [--max-keypoints 2048]

Exit codes: 0 all pairs exported, 1 configuration/validation error (no
files written), 2 finished but some pairs were skipped (stderr lists them).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import torch

from . import __version__
from .manifest import BridgeInputError, load_image_pairs
from .matchers import (
    SUPPORTED_MATCHERS,
    BackendUnavailableError,
    BridgeConfig,
    MissingWeightsError,
    UnknownMatcherError,
    build_pipeline,
)
from .wire import matchset_document, write_matchset


def _resize_arg(value: str):
    if value.lower() == "off":
        return None
    px = int(value)
    if px <= 0:
        raise argparse.ArgumentTypeError("resize must be positive or 'off'")
    return px


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bridge", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--manifest", type=Path, required=True)
    parser.add_argument("--matcher", required=True,
                        help="one of: " + ", ".join(SUPPORTED_MATCHERS))
    parser.add_argument("--out", type=Path, required=True)
    parser.add_argument("--resize", type=_resize_arg, default=1024,
                        help="long-edge resize before inference (or 'off')")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--weights-dir", type=Path, default=Path("weights"))
    parser.add_argument("--max-keypoints", type=int, default=2048)
    return parser


def run_bridge(args) -> int:
    cfg = BridgeConfig(
        matcher=args.matcher, weights_dir=args.weights_dir,
        resize_long_edge=args.resize, device=args.device,
        max_keypoints=args.max_keypoints)
    pairs = load_image_pairs(args.manifest)
    pipeline = build_pipeline(cfg)

    torch.manual_seed(0)
    torch.use_deterministic_algorithms(True, warn_only=True)

    skipped = []
    for pair in pairs:
        try:
            pm = pipeline.match_pair(pair.texture_path,
                                     pair.camera_image_path)
        except OSError as exc:
            print(f"skipping pair {pair.pair_id}: {exc}", file=sys.stderr)
            skipped.append(pair.pair_id)
            continue
        doc = matchset_document(
            pair.pair_id, pm, cfg,
            texture_path=pair.texture_path.name,
            camera_path=pair.camera_image_path.name)
        path = write_matchset(doc, args.out, pair.pair_id)
        print(f"{pair.pair_id}: {len(pm.matches)} matches -> {path}")
    if skipped:
        print(f"{len(skipped)} pair(s) skipped: {', '.join(skipped)}",
              file=sys.stderr)
        return 2
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return run_bridge(args)
    except (UnknownMatcherError, MissingWeightsError,
            BackendUnavailableError, BridgeInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
