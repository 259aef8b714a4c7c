"""matchset/1 wire emission (schema owned by the core toolkit)."""

from __future__ import annotations

import json
import os
from pathlib import Path

from .matchers import BridgeConfig, PairMatches


def matchset_document(pair_id: str, pm: PairMatches, cfg: BridgeConfig,
                      texture_path: str, camera_path: str) -> dict:
    return {
        "schema": "matchset/1",
        "image0": {"path": texture_path, "width": pm.image0_size[0],
                   "height": pm.image0_size[1]},
        "image1": {"path": camera_path, "width": pm.image1_size[0],
                   "height": pm.image1_size[1]},
        "keypoints0": [[float(x), float(y)] for x, y in pm.keypoints0],
        "keypoints1": [[float(x), float(y)] for x, y in pm.keypoints1],
        "matches": [[int(i), int(j), float(s)]
                    for (i, j), s in zip(pm.matches, pm.scores)],
        "meta": {
            "matcher": cfg.matcher,
            "resize_long_edge": cfg.resize_long_edge,
            "num_keypoints0": len(pm.keypoints0),
            "num_keypoints1": len(pm.keypoints1),
            "device": cfg.device,
            "weights_sha256": pm.weights_sha256,
            "bridge": "facadeloc-bridge",
        },
    }


def write_matchset(doc: dict, out_dir: Path, pair_id: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{pair_id}.matchset.json"
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, indent=1) + "\n")
    os.replace(tmp, path)
    return path
