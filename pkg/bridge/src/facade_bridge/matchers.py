"""Matcher registry, weight resolution and the extraction+matching
pipelines behind each supported name.

Weights never download: each pipeline loads its checkpoints from the local
weights directory and a missing file is an actionable error naming the
model and the expected path. Checkpoints are ``torch.save`` dicts with a
``config`` block and one ``<component>`` state dict per component; the
bridge records the sha256 of every checkpoint it used in the emitted meta
block.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .models.disk import DiskUnet
from .models.lightglue import LightGlueStyle
from .models.superglue import SuperGlueStyle
from .models.superpoint import SuperPoint

SUPPORTED_MATCHERS = (
    "superpoint+superglue",
    "superpoint+lightglue",
    "disk+lightglue",
    "loftr",
)

WEIGHT_FILES = {
    "superpoint": "superpoint.pt",
    "superglue": "superglue.pt",
    "lightglue_superpoint": "lightglue_superpoint.pt",
    "lightglue_disk": "lightglue_disk.pt",
    "disk": "disk.pt",
    "loftr": "loftr.pt",
}


class UnknownMatcherError(ValueError):
    pass


class MissingWeightsError(FileNotFoundError):
    pass


class BackendUnavailableError(RuntimeError):
    pass


@dataclass(frozen=True)
class BridgeConfig:
    matcher: str
    weights_dir: Path = Path("weights")
    resize_long_edge: int | None = 1024
    device: str = "cpu"
    max_keypoints: int = 2048
    min_score: float = 1e-4

    def __post_init__(self):
        if self.matcher not in SUPPORTED_MATCHERS:
            raise UnknownMatcherError(
                f"unknown matcher {self.matcher!r}; supported: "
                + ", ".join(SUPPORTED_MATCHERS))
        if self.resize_long_edge is not None and self.resize_long_edge <= 0:
            raise ValueError("resize_long_edge must be positive or None")


@dataclass
class PairMatches:
    keypoints0: np.ndarray
    keypoints1: np.ndarray
    matches: np.ndarray
    scores: np.ndarray
    image0_size: tuple[int, int]
    image1_size: tuple[int, int]
    weights_sha256: dict[str, str] = field(default_factory=dict)


def resolve_weights(cfg: BridgeConfig, component: str) -> Path:
    path = cfg.weights_dir / WEIGHT_FILES[component]
    if not path.is_file():
        raise MissingWeightsError(
            f"weights for {component!r} (matcher {cfg.matcher!r}) not found "
            f"at {path}; place the checkpoint there or pass --weights-dir. "
            "For pipeline smoke tests, bridge-smoke-weights can generate "
            "untrained checkpoints.")
    return path


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _load_checkpoint(path: Path) -> dict:
    data = torch.load(path, map_location="cpu", weights_only=True)
    if "state_dict" not in data:
        data = {"state_dict": data, "config": {}}
    return data


def _load_image(path: Path, mode: str) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert(mode), dtype=np.float32) / 255.0


def _resize(img: np.ndarray, target: int | None) -> tuple[np.ndarray, float, float]:
    h, w = img.shape[:2]
    if target is None or max(h, w) <= target:
        return img, 1.0, 1.0
    z = target / max(h, w)
    out_w, out_h = max(1, round(w * z)), max(1, round(h * z))
    resized = np.asarray(
        Image.fromarray((img * 255.0).astype(np.uint8)).resize(
            (out_w, out_h), resample=Image.BILINEAR),
        dtype=np.float32) / 255.0
    return resized, out_w / w, out_h / h


def _pad_to_multiple(img: np.ndarray, multiple: int = 8) -> np.ndarray:
    h, w = img.shape[:2]
    ph = (multiple - h % multiple) % multiple
    pw = (multiple - w % multiple) % multiple
    if ph == 0 and pw == 0:
        return img
    pads = ((0, ph), (0, pw)) + ((0, 0),) * (img.ndim - 2)
    return np.pad(img, pads, mode="edge")


def _to_original(kpts: torch.Tensor, sx: float, sy: float,
                 size: tuple[int, int]) -> np.ndarray:
    """Rescale pixel-index keypoints back to original resolution and clamp
    into [0, dim-1] so wire-format bounds hold exactly."""
    xy = kpts.detach().numpy().astype(np.float64)
    xy[:, 0] = np.clip((xy[:, 0] + 0.5) / sx - 0.5, 0.0, size[0] - 1.0)
    xy[:, 1] = np.clip((xy[:, 1] + 0.5) / sy - 0.5, 0.0, size[1] - 1.0)
    return xy


class TwoStagePipeline:
    """extract-then-match pipelines (SuperPoint/DISK + LightGlue/SuperGlue)."""

    def __init__(self, cfg: BridgeConfig):
        self.cfg = cfg
        self.checksums: dict[str, str] = {}
        if cfg.matcher.startswith("superpoint"):
            self.extractor_name = "superpoint"
            desc_dim = 256
        else:
            self.extractor_name = "disk"
            desc_dim = 128
        if cfg.matcher.endswith("superglue"):
            self.matcher_name = "superglue"
        else:
            self.matcher_name = ("lightglue_superpoint"
                                 if self.extractor_name == "superpoint"
                                 else "lightglue_disk")

        ext_path = resolve_weights(cfg, self.extractor_name)
        match_path = resolve_weights(cfg, self.matcher_name)
        ext_ckpt = _load_checkpoint(ext_path)
        match_ckpt = _load_checkpoint(match_path)
        self.checksums[self.extractor_name] = _sha256(ext_path)
        self.checksums[self.matcher_name] = _sha256(match_path)

        if self.extractor_name == "superpoint":
            self.extractor = SuperPoint()
        else:
            self.extractor = DiskUnet()
        self.extractor.load_state_dict(ext_ckpt["state_dict"])
        self.extractor.eval()

        mcfg = match_ckpt.get("config", {})
        layers = int(mcfg.get("layers", 4))
        heads = int(mcfg.get("heads", 4))
        dim = int(mcfg.get("dim", 256))
        if self.matcher_name == "superglue":
            self.matcher = SuperGlueStyle(input_dim=desc_dim, dim=dim,
                                          heads=heads, layers=layers)
        else:
            self.matcher = LightGlueStyle(input_dim=desc_dim, dim=dim,
                                          heads=heads, layers=layers)
        self.matcher.load_state_dict(match_ckpt["state_dict"])
        self.matcher.eval()

    def _extract(self, path: Path):
        mode = "L" if self.extractor_name == "superpoint" else "RGB"
        img = _load_image(path, mode)
        orig_size = (img.shape[1], img.shape[0])
        img, sx, sy = _resize(img, self.cfg.resize_long_edge)
        valid_w, valid_h = img.shape[1], img.shape[0]
        img = _pad_to_multiple(img)
        tensor = torch.from_numpy(img)
        if tensor.ndim == 2:
            tensor = tensor[None, None]  # (1, 1, H, W)
        else:
            tensor = tensor.permute(2, 0, 1)[None]  # (1, C, H, W)
        with torch.no_grad():
            kpts, scores, desc = self.extractor(
                tensor, max_keypoints=self.cfg.max_keypoints)
        if len(kpts):  # drop detections inside the padding margin
            keep = (kpts[:, 0] < valid_w) & (kpts[:, 1] < valid_h)
            kpts, scores, desc = kpts[keep], scores[keep], desc[keep]
        return kpts, scores, desc, (valid_w, valid_h), (sx, sy), orig_size

    def match_pair(self, image0: Path, image1: Path) -> PairMatches:
        k0, s0, d0, size0, scale0, orig0 = self._extract(image0)
        k1, s1, d1, size1, scale1, orig1 = self._extract(image1)
        with torch.no_grad():
            if self.matcher_name == "superglue":
                matches, mscores = self.matcher(
                    k0, d0, s0, size0, k1, d1, s1, size1,
                    min_score=self.cfg.min_score)
            else:
                matches, mscores = self.matcher(
                    k0, d0, size0, k1, d1, size1,
                    min_score=self.cfg.min_score)
        return PairMatches(
            keypoints0=_to_original(k0, *scale0, orig0),
            keypoints1=_to_original(k1, *scale1, orig1),
            matches=matches.detach().numpy().astype(np.int64).reshape(-1, 2),
            scores=mscores.detach().numpy().astype(np.float64),
            image0_size=orig0, image1_size=orig1,
            weights_sha256=dict(self.checksums))


class LoftrPipeline:
    """Dense matcher via the optional kornia backend."""

    def __init__(self, cfg: BridgeConfig):
        try:
            import kornia.feature  # noqa: F401
        except ImportError as exc:
            raise BackendUnavailableError(
                "matcher 'loftr' needs the optional kornia dependency "
                "(pip install 'facadeloc-bridge[loftr]')") from exc
        import kornia.feature as KF
        path = resolve_weights(cfg, "loftr")
        self.cfg = cfg
        self.checksums = {"loftr": _sha256(path)}
        self.model = KF.LoFTR(pretrained=None)
        self.model.load_state_dict(
            torch.load(path, map_location="cpu", weights_only=True))
        self.model.eval()

    def match_pair(self, image0: Path, image1: Path) -> PairMatches:
        def prep(path):
            img = _load_image(path, "L")
            orig = (img.shape[1], img.shape[0])
            img, sx, sy = _resize(img, self.cfg.resize_long_edge)
            img = _pad_to_multiple(img)
            return torch.from_numpy(img)[None, None], (sx, sy), orig

        t0, scale0, orig0 = prep(image0)
        t1, scale1, orig1 = prep(image1)
        with torch.no_grad():
            out = self.model({"image0": t0, "image1": t1})
        k0, k1 = out["keypoints0"], out["keypoints1"]
        conf = out["confidence"]
        n = len(k0)
        matches = np.stack([np.arange(n), np.arange(n)], axis=1)
        return PairMatches(
            keypoints0=_to_original(k0, *scale0, orig0),
            keypoints1=_to_original(k1, *scale1, orig1),
            matches=matches.astype(np.int64),
            scores=conf.detach().numpy().astype(np.float64),
            image0_size=orig0, image1_size=orig1,
            weights_sha256=dict(self.checksums))


def build_pipeline(cfg: BridgeConfig):
    if cfg.matcher == "loftr":
        return LoftrPipeline(cfg)
    return TwoStagePipeline(cfg)
