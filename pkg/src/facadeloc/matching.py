"""Classical feature pipeline and the matchset interchange format.

Detection is an oriented-corner pipeline: segment-test corners on an image
pyramid (scale factor 1.2, 8 levels), ranked by Harris response, with
orientation from the intensity centroid of a radius-15 patch. The default
segment arc is 4 of 16 circle pixels: a 90-degree arc keeps X-junction
corners (checkerboards and window grids) that the classic 9-contiguous test
is blind to, while Harris ranking suppresses the extra edge responses the
shorter arc lets through.

Descriptors are 256 pairwise intensity comparisons on a smoothed patch,
steered by keypoint angle; the sampling pattern is a fixed module constant
so descriptors are bit-exactly reproducible. Matching is brute-force
nearest-neighbour under Hamming distance with optional cross-check.

Keypoint coordinates everywhere are continuous pixel-index coordinates at
ORIGINAL image resolution: the center of pixel (0, 0) is (0.0, 0.0).
Bridges that resize images must rescale keypoints back and record the
resize policy in ``meta.resize_long_edge``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

DESCRIPTOR_BITS = 256
DESCRIPTOR_BYTES = DESCRIPTOR_BITS // 8
PATTERN_RADIUS = 13
BORDER_MARGIN = 31
DEFAULT_MAX_KEYPOINTS = 2048
DEFAULT_MAX_DISTANCE = 64
PYRAMID_LEVELS = 8
PYRAMID_SCALE = 1.2
FAST_CIRCLE = np.array([
    (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
    (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
], dtype=np.int64)  # (dx, dy), clockwise from 12 o'clock

_ORIENT_RADIUS = 15
_DETECT_MARGIN = _ORIENT_RADIUS + 1


class MatchSetError(ValueError):
    """Matchset wire-format violation; the message names the field."""


def _max_circular_run_table() -> np.ndarray:
    """max_run[p] = longest circular run of set bits in 16-bit pattern p."""
    patterns = np.arange(1 << 16, dtype=np.uint32)
    bits = ((patterns[:, None] >> np.arange(16)) & 1).astype(np.uint8)
    doubled = np.concatenate([bits, bits], axis=1)
    run = np.zeros(len(patterns), dtype=np.uint8)
    best = np.zeros(len(patterns), dtype=np.uint8)
    for col in range(32):
        run = (run + 1) * doubled[:, col]
        best = np.maximum(best, run)
    best = np.minimum(best, 16)
    best[patterns == 0xFFFF] = 16
    return best


_MAX_RUN = _max_circular_run_table()


def _sampling_pattern() -> np.ndarray:
    """Fixed 256-pair comparison pattern, offsets in [-13, 13]^2.

    Drawn once from a pinned generator; pairs with identical endpoints are
    redrawn so every bit carries information.
    """
    rng = np.random.Generator(np.random.PCG64(0x0FACADE5))
    pattern = rng.integers(-PATTERN_RADIUS, PATTERN_RADIUS + 1,
                           size=(DESCRIPTOR_BITS, 2, 2))
    while True:
        equal = np.all(pattern[:, 0] == pattern[:, 1], axis=1)
        if not np.any(equal):
            break
        pattern[equal] = rng.integers(-PATTERN_RADIUS, PATTERN_RADIUS + 1,
                                      size=(int(equal.sum()), 2, 2))
    return pattern.astype(np.float64)


SAMPLING_PATTERN = _sampling_pattern()


@dataclass(frozen=True)
class Keypoints:
    """Detected keypoints as parallel arrays (pixel-index coordinates in the
    base image)."""

    xy: np.ndarray
    response: np.ndarray
    angle: np.ndarray
    level: np.ndarray

    def __len__(self):
        return len(self.xy)

    def take(self, idx) -> "Keypoints":
        return Keypoints(self.xy[idx], self.response[idx],
                         self.angle[idx], self.level[idx])

    @classmethod
    def empty(cls) -> "Keypoints":
        return cls(np.empty((0, 2)), np.empty(0), np.empty(0),
                   np.empty(0, dtype=np.int64))


def _build_pyramid(image: np.ndarray, levels: int = PYRAMID_LEVELS,
                   scale: float = PYRAMID_SCALE) -> list[np.ndarray]:
    base = np.asarray(image, dtype=np.float64)
    pyramid = [base]
    for lvl in range(1, levels):
        z = scale ** -lvl
        out_h = max(1, int(round(base.shape[0] * z)))
        out_w = max(1, int(round(base.shape[1] * z)))
        lv = ndimage.zoom(base, (out_h / base.shape[0], out_w / base.shape[1]),
                          order=1, grid_mode=True, mode="nearest")
        pyramid.append(lv)
    return pyramid


def _level_to_base(xy_level: np.ndarray, level_shape, base_shape) -> np.ndarray:
    sy = level_shape[0] / base_shape[0]
    sx = level_shape[1] / base_shape[1]
    x = (xy_level[:, 0] + 0.5) / sx - 0.5
    y = (xy_level[:, 1] + 0.5) / sy - 0.5
    return np.stack([x, y], axis=1)


def _base_to_level(xy_base: np.ndarray, level_shape, base_shape) -> np.ndarray:
    sy = level_shape[0] / base_shape[0]
    sx = level_shape[1] / base_shape[1]
    x = (xy_base[:, 0] + 0.5) * sx - 0.5
    y = (xy_base[:, 1] + 0.5) * sy - 0.5
    return np.stack([x, y], axis=1)


def _segment_test(img: np.ndarray, threshold: float, min_arc: int) -> np.ndarray:
    """Boolean candidate mask (same shape as img, border 3 always False)."""
    h, w = img.shape
    mask = np.zeros((h, w), dtype=bool)
    if h <= 6 or w <= 6:
        return mask
    center = img[3:h - 3, 3:w - 3]
    bright = np.zeros(center.shape, dtype=np.uint16)
    dark = np.zeros(center.shape, dtype=np.uint16)
    for i, (dx, dy) in enumerate(FAST_CIRCLE):
        neigh = img[3 + dy:h - 3 + dy, 3 + dx:w - 3 + dx]
        bright |= (neigh > center + threshold).astype(np.uint16) << i
        dark |= (neigh < center - threshold).astype(np.uint16) << i
    cand = (_MAX_RUN[bright] >= min_arc) | (_MAX_RUN[dark] >= min_arc)
    mask[3:h - 3, 3:w - 3] = cand
    return mask


def _harris_response(img: np.ndarray, k: float = 0.04,
                     sigma: float = 1.5) -> np.ndarray:
    gx = ndimage.sobel(img, axis=1, mode="nearest") / 8.0
    gy = ndimage.sobel(img, axis=0, mode="nearest") / 8.0
    ixx = ndimage.gaussian_filter(gx * gx, sigma, mode="nearest")
    iyy = ndimage.gaussian_filter(gy * gy, sigma, mode="nearest")
    ixy = ndimage.gaussian_filter(gx * gy, sigma, mode="nearest")
    return (ixx * iyy - ixy * ixy) - k * (ixx + iyy) ** 2


def _orientations(img: np.ndarray, xy: np.ndarray,
                  radius: int = _ORIENT_RADIUS) -> np.ndarray:
    """Intensity-centroid angle for integer keypoint locations."""
    dy, dx = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    disc = (dx * dx + dy * dy) <= radius * radius
    dxs = dx[disc]
    dys = dy[disc]
    xs = np.rint(xy[:, 0]).astype(np.int64)[:, None] + dxs[None, :]
    ys = np.rint(xy[:, 1]).astype(np.int64)[:, None] + dys[None, :]
    vals = img[ys, xs]
    m10 = np.sum(vals * dxs, axis=1)
    m01 = np.sum(vals * dys, axis=1)
    return np.arctan2(m01, m10)


def detect(image, *, max_keypoints: int = DEFAULT_MAX_KEYPOINTS,
           threshold: float = 20.0, min_arc: int = 4,
           levels: int = PYRAMID_LEVELS) -> Keypoints:
    """Detect oriented corners over the pyramid, strongest first.

    Returns at most max_keypoints keypoints sorted by Harris response
    descending (deterministic tie-break on level, then y, then x). Images
    smaller than the orientation patch yield an empty set rather than an
    error.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError("detect expects a single-channel image")
    base_shape = image.shape
    pyramid = _build_pyramid(image, levels=levels)

    found: list[tuple[np.ndarray, np.ndarray, int]] = []
    for lvl, img in enumerate(pyramid):
        h, w = img.shape
        if h < 2 * _DETECT_MARGIN + 1 or w < 2 * _DETECT_MARGIN + 1:
            continue
        cand = _segment_test(img, threshold, min_arc)
        cand[:_DETECT_MARGIN, :] = False
        cand[-_DETECT_MARGIN:, :] = False
        cand[:, :_DETECT_MARGIN] = False
        cand[:, -_DETECT_MARGIN:] = False
        if not cand.any():
            continue
        resp = _harris_response(img)
        scores = np.where(cand, resp, -np.inf)
        local_max = ndimage.maximum_filter(scores, size=3, mode="nearest")
        keep = cand & (scores >= local_max) & (resp > 0.0)
        ys, xs = np.nonzero(keep)
        if len(xs) == 0:
            continue
        found.append((np.stack([xs, ys], axis=1).astype(np.float64),
                      resp[ys, xs], lvl))

    if not found:
        return Keypoints.empty()

    xy_lvl = np.concatenate([f[0] for f in found])
    response = np.concatenate([f[1] for f in found])
    level = np.concatenate([np.full(len(f[0]), f[2], dtype=np.int64)
                            for f in found])
    xy_base = np.concatenate([
        _level_to_base(f[0], pyramid[f[2]].shape, base_shape) for f in found])

    order = np.lexsort((xy_lvl[:, 0], xy_lvl[:, 1], level, -response))
    order = order[:max_keypoints]
    xy_lvl, response, level, xy_base = (
        xy_lvl[order], response[order], level[order], xy_base[order])

    angle = np.empty(len(order))
    for lvl in np.unique(level):
        sel = level == lvl
        angle[sel] = _orientations(pyramid[lvl], xy_lvl[sel])

    return Keypoints(xy=xy_base, response=response, angle=angle, level=level)


def describe(image, kps: Keypoints, *,
             levels: int = PYRAMID_LEVELS) -> tuple[np.ndarray, np.ndarray]:
    """Binary descriptors for keypoints; returns (packed, kept_indices).

    ``packed`` is (K, 32) uint8 (256 bits per row); ``kept_indices`` maps
    rows back into ``kps``. Keypoints within 31 px of the base-image border
    (or without full pattern support at their pyramid level) are dropped;
    their indices are the complement of ``kept_indices``.
    """
    image = np.asarray(image, dtype=np.float64)
    base_shape = image.shape
    pyramid = _build_pyramid(image, levels=levels)
    smoothed = [ndimage.gaussian_filter(img, 2.0, mode="nearest")
                for img in pyramid]

    n = len(kps)
    if n == 0:
        return np.empty((0, DESCRIPTOR_BYTES), dtype=np.uint8), np.empty(0, np.int64)

    in_base = (
        (kps.xy[:, 0] >= BORDER_MARGIN)
        & (kps.xy[:, 0] < base_shape[1] - BORDER_MARGIN)
        & (kps.xy[:, 1] >= BORDER_MARGIN)
        & (kps.xy[:, 1] < base_shape[0] - BORDER_MARGIN)
    )
    # Rotated pattern support at the sampling level.
    level_margin = int(np.ceil(PATTERN_RADIUS * np.sqrt(2.0))) + 2

    bits = np.zeros((n, DESCRIPTOR_BITS), dtype=np.uint8)
    kept = np.zeros(n, dtype=bool)
    cos_a, sin_a = np.cos(kps.angle), np.sin(kps.angle)
    for lvl in np.unique(kps.level):
        sel = np.nonzero((kps.level == lvl) & in_base)[0]
        if len(sel) == 0:
            continue
        img = smoothed[lvl]
        h, w = img.shape
        xy_lvl = _base_to_level(kps.xy[sel], img.shape, base_shape)
        ok = (
            (xy_lvl[:, 0] >= level_margin) & (xy_lvl[:, 0] < w - level_margin)
            & (xy_lvl[:, 1] >= level_margin) & (xy_lvl[:, 1] < h - level_margin)
        )
        sel = sel[ok]
        if len(sel) == 0:
            continue
        xy_lvl = xy_lvl[ok]
        kept[sel] = True
        c, s = cos_a[sel][:, None], sin_a[sel][:, None]
        ox = SAMPLING_PATTERN[:, :, 0].reshape(1, -1)  # (1, 512)
        oy = SAMPLING_PATTERN[:, :, 1].reshape(1, -1)
        px = xy_lvl[:, :1] + c * ox - s * oy
        py = xy_lvl[:, 1:] + s * ox + c * oy
        vals = ndimage.map_coordinates(
            img, np.stack([py.ravel(), px.ravel()]), order=1, mode="nearest")
        vals = vals.reshape(len(sel), DESCRIPTOR_BITS, 2)
        bits[sel] = (vals[:, :, 0] < vals[:, :, 1]).astype(np.uint8)

    kept_idx = np.nonzero(kept)[0]
    packed = np.packbits(bits[kept_idx], axis=1)
    return packed, kept_idx


def hamming_matrix(d0: np.ndarray, d1: np.ndarray,
                   chunk: int = 512) -> np.ndarray:
    """Pairwise Hamming distances between packed descriptor sets."""
    d0 = np.asarray(d0, dtype=np.uint8)
    d1 = np.asarray(d1, dtype=np.uint8)
    out = np.empty((len(d0), len(d1)), dtype=np.int32)
    for start in range(0, len(d0), chunk):
        block = d0[start:start + chunk][:, None, :] ^ d1[None, :, :]
        out[start:start + chunk] = np.bitwise_count(block).sum(
            axis=2, dtype=np.int32)
    return out


def match_nn(d0: np.ndarray, d1: np.ndarray, *, cross_check: bool = True,
             max_distance: int = DEFAULT_MAX_DISTANCE,
             ) -> tuple[np.ndarray, np.ndarray]:
    """Brute-force Hamming nearest-neighbour matching.

    Returns (indices (M, 2) int64, scores (M,)); score = 1 - distance/256.
    Ties resolve to the smallest index on the other side, so results are
    deterministic and swapping the inputs under cross-check transposes the
    pairs exactly.
    """
    d0 = np.asarray(d0, dtype=np.uint8)
    d1 = np.asarray(d1, dtype=np.uint8)
    if len(d0) == 0 or len(d1) == 0:
        return np.empty((0, 2), dtype=np.int64), np.empty(0)
    dist = hamming_matrix(d0, d1)
    nn0 = dist.argmin(axis=1)
    i0 = np.arange(len(d0), dtype=np.int64)
    if cross_check:
        nn1 = dist.argmin(axis=0)
        mutual = nn1[nn0] == i0
        i0 = i0[mutual]
    i1 = nn0[i0]
    d = dist[i0, i1]
    ok = d <= max_distance
    i0, i1, d = i0[ok], i1[ok], d[ok]
    indices = np.stack([i0, i1.astype(np.int64)], axis=1)
    scores = 1.0 - d / float(DESCRIPTOR_BITS)
    return indices, scores


# --- matchset wire format (matchset/1) ---------------------------------------

@dataclass(frozen=True)
class ImageRef:
    path: str
    width: int
    height: int


@dataclass
class MatchSet:
    """Keypoints in both images plus index-pair matches with scores.

    Coordinates are continuous pixels at original image resolution.
    """

    keypoints0: np.ndarray
    keypoints1: np.ndarray
    indices: np.ndarray
    scores: np.ndarray
    image0: ImageRef
    image1: ImageRef
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.keypoints0 = np.asarray(self.keypoints0, dtype=np.float64).reshape(-1, 2)
        self.keypoints1 = np.asarray(self.keypoints1, dtype=np.float64).reshape(-1, 2)
        self.indices = np.asarray(self.indices, dtype=np.int64).reshape(-1, 2)
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        self.validate()

    @property
    def num_matches(self):
        return len(self.indices)

    def matched_xy(self) -> tuple[np.ndarray, np.ndarray]:
        return (self.keypoints0[self.indices[:, 0]],
                self.keypoints1[self.indices[:, 1]])

    def validate(self):
        if len(self.scores) != len(self.indices):
            raise MatchSetError("matches: scores and index pairs disagree in length")
        for name, kps, ref in (("keypoints0", self.keypoints0, self.image0),
                               ("keypoints1", self.keypoints1, self.image1)):
            if not np.all(np.isfinite(kps)):
                raise MatchSetError(f"{name}: non-finite coordinates")
            if len(kps) and (np.any(kps[:, 0] < 0) or np.any(kps[:, 1] < 0)
                             or np.any(kps[:, 0] >= ref.width)
                             or np.any(kps[:, 1] >= ref.height)):
                bad = int(np.nonzero(
                    (kps[:, 0] < 0) | (kps[:, 1] < 0)
                    | (kps[:, 0] >= ref.width) | (kps[:, 1] >= ref.height))[0][0])
                raise MatchSetError(
                    f"{name}[{bad}]: coordinates outside [0, width) x [0, height)")
        if len(self.indices):
            if self.indices.min() < 0:
                raise MatchSetError("matches: negative keypoint index")
            if self.indices[:, 0].max() >= len(self.keypoints0):
                raise MatchSetError(
                    f"matches: index0 {int(self.indices[:, 0].max())} out of range "
                    f"for {len(self.keypoints0)} keypoints0")
            if self.indices[:, 1].max() >= len(self.keypoints1):
                raise MatchSetError(
                    f"matches: index1 {int(self.indices[:, 1].max())} out of range "
                    f"for {len(self.keypoints1)} keypoints1")
            for side in (0, 1):
                _, counts = np.unique(self.indices[:, side], return_counts=True)
                if np.any(counts > 1):
                    raise MatchSetError(
                        f"matches: keypoint matched more than once on side {side}")
        if not np.all(np.isfinite(self.scores)):
            raise MatchSetError("matches: non-finite score")
        if "matcher" not in self.meta:
            raise MatchSetError("meta.matcher: missing")
        if "resize_long_edge" not in self.meta:
            raise MatchSetError("meta.resize_long_edge: missing")
        rle = self.meta["resize_long_edge"]
        if rle is not None and (not isinstance(rle, int) or rle <= 0):
            raise MatchSetError("meta.resize_long_edge: must be null or a positive int")


def matchset_to_dict(ms: MatchSet) -> dict:
    return {
        "schema": "matchset/1",
        "image0": {"path": ms.image0.path, "width": ms.image0.width,
                   "height": ms.image0.height},
        "image1": {"path": ms.image1.path, "width": ms.image1.width,
                   "height": ms.image1.height},
        "keypoints0": ms.keypoints0.tolist(),
        "keypoints1": ms.keypoints1.tolist(),
        "matches": [[int(i0), int(i1), float(s)]
                    for (i0, i1), s in zip(ms.indices, ms.scores)],
        "meta": ms.meta,
    }


def _image_ref_from_dict(name: str, data) -> ImageRef:
    if not isinstance(data, dict):
        raise MatchSetError(f"{name}: expected an object")
    for key in ("path", "width", "height"):
        if key not in data:
            raise MatchSetError(f"{name}.{key}: missing")
    width, height = data["width"], data["height"]
    if not isinstance(width, int) or not isinstance(height, int) \
            or width <= 0 or height <= 0:
        raise MatchSetError(f"{name}.width/height: must be positive integers")
    return ImageRef(path=str(data["path"]), width=width, height=height)


def load_matchset(source: bytes | str | Path | dict) -> MatchSet:
    """Parse and validate a matchset/1 document.

    Accepts a path, raw JSON bytes/text, or an already-decoded dict. Any
    invariant violation raises MatchSetError naming the offending field.
    """
    if isinstance(source, Path):
        data = json.loads(source.read_text())
    elif isinstance(source, bytes):
        data = json.loads(source.decode("utf-8"))
    elif isinstance(source, str):
        p = Path(source)
        data = json.loads(p.read_text() if p.is_file() else source)
    else:
        data = source
    if not isinstance(data, dict):
        raise MatchSetError("document: expected a JSON object")
    if data.get("schema") != "matchset/1":
        raise MatchSetError(f"schema: expected 'matchset/1', got {data.get('schema')!r}")
    for key in ("image0", "image1", "keypoints0", "keypoints1", "matches", "meta"):
        if key not in data:
            raise MatchSetError(f"{key}: missing")
    image0 = _image_ref_from_dict("image0", data["image0"])
    image1 = _image_ref_from_dict("image1", data["image1"])

    def parse_kps(name):
        raw = data[name]
        if not isinstance(raw, list):
            raise MatchSetError(f"{name}: expected a list of [x, y]")
        if len(raw) == 0:
            return np.empty((0, 2))
        arr = np.asarray(raw, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise MatchSetError(f"{name}: entries must be [x, y] pairs")
        return arr

    kps0 = parse_kps("keypoints0")
    kps1 = parse_kps("keypoints1")
    raw_matches = data["matches"]
    if not isinstance(raw_matches, list):
        raise MatchSetError("matches: expected a list of [index0, index1, score]")
    indices = np.empty((len(raw_matches), 2), dtype=np.int64)
    scores = np.empty(len(raw_matches))
    for i, row in enumerate(raw_matches):
        if not isinstance(row, list) or len(row) != 3:
            raise MatchSetError(f"matches[{i}]: expected [index0, index1, score]")
        if row[0] != int(row[0]) or row[1] != int(row[1]):
            raise MatchSetError(f"matches[{i}]: indices must be integers")
        indices[i] = (int(row[0]), int(row[1]))
        scores[i] = float(row[2])
    meta = data["meta"]
    if not isinstance(meta, dict):
        raise MatchSetError("meta: expected an object")
    try:
        return MatchSet(keypoints0=kps0, keypoints1=kps1, indices=indices,
                        scores=scores, image0=image0, image1=image1, meta=meta)
    except MatchSetError:
        raise
    except ValueError as exc:
        raise MatchSetError(str(exc)) from exc


def save_matchset(ms: MatchSet, path: str | Path):
    Path(path).write_text(json.dumps(matchset_to_dict(ms)) + "\n")
