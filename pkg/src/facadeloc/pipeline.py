"""End-to-end orchestration: manifests, pair building, evaluation, reports.

A pair manifest references faces (GML path + face id), camera images with
their calibration/ground-truth records, and a match source (the builtin
classical matcher or an external matchset file). Evaluation never aborts on
a bad pair: every failure mode lands in that pair's PairResult, and only
manifest-level validation (missing files) stops a run before work starts.

Reports are emitted as JSON (source of truth), CSV (one summary row per
method, floats at 6 significant digits so files are byte-stable across
platforms) and SVG error-recall curves. Writes are atomic: temp file plus
rename.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .camera import (
    CameraRecord,
    camera_record_from_dict,
    camera_record_to_dict,
    offset_gt_translation,
    project_points,
    rotation_error_deg,
    translation_error_m,
    center_points,
)
from .geotransform import build_face_basis, keypoints_to_world, pixel_to_st, st_inside_ring
from .gml_ingest import ImageStore, TexturedFace, parse_citygml
from .matching import (
    ImageRef,
    MatchSet,
    MatchSetError,
    describe,
    detect,
    load_matchset,
    match_nn,
)
from .metrics import (
    MetricConfig,
    PairResult,
    SummaryTable,
    aggregate,
    precision_at,
    reprojection_errors,
)
from .robust import RansacConfig, pnp_ransac

BUILTIN_MATCHER = "builtin"
DEFAULT_MIN_OVERLAP = 0.05


class ManifestError(ValueError):
    """Manifest fails validation (schema, uniqueness, missing files)."""


@dataclass(frozen=True)
class PairSpec:
    pair_id: str
    gml_path: str
    face_id: str
    image_path: str
    match_source: str = BUILTIN_MATCHER


@dataclass(frozen=True)
class RunDefaults:
    ransac: RansacConfig = field(default_factory=RansacConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    resize_long_edge: int | None = None
    min_overlap: float = DEFAULT_MIN_OVERLAP
    exclude_outside_polygon: bool = False
    record_timing: bool = True


@dataclass
class PairManifest:
    pairs: list[PairSpec]
    cameras_path: str
    defaults: RunDefaults = field(default_factory=RunDefaults)
    base_dir: Path = field(default_factory=Path)

    def resolve(self, p: str | Path) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p


@dataclass
class RunReport:
    pair_results: list[PairResult]
    summary: SummaryTable
    provenance: dict


# --- manifest (de)serialization ----------------------------------------------

def manifest_to_dict(manifest: PairManifest) -> dict:
    d = manifest.defaults
    return {
        "schema": "pairmanifest/1",
        "cameras_path": manifest.cameras_path,
        "defaults": {
            "ransac": asdict(d.ransac),
            "metrics": {
                "precision_thresholds_px": list(d.metrics.precision_thresholds_px),
                "rot_auc_thresholds_deg": list(d.metrics.rot_auc_thresholds_deg),
                "trans_auc_thresholds_m": list(d.metrics.trans_auc_thresholds_m),
            },
            "resize_long_edge": d.resize_long_edge,
            "min_overlap": d.min_overlap,
            "exclude_outside_polygon": d.exclude_outside_polygon,
            "record_timing": d.record_timing,
        },
        "pairs": [asdict(p) for p in manifest.pairs],
    }


def manifest_from_dict(data: dict, base_dir: Path = Path(".")) -> PairManifest:
    if data.get("schema") != "pairmanifest/1":
        raise ManifestError(
            f"not a pairmanifest/1 document: schema={data.get('schema')!r}")
    if "cameras_path" not in data or "pairs" not in data:
        raise ManifestError("manifest requires 'cameras_path' and 'pairs'")
    raw_defaults = data.get("defaults", {})
    ransac = RansacConfig(**raw_defaults.get("ransac", {}))
    raw_metrics = raw_defaults.get("metrics", {})
    metrics = MetricConfig(
        precision_thresholds_px=tuple(
            raw_metrics.get("precision_thresholds_px", (3.0, 30.0))),
        rot_auc_thresholds_deg=tuple(
            raw_metrics.get("rot_auc_thresholds_deg", (3.0,))),
        trans_auc_thresholds_m=tuple(
            raw_metrics.get("trans_auc_thresholds_m", (1.0, 5.0))),
    )
    defaults = RunDefaults(
        ransac=ransac,
        metrics=metrics,
        resize_long_edge=raw_defaults.get("resize_long_edge"),
        min_overlap=float(raw_defaults.get("min_overlap", DEFAULT_MIN_OVERLAP)),
        exclude_outside_polygon=bool(
            raw_defaults.get("exclude_outside_polygon", False)),
        record_timing=bool(raw_defaults.get("record_timing", True)),
    )
    pairs = []
    for i, p in enumerate(data["pairs"]):
        try:
            pairs.append(PairSpec(
                pair_id=p["pair_id"], gml_path=p["gml_path"],
                face_id=p["face_id"], image_path=p["image_path"],
                match_source=p.get("match_source", BUILTIN_MATCHER)))
        except KeyError as exc:
            raise ManifestError(f"pairs[{i}]: missing key {exc}") from exc
    ids = [p.pair_id for p in pairs]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise ManifestError(f"duplicate pair_ids: {dupes}")
    return PairManifest(pairs=pairs, cameras_path=data["cameras_path"],
                        defaults=defaults, base_dir=base_dir)


def load_manifest(path: str | Path) -> PairManifest:
    path = Path(path)
    return manifest_from_dict(json.loads(path.read_text()),
                              base_dir=path.parent)


def save_manifest(manifest: PairManifest, path: str | Path) -> None:
    _atomic_write_text(Path(path),
                       json.dumps(manifest_to_dict(manifest), indent=1) + "\n")


def save_cameras(cameras: list[CameraRecord], path: str | Path) -> None:
    doc = {"schema": "cameras/1",
           "cameras": [camera_record_to_dict(c) for c in cameras]}
    _atomic_write_text(Path(path), json.dumps(doc, indent=1) + "\n")


def load_cameras(path: str | Path) -> dict[str, CameraRecord]:
    data = json.loads(Path(path).read_text())
    if data.get("schema") != "cameras/1":
        raise ManifestError(f"not a cameras/1 document: {data.get('schema')!r}")
    records = [camera_record_from_dict(c) for c in data["cameras"]]
    return {r.image_path: r for r in records}


def resolve_camera_image(manifest: PairManifest, image_path: str) -> Path:
    """Camera image files live with the cameras file that names them;
    their path doubles as the lookup key into the camera records."""
    p = Path(image_path)
    if p.is_absolute():
        return p
    return manifest.resolve(manifest.cameras_path).parent / p


def validate_manifest(manifest: PairManifest) -> None:
    """Check every referenced file before any work starts."""
    missing = []
    cameras_file = manifest.resolve(manifest.cameras_path)
    if not cameras_file.is_file():
        missing.append(str(cameras_file))
    for p in manifest.pairs:
        if not manifest.resolve(p.gml_path).is_file():
            missing.append(str(manifest.resolve(p.gml_path)))
        if cameras_file.is_file() \
                and not resolve_camera_image(manifest, p.image_path).is_file():
            missing.append(str(resolve_camera_image(manifest, p.image_path)))
        if p.match_source != BUILTIN_MATCHER \
                and not manifest.resolve(p.match_source).is_file():
            missing.append(str(manifest.resolve(p.match_source)))
    if missing:
        raise ManifestError("missing input files: " + ", ".join(sorted(set(missing))))
    cameras = load_cameras(cameras_file)
    for p in manifest.pairs:
        if p.image_path not in cameras:
            raise ManifestError(
                f"pair {p.pair_id}: no camera record for {p.image_path!r}")


# --- pair building -----------------------------------------------------------

def _clip_polygon_to_rect(poly: np.ndarray, width: float, height: float,
                          ) -> np.ndarray:
    """Sutherland-Hodgman clip of a polygon against [0,w] x [0,h]."""
    def clip_edge(points, inside, intersect):
        out = []
        n = len(points)
        for i in range(n):
            cur, prev = points[i], points[i - 1]
            cur_in, prev_in = inside(cur), inside(prev)
            if cur_in:
                if not prev_in:
                    out.append(intersect(prev, cur))
                out.append(cur)
            elif prev_in:
                out.append(intersect(prev, cur))
        return out

    def x_cross(p, q, x0):
        t = (x0 - p[0]) / (q[0] - p[0])
        return (x0, p[1] + t * (q[1] - p[1]))

    def y_cross(p, q, y0):
        t = (y0 - p[1]) / (q[1] - p[1])
        return (p[0] + t * (q[0] - p[0]), y0)

    pts = [tuple(v) for v in np.asarray(poly, dtype=np.float64)]
    for inside, intersect in (
        (lambda p: p[0] >= 0.0, lambda p, q: x_cross(p, q, 0.0)),
        (lambda p: p[0] <= width, lambda p, q: x_cross(p, q, width)),
        (lambda p: p[1] >= 0.0, lambda p, q: y_cross(p, q, 0.0)),
        (lambda p: p[1] <= height, lambda p, q: y_cross(p, q, height)),
    ):
        pts = clip_edge(pts, inside, intersect)
        if not pts:
            return np.empty((0, 2))
    return np.asarray(pts)


def _polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)))


def build_pairs(faces: list[TexturedFace], cameras: list[CameraRecord], *,
                gml_path: str, cameras_path: str,
                min_overlap: float = DEFAULT_MIN_OVERLAP,
                match_source: str = BUILTIN_MATCHER,
                defaults: RunDefaults | None = None) -> PairManifest:
    """Pair every face with every camera image that sees it: all face
    vertices project in front of the camera and the projected polygon covers
    at least ``min_overlap`` of the image area. One facade can pair with
    several camera images; multiplicity is preserved."""
    pairs: list[PairSpec] = []
    seen: dict[str, int] = {}
    for face in faces:
        for cam in cameras:
            uv, in_front = project_points(face.world_ring, cam.gt_pose,
                                          cam.intrinsics)
            if not np.all(in_front):
                continue
            clipped = _clip_polygon_to_rect(
                uv, cam.intrinsics.image_width, cam.intrinsics.image_height)
            image_area = cam.intrinsics.image_width * cam.intrinsics.image_height
            if _polygon_area(clipped) < min_overlap * image_area:
                continue
            stem = Path(cam.image_path).stem
            pair_id = f"{face.face_id}__{stem}"
            if pair_id in seen:
                seen[pair_id] += 1
                pair_id = f"{pair_id}__{seen[pair_id]}"
            else:
                seen[pair_id] = 0
            pairs.append(PairSpec(
                pair_id=pair_id, gml_path=gml_path, face_id=face.face_id,
                image_path=cam.image_path, match_source=match_source))
    manifest = PairManifest(pairs=pairs, cameras_path=cameras_path,
                            defaults=defaults or RunDefaults())
    if min_overlap != DEFAULT_MIN_OVERLAP:
        manifest.defaults = replace(manifest.defaults, min_overlap=min_overlap)
    return manifest


# --- per-pair evaluation ------------------------------------------------------

def _load_gray(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float32)


def _resize_long_edge(img: np.ndarray, target: int | None,
                      ) -> tuple[np.ndarray, float, float]:
    """Downscale so the larger dimension equals target; returns the image and
    per-axis scale factors (resized/original). Never upscales."""
    if target is None or max(img.shape) <= target:
        return img, 1.0, 1.0
    h, w = img.shape
    z = target / max(h, w)
    out_h, out_w = max(1, int(round(h * z))), max(1, int(round(w * z)))
    resized = np.asarray(
        Image.fromarray(np.asarray(img, dtype=np.float32)).resize(
            (out_w, out_h), resample=Image.BILINEAR))
    return resized, out_w / w, out_h / h


def _keypoints_to_original(xy: np.ndarray, sx: float, sy: float) -> np.ndarray:
    out = np.empty_like(xy)
    out[:, 0] = (xy[:, 0] + 0.5) / sx - 0.5
    out[:, 1] = (xy[:, 1] + 0.5) / sy - 0.5
    return out


def _builtin_matchset(texture: np.ndarray, cam_img: np.ndarray,
                      ref0: ImageRef, ref1: ImageRef,
                      resize_long_edge: int | None) -> MatchSet:
    img0, sx0, sy0 = _resize_long_edge(texture, resize_long_edge)
    img1, sx1, sy1 = _resize_long_edge(cam_img, resize_long_edge)
    kps0 = detect(img0)
    kps1 = detect(img1)
    d0, kept0 = describe(img0, kps0)
    d1, kept1 = describe(img1, kps1)
    idx, scores = match_nn(d0, d1)
    xy0 = _keypoints_to_original(kps0.xy[kept0], sx0, sy0)
    xy1 = _keypoints_to_original(kps1.xy[kept1], sx1, sy1)
    return MatchSet(
        keypoints0=xy0, keypoints1=xy1, indices=idx, scores=scores,
        image0=ref0, image1=ref1,
        meta={"matcher": BUILTIN_MATCHER, "resize_long_edge": resize_long_edge})


def _failure_result(pair: PairSpec, method: str, cfg: MetricConfig, note: str,
                    counts=(0, 0, 0), errors=None, runtime_s=0.0) -> PairResult:
    errors = np.empty(0) if errors is None else errors
    return PairResult(
        pair_id=pair.pair_id, method=method,
        per_match_reproj_px=errors,
        precision_at=precision_at(errors, cfg.precision_thresholds_px),
        rot_err_deg=float("inf"), trans_err_m=float("inf"),
        camera_center_err_m=float("inf"),
        num_keypoints0=counts[0], num_keypoints1=counts[1],
        num_matches=counts[2], num_inliers=0,
        runtime_s=runtime_s, failure=True, note=note)


def evaluate_pair(pair: PairSpec, manifest: PairManifest,
                  cameras: dict[str, CameraRecord]) -> PairResult:
    """Run one pair end to end; every failure mode becomes a PairResult with
    ``failure=True`` instead of an exception."""
    d = manifest.defaults
    cfg = d.metrics
    method = BUILTIN_MATCHER
    try:
        gml_file = manifest.resolve(pair.gml_path)
        parsed = parse_citygml(gml_file.read_bytes())
        face = next((f for f in parsed.faces if f.face_id == pair.face_id), None)
        if face is None:
            return _failure_result(pair, method, cfg,
                                   f"face {pair.face_id!r} not found in GML")
        store = ImageStore(root=gml_file.parent)
        width, height, _ = store.stats(face.texture_path)
        face = replace(face, image_width=width, image_height=height)
        cam = cameras[pair.image_path]

        ref0 = ImageRef(path=face.texture_path, width=width, height=height)
        ref1 = ImageRef(path=pair.image_path,
                        width=cam.intrinsics.image_width,
                        height=cam.intrinsics.image_height)

        start = time.perf_counter()
        if pair.match_source == BUILTIN_MATCHER:
            texture = store.load_gray(face.texture_path)
            cam_img = _load_gray(resolve_camera_image(manifest,
                                                      pair.image_path))
            ms = _builtin_matchset(texture, cam_img, ref0, ref1,
                                   d.resize_long_edge)
        else:
            ms = load_matchset(manifest.resolve(pair.match_source))
            method = str(ms.meta.get("matcher", "file"))
            if (ms.image0.width, ms.image0.height) != (width, height):
                return _failure_result(
                    pair, method, cfg,
                    f"matchset image0 is {ms.image0.width}x{ms.image0.height} "
                    f"but texture is {width}x{height}")
        runtime_s = time.perf_counter() - start if d.record_timing else 0.0
        method = str(ms.meta.get("matcher", method))

        counts = (len(ms.keypoints0), len(ms.keypoints1), ms.num_matches)
        if ms.num_matches == 0:
            return _failure_result(pair, method, cfg, "no matches",
                                   counts=counts, runtime_s=runtime_s)

        basis = build_face_basis(face)
        tex_xy, cam_xy = ms.matched_xy()
        note = ""
        if d.exclude_outside_polygon:
            st = pixel_to_st(tex_xy + 0.5, width, height)
            inside = st_inside_ring(st, face.st_ring)
            if not np.all(inside):
                note = f"dropped {int((~inside).sum())} matches outside polygon"
                tex_xy, cam_xy = tex_xy[inside], cam_xy[inside]
        errors = reprojection_errors(ms, face, cam, basis)

        if len(tex_xy) < 4:
            return _failure_result(pair, method, cfg,
                                   note or "fewer than 4 usable matches",
                                   counts=counts, errors=errors,
                                   runtime_s=runtime_s)

        world = keypoints_to_world(tex_xy, face, basis)
        centered, offset = center_points(world)
        estimate = pnp_ransac(centered, cam_xy + 0.5, cam.intrinsics, d.ransac)

        if not estimate.success:

            return _failure_result(pair, method, cfg,
                                   note or "pose estimation failed",
                                   counts=counts, errors=errors,
                                   runtime_s=runtime_s)
        gt_t_centered = offset_gt_translation(cam.gt_pose, offset)
        rot_err = rotation_error_deg(estimate.pose.r, cam.gt_pose.r)
        trans_err = translation_error_m(estimate.pose.t, gt_t_centered)
        center_err = float(np.linalg.norm(
            estimate.pose.camera_center - (cam.gt_pose.camera_center - offset)))

        return PairResult(
            pair_id=pair.pair_id, method=method,
            per_match_reproj_px=errors,
            precision_at=precision_at(errors, cfg.precision_thresholds_px),
            rot_err_deg=rot_err, trans_err_m=trans_err,
            camera_center_err_m=center_err,
            num_keypoints0=counts[0], num_keypoints1=counts[1],
            num_matches=counts[2],
            num_inliers=int(estimate.inlier_mask.sum()),
            runtime_s=runtime_s, failure=False, note=note)
    except (ValueError, OSError, KeyError, MatchSetError) as exc:
        return _failure_result(pair, method, cfg, f"{type(exc).__name__}: {exc}")


def _pair_worker(args) -> PairResult:
    return evaluate_pair(*args)


def run_evaluation(manifest: PairManifest, *, jobs: int = 1) -> RunReport:
    """Evaluate every pair and aggregate; deterministic given manifest and
    the seed in its RANSAC defaults (results are ordered by pair_id)."""
    validate_manifest(manifest)
    started = datetime.now(timezone.utc).isoformat()
    cameras = load_cameras(manifest.resolve(manifest.cameras_path))
    tasks = [(pair, manifest, cameras) for pair in manifest.pairs]
    if jobs > 1 and len(tasks) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_pair_worker, tasks))
    else:
        results = [_pair_worker(t) for t in tasks]
    results.sort(key=lambda r: r.pair_id)
    summary = aggregate(results, manifest.defaults.metrics) if results \
        else SummaryTable(config=manifest.defaults.metrics)
    manifest_json = json.dumps(manifest_to_dict(manifest), sort_keys=True)
    provenance = {
        "toolkit_version": __version__,
        "config_sha256": hashlib.sha256(manifest_json.encode()).hexdigest(),
        "seed": manifest.defaults.ransac.seed,
        "started_utc": started,
        "finished_utc": datetime.now(timezone.utc).isoformat(),
        "conventions": {
            "failure_accounting": "failed pairs contribute infinite pose error "
                                  "to AUCs and zeros to precision; all means "
                                  "average over every pair",
            "pair_visibility_rule": "all vertices in front and projected "
                                    f"overlap >= {manifest.defaults.min_overlap} "
                                    "of image area (stand-in for manual "
                                    "curation)",
            "translation_error_space": "camera-frame t-vectors after "
                                       "ground-truth centering",
        },
    }
    return RunReport(pair_results=results, summary=summary,
                     provenance=provenance)


# --- report emission ----------------------------------------------------------

def _fmt(x: float) -> str:
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    if np.isnan(x):
        return "nan"
    return f"{x:.6g}"


def pair_result_to_dict(r: PairResult) -> dict:
    return {
        "pair_id": r.pair_id,
        "method": r.method,
        "per_match_reproj_px": [float(e) for e in r.per_match_reproj_px],
        "precision_at": {str(k): v for k, v in r.precision_at.items()},
        "rot_err_deg": r.rot_err_deg,
        "trans_err_m": r.trans_err_m,
        "camera_center_err_m": r.camera_center_err_m,
        "num_keypoints0": r.num_keypoints0,
        "num_keypoints1": r.num_keypoints1,
        "num_matches": r.num_matches,
        "num_inliers": r.num_inliers,
        "runtime_s": r.runtime_s,
        "failure": r.failure,
        "note": r.note,
    }


def pair_result_from_dict(d: dict) -> PairResult:
    return PairResult(
        pair_id=d["pair_id"], method=d["method"],
        per_match_reproj_px=np.asarray(d["per_match_reproj_px"], dtype=np.float64),
        precision_at={float(k): v for k, v in d["precision_at"].items()},
        rot_err_deg=d["rot_err_deg"], trans_err_m=d["trans_err_m"],
        camera_center_err_m=d.get("camera_center_err_m", float("inf")),
        num_keypoints0=d["num_keypoints0"], num_keypoints1=d["num_keypoints1"],
        num_matches=d["num_matches"], num_inliers=d["num_inliers"],
        runtime_s=d["runtime_s"], failure=d["failure"], note=d.get("note", ""))


def summary_to_csv(summary: SummaryTable) -> str:
    cfg = summary.config
    header = ["method"]
    header += [f"mPrec@{_fmt(t)}px" for t in cfg.precision_thresholds_px]
    header += [f"AUC@{_fmt(t)}deg" for t in cfg.rot_auc_thresholds_deg]
    header += [f"AUC@{_fmt(t)}m" for t in cfg.trans_auc_thresholds_m]
    header += ["mAA", "mInl", "mInlPct", "medErr", "mKpts", "mMatches",
               "time_s_per_pair"]
    lines = [",".join(header)]
    for row in summary.rows:
        cells = [row.method]
        cells += [_fmt(row.mean_precision[float(t)])
                  for t in cfg.precision_thresholds_px]
        cells += [_fmt(row.auc_rot[float(t)]) for t in cfg.rot_auc_thresholds_deg]
        cells += [_fmt(row.auc_trans[float(t)])
                  for t in cfg.trans_auc_thresholds_m]
        cells += [_fmt(row.mean_average_accuracy), _fmt(row.mean_inliers),
                  _fmt(row.mean_inlier_pct), _fmt(row.median_err_px),
                  _fmt(row.mean_keypoints), _fmt(row.mean_matches),
                  _fmt(row.mean_runtime_s)]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _svg_error_recall(results: list[PairResult], cfg: MetricConfig) -> str:
    """Recall-vs-error curves per method, rotation and translation panels,
    with gridlines at the configured thresholds."""
    panel_w, panel_h, margin = 420, 260, 45
    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
               "#8c564b", "#e377c2"]
    methods = sorted({r.method for r in results})
    panels = [
        ("rotation error [deg]", "rot_err_deg",
         max(cfg.rot_auc_thresholds_deg, default=3.0)),
        ("translation error [m]", "trans_err_m",
         max(cfg.trans_auc_thresholds_m, default=1.0)),
    ]
    width = 2 * panel_w + 3 * margin
    height = panel_h + 2 * margin + 18 * max(1, len(methods))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" font-family="sans-serif" font-size="11">',
    ]
    for pi, (label, attr, max_t) in enumerate(panels):
        ox = margin + pi * (panel_w + margin)
        oy = margin
        parts.append(
            f'<rect x="{ox}" y="{oy}" width="{panel_w}" height="{panel_h}" '
            'fill="none" stroke="#333"/>')
        parts.append(
            f'<text x="{ox + panel_w / 2:.1f}" y="{oy - 8}" '
            f'text-anchor="middle">recall vs {label}</text>')
        thresholds = (cfg.rot_auc_thresholds_deg if attr == "rot_err_deg"
                      else cfg.trans_auc_thresholds_m)
        for t in thresholds:
            if t > max_t:
                continue
            gx = ox + panel_w * t / (max_t * 1.0)
            parts.append(
                f'<line x1="{gx:.1f}" y1="{oy}" x2="{gx:.1f}" '
                f'y2="{oy + panel_h}" stroke="#bbb" stroke-dasharray="4,3"/>')
            parts.append(
                f'<text x="{gx:.1f}" y="{oy + panel_h + 14}" '
                f'text-anchor="middle">{_fmt(t)}</text>')
        for mi, method in enumerate(methods):
            errors = np.sort(np.asarray(
                [getattr(r, attr) for r in results if r.method == method]))
            n = len(errors)
            if n == 0:
                continue
            pts = [(0.0, 0.0)]
            for i, e in enumerate(errors):
                if not np.isfinite(e) or e > max_t:
                    break
                recall_before = i / n
                recall_after = (i + 1) / n
                pts.append((e, recall_before))
                pts.append((e, recall_after))
            pts.append((max_t, pts[-1][1]))
            path = " ".join(
                f"{ox + panel_w * x / max_t:.2f},{oy + panel_h * (1 - y):.2f}"
                for x, y in pts)
            color = palette[mi % len(palette)]
            parts.append(f'<polyline points="{path}" fill="none" '
                         f'stroke="{color}" stroke-width="1.5"/>')
    for mi, method in enumerate(methods):
        color = palette[mi % len(palette)]
        y = panel_h + margin + 24 + 18 * mi
        parts.append(f'<rect x="{margin}" y="{y - 9}" width="14" height="9" '
                     f'fill="{color}"/>')
        parts.append(f'<text x="{margin + 20}" y="{y}">{method}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def report_to_dict(report: RunReport) -> dict:
    cfg = report.summary.config
    return {
        "schema": "runreport/1",
        "provenance": report.provenance,
        "metric_config": {
            "precision_thresholds_px": list(cfg.precision_thresholds_px),
            "rot_auc_thresholds_deg": list(cfg.rot_auc_thresholds_deg),
            "trans_auc_thresholds_m": list(cfg.trans_auc_thresholds_m),
        },
        "pairs": [pair_result_to_dict(r) for r in report.pair_results],
    }


def report_from_json(path: str | Path) -> RunReport:
    """Rebuild a report from its JSON; the summary table is recomputed from
    the per-pair records (they are the source of truth)."""
    data = json.loads(Path(path).read_text())
    if data.get("schema") != "runreport/1":
        raise ManifestError(f"not a runreport/1 document: {data.get('schema')!r}")
    mc = data["metric_config"]
    cfg = MetricConfig(
        precision_thresholds_px=tuple(mc["precision_thresholds_px"]),
        rot_auc_thresholds_deg=tuple(mc["rot_auc_thresholds_deg"]),
        trans_auc_thresholds_m=tuple(mc["trans_auc_thresholds_m"]))
    results = [pair_result_from_dict(d) for d in data["pairs"]]
    summary = aggregate(results, cfg) if results else SummaryTable(config=cfg)
    return RunReport(pair_results=results, summary=summary,
                     provenance=data.get("provenance", {}))


def emit_report(report: RunReport, outdir: str | Path,
                formats: tuple[str, ...] = ("json", "csv", "svg")) -> dict[str, Path]:
    """Write report artifacts; returns the paths written. Files are written
    to temporaries and renamed, so a failure never leaves partial output."""
    outdir = Path(outdir)
    written: dict[str, Path] = {}
    if "json" in formats:
        path = outdir / "report.json"
        _atomic_write_text(path, json.dumps(report_to_dict(report), indent=1)
                           + "\n")
        written["json"] = path
        pairs_path = outdir / "pairs.json"
        _atomic_write_text(
            pairs_path,
            json.dumps([pair_result_to_dict(r) for r in report.pair_results],
                       indent=1) + "\n")
        written["pairs"] = pairs_path
    if "csv" in formats:
        path = outdir / "summary.csv"
        _atomic_write_text(path, summary_to_csv(report.summary))
        written["csv"] = path
    if "svg" in formats:
        path = outdir / "curves.svg"
        _atomic_write_text(path, _svg_error_recall(report.pair_results,
                                                   report.summary.config))
        written["svg"] = path
    return written
