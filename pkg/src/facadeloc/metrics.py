"""Per-pair and dataset-level evaluation metrics.

Conventions that matter for comparability:

* Failed estimations contribute infinite error and stay in the denominator;
  otherwise the error-recall AUC would reward matchers that abstain.
* The AUC integrates the empirical recall step function exactly (no
  trapezoidal interpolation between sorted errors):
  AUC(T) = sum over errors e <= T of (T - e) / (N * T).
* Precision at a threshold counts finite errors <= threshold over the total
  match count.
* The median over values that include infinities uses standard order
  statistics with infinities sorted last.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import CameraRecord, reprojection_errors_px
from .geotransform import FaceBasis, build_face_basis, keypoints_to_world
from .gml_ingest import TexturedFace
from .matching import MatchSet
from .robust import Homography

DEFAULT_PRECISION_THRESHOLDS_PX = (3.0, 30.0)
DEFAULT_ROT_AUC_THRESHOLDS_DEG = (3.0,)
DEFAULT_TRANS_AUC_THRESHOLDS_M = (1.0, 5.0)


@dataclass(frozen=True)
class MetricConfig:
    precision_thresholds_px: tuple[float, ...] = DEFAULT_PRECISION_THRESHOLDS_PX
    rot_auc_thresholds_deg: tuple[float, ...] = DEFAULT_ROT_AUC_THRESHOLDS_DEG
    trans_auc_thresholds_m: tuple[float, ...] = DEFAULT_TRANS_AUC_THRESHOLDS_M


@dataclass
class PairResult:
    """Everything measured for one (face texture, camera image) pair."""

    pair_id: str
    method: str
    per_match_reproj_px: np.ndarray
    precision_at: dict[float, float]
    rot_err_deg: float
    trans_err_m: float
    camera_center_err_m: float
    num_keypoints0: int
    num_keypoints1: int
    num_matches: int
    num_inliers: int
    runtime_s: float
    failure: bool
    note: str = ""

    def __post_init__(self):
        self.per_match_reproj_px = np.asarray(self.per_match_reproj_px,
                                              dtype=np.float64).reshape(-1)
        if self.num_inliers > self.num_matches:
            raise ValueError("inliers cannot exceed matches")
        if self.num_matches > 0 and min(self.num_keypoints0,
                                        self.num_keypoints1) < self.num_matches:
            raise ValueError("matches cannot exceed keypoints on either side")
        for threshold, value in self.precision_at.items():
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"precision@{threshold} outside [0, 1]")

    @property
    def median_reproj_px(self) -> float:
        return median_with_failures(self.per_match_reproj_px)


@dataclass
class SummaryRow:
    method: str
    num_pairs: int
    mean_precision: dict[float, float]
    auc_rot: dict[float, float]
    auc_trans: dict[float, float]
    mean_average_accuracy: float
    mean_inliers: float
    mean_inlier_pct: float
    median_err_px: float
    mean_keypoints: float
    mean_matches: float
    mean_runtime_s: float


@dataclass
class SummaryTable:
    rows: list[SummaryRow] = field(default_factory=list)
    config: MetricConfig = field(default_factory=MetricConfig)


def reprojection_errors(ms: MatchSet, face: TexturedFace, cam: CameraRecord,
                        basis: FaceBasis | None = None) -> np.ndarray:
    """Per-match reprojection error under the ground-truth pose: texture
    keypoint -> world point -> projection, versus the camera-image keypoint.
    Matches whose world point lies behind the camera get infinite error."""
    if basis is None:
        basis = build_face_basis(face)
    tex_xy, cam_xy = ms.matched_xy()
    world = keypoints_to_world(tex_xy, face, basis)
    return reprojection_errors_px(world, cam_xy + 0.5, cam.gt_pose,
                                  cam.intrinsics)


def precision_at(errors, thresholds) -> dict[float, float]:
    """Fraction of finite errors below each threshold, over the total match
    count (infinite errors count in the denominator). Empty input maps every
    threshold to 0 by convention; the pair is recorded as a failure upstream."""
    errors = np.asarray(errors, dtype=np.float64).reshape(-1)
    out: dict[float, float] = {}
    for threshold in thresholds:
        if threshold <= 0:
            raise ValueError("precision thresholds must be positive")
        if errors.size == 0:
            out[float(threshold)] = 0.0
        else:
            finite_below = np.sum(np.isfinite(errors) & (errors <= threshold))
            out[float(threshold)] = float(finite_below / errors.size)
    return out


def auc(errors_per_pair, max_threshold: float) -> float:
    """Area under the error-recall curve, normalized to [0, 1].

    One error per pair; failures enter as infinity. The recall step function
    r(e) = #(errors <= e) / N is integrated exactly over [0, max_threshold].
    """
    if max_threshold <= 0:
        raise ValueError("max_threshold must be positive")
    errors = np.asarray(errors_per_pair, dtype=np.float64).reshape(-1)
    n = errors.size
    if n == 0:
        return 0.0
    finite = errors[np.isfinite(errors) & (errors <= max_threshold)]
    return float(np.sum(max_threshold - finite) / (n * max_threshold))


def mean_average_accuracy(aucs) -> float:
    aucs = np.asarray(aucs, dtype=np.float64).reshape(-1)
    if aucs.size == 0:
        raise ValueError("mean_average_accuracy of an empty list")
    return float(np.mean(aucs))


def homography_corner_error(h_est: Homography, h_gt: Homography,
                            width: float, height: float) -> float:
    """Mean reprojection distance of the four image corners between the two
    homographies; infinite if any corner maps to infinity."""
    corners = np.array([[0.0, 0.0], [width, 0.0], [width, height],
                        [0.0, height]])
    pe = h_est.apply(corners)
    pg = h_gt.apply(corners)
    if not (np.all(np.isfinite(pe)) and np.all(np.isfinite(pg))):
        return float("inf")
    return float(np.mean(np.linalg.norm(pe - pg, axis=1)))


def median_with_failures(values) -> float:
    """Median by order statistics where infinities sort last.

    For even counts the two middle values are averaged (inf if either is)."""
    values = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
    n = values.size
    if n == 0:
        return float("inf")
    if n % 2:
        return float(values[n // 2])
    lo, hi = values[n // 2 - 1], values[n // 2]
    return float((lo + hi) / 2.0) if np.isfinite(hi) else float("inf")


def aggregate(results: list[PairResult],
              config: MetricConfig = MetricConfig()) -> SummaryTable:
    """Fold PairResults into one summary row per method (rows ordered by
    method name). Failed pairs contribute infinite pose errors to the AUCs,
    zeros to precision, and stay in every denominator."""
    if not results:
        raise ValueError("aggregate needs at least one PairResult")
    table = SummaryTable(config=config)
    for method in sorted({r.method for r in results}):
        group = [r for r in results if r.method == method]
        n = len(group)
        rot_errors = np.array([r.rot_err_deg for r in group])
        trans_errors = np.array([r.trans_err_m for r in group])
        mean_precision = {
            float(th): float(np.mean([r.precision_at.get(float(th), 0.0)
                                      for r in group]))
            for th in config.precision_thresholds_px
        }
        auc_rot = {float(th): auc(rot_errors, th)
                   for th in config.rot_auc_thresholds_deg}
        auc_trans = {float(th): auc(trans_errors, th)
                     for th in config.trans_auc_thresholds_m}
        all_aucs = list(auc_rot.values()) + list(auc_trans.values())
        table.rows.append(SummaryRow(
            method=method,
            num_pairs=n,
            mean_precision=mean_precision,
            auc_rot=auc_rot,
            auc_trans=auc_trans,
            mean_average_accuracy=mean_average_accuracy(all_aucs),
            mean_inliers=float(np.mean([r.num_inliers for r in group])),
            mean_inlier_pct=float(np.mean(
                [100.0 * r.num_inliers / r.num_matches if r.num_matches else 0.0
                 for r in group])),
            median_err_px=median_with_failures(
                [r.median_reproj_px for r in group]),
            mean_keypoints=float(np.mean(
                [(r.num_keypoints0 + r.num_keypoints1) / 2.0 for r in group])),
            mean_matches=float(np.mean([r.num_matches for r in group])),
            mean_runtime_s=float(np.mean([r.runtime_s for r in group])),
        ))
    return table
