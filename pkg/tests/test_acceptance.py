"""Acceptance suite: one test per toolkit-level criterion, each printing a
PASS line with the measured figures (run with ``pytest -s`` to see them).
"""

import time
from pathlib import Path

import numpy as np
import pytest

from facadeloc.camera import (
    Intrinsics,
    Pose,
    center_points,
    offset_gt_translation,
    project,
    random_rotation,
    rotation_error_deg,
    translation_error_m,
)
from facadeloc.geotransform import build_face_basis, pixel_to_world, st_to_pixel, st_to_world
from facadeloc.gml_ingest import TexturedFace
from facadeloc.matching import save_matchset
from facadeloc.metrics import aggregate, auc, homography_corner_error, precision_at
from facadeloc.pipeline import load_manifest, run_evaluation
from facadeloc.robust import Homography, RansacConfig, pnp_ransac, residuals_and_jacobian
from facadeloc.synth import SceneConfig, corrupt_matches, generate_scene
from .golden import build_golden_csv
from .test_pipeline import write_scene

DATA_DIR = Path(__file__).parent / "data"


def _random_affine_face(rng):
    origin = rng.uniform(-500, 500, 3)
    q = np.linalg.qr(rng.normal(size=(3, 3)))[0]
    u3 = q[:, 0] * rng.uniform(1, 40)
    v3 = q[:, 1] * rng.uniform(1, 40)
    while True:
        a = rng.uniform(-2, 2, (2, 2))
        if abs(np.linalg.det(a)) > 0.1:
            break
    n = int(rng.integers(3, 9))
    ang = np.sort(rng.uniform(0, 2 * np.pi, n))
    params = np.stack([np.cos(ang), np.sin(ang)], 1)
    return TexturedFace(
        face_id="rand", texture_path="t.png",
        st_ring=params @ a.T + rng.uniform(-1, 1, 2),
        world_ring=origin + params @ np.stack([u3, v3]),
        image_width=640, image_height=480)


def test_geometry_roundtrip():
    """100 randomized synthetic faces: ring vertices map through
    pixel_to_world to their world twins and the map is affine, both at
    1e-9 m, in under 5 s."""
    rng = np.random.default_rng(20_240_701)
    start = time.perf_counter()
    worst_vertex = 0.0
    worst_affine = 0.0
    for _ in range(100):
        face = _random_affine_face(rng)
        basis = build_face_basis(face)
        mapped = st_to_world(face.st_ring, basis)
        worst_vertex = max(worst_vertex, float(np.max(
            np.linalg.norm(mapped - face.world_ring, axis=1))))
        pix = st_to_pixel(face.st_ring, face.image_width, face.image_height)
        via_pixels = pixel_to_world(pix, face, basis)
        worst_vertex = max(worst_vertex, float(np.max(
            np.linalg.norm(via_pixels - face.world_ring, axis=1))))
        p, q = rng.uniform(0, [640, 480], (2, 2))
        lam = rng.uniform()
        blend = (lam * pixel_to_world(p, face, basis)
                 + (1 - lam) * pixel_to_world(q, face, basis))
        mix = pixel_to_world(lam * p + (1 - lam) * q, face, basis)
        worst_affine = max(worst_affine, float(np.linalg.norm(mix - blend)))
    elapsed = time.perf_counter() - start
    assert worst_vertex < 1e-9
    assert worst_affine < 1e-9
    assert elapsed < 5.0
    print(f"\nACCEPTANCE geometry-roundtrip: PASS "
          f"(vertex {worst_vertex:.2e} m, affine {worst_affine:.2e} m, "
          f"{elapsed:.2f} s)")


def test_centering_identity_at_utm_magnitudes():
    """1000 random pose/point-set draws near (6.9e5, 5.3e6, 5e2) m: the
    centered projection matches direct projection within 1e-9 px."""
    rng = np.random.default_rng(31_337)
    k = Intrinsics(fx=1200.0, fy=1150.0, cx=640.0, cy=480.0,
                   image_width=1280, image_height=960)
    worst = 0.0
    for _ in range(1000):
        r = random_rotation(rng)
        c = np.array([691000.0, 5336000.0, 510.0]) + rng.uniform(-200, 200, 3)
        pose = Pose(r=r, t=-(r @ c))
        depth = rng.uniform(5, 80, (8, 1))
        dirs = np.concatenate([rng.uniform(-0.4, 0.4, (8, 2)),
                               np.ones((8, 1))], axis=1)
        pts = c + (dirs * depth) @ r
        centered, offset = center_points(pts)
        shifted = Pose(r=r, t=offset_gt_translation(pose, offset))
        delta = np.abs(project(centered, shifted, k) - project(pts, pose, k))
        worst = max(worst, float(delta.max()))
    assert worst < 1e-9
    print(f"\nACCEPTANCE centering-identity: PASS (max {worst:.2e} px "
          f"over 1000 draws)")


def test_pnp_recovery_noiseless_and_corrupted(tmp_path):
    """Exact ground-truth matches recover the pose to 1e-4 deg / 1e-4 m;
    with 50% outliers and 1 px noise at RANSAC t=10 the pose stays within
    0.5 deg / 1% of standoff and the inlier mask agrees with the corruption
    bookkeeping on >= 95% of matches. Under 10 s per scene."""
    from facadeloc.geotransform import keypoints_to_world

    scene = generate_scene(SceneConfig(seed=7))
    start = time.perf_counter()

    def estimate(ms):
        tex, cam = ms.matched_xy()
        world = keypoints_to_world(tex, scene.face)
        centered, offset = center_points(world)
        est = pnp_ransac(centered, cam + 0.5, scene.camera.intrinsics,
                         RansacConfig(threshold_px=10.0, seed=13))
        gt_t = offset_gt_translation(scene.camera.gt_pose, offset)
        return est, rotation_error_deg(est.pose.r, scene.camera.gt_pose.r), \
            translation_error_m(est.pose.t, gt_t)

    est, rot, trans = estimate(scene.gt_matches)
    assert est.success and rot < 1e-4 and trans < 1e-4

    corrupted, info = corrupt_matches(scene.gt_matches, 0.5, 1.0, seed=99)
    est2, rot2, trans2 = estimate(corrupted)
    agreement = float(np.mean(est2.inlier_mask == ~info.outlier_mask))
    elapsed = time.perf_counter() - start
    assert est2.success
    assert rot2 < 0.5
    assert trans2 < 0.01 * scene.config.standoff_m
    assert agreement >= 0.95
    assert elapsed < 10.0
    print(f"\nACCEPTANCE pnp-recovery: PASS (noiseless {rot:.2e} deg / "
          f"{trans:.2e} m; corrupted {rot2:.3f} deg / {trans2:.4f} m, "
          f"mask agreement {agreement:.3f}, {elapsed:.1f} s)")


def test_end_to_end_builtin_matcher(tmp_path):
    """Builtin classical matcher: frontal scene succeeds with >= 30 inliers
    and < 1 deg rotation error; the 45-degree oblique scene may fail but the
    run must complete and record the degradation."""
    frontal = generate_scene(SceneConfig(seed=42))
    manifest = load_manifest(write_scene(frontal, tmp_path / "f", "builtin"))
    r = run_evaluation(manifest).pair_results[0]
    assert not r.failure
    assert r.num_inliers >= 30
    assert r.rot_err_deg < 1.0

    oblique = generate_scene(SceneConfig(seed=42, yaw_deg=45.0))
    manifest = load_manifest(write_scene(oblique, tmp_path / "o", "builtin"))
    report = run_evaluation(manifest)
    ro = report.pair_results[0]
    degraded = ro.failure or ro.num_inliers < r.num_inliers
    assert degraded
    status = "failure" if ro.failure else f"{ro.num_inliers} inliers"
    print(f"\nACCEPTANCE end-to-end-builtin: PASS (frontal "
          f"{r.num_inliers} inliers / {r.rot_err_deg:.3f} deg; 45deg oblique "
          f"degrades gracefully: {status})")


def test_metric_oracles():
    """auc vs dense numerical integration (1e-6 over 1000 random sets);
    homography corner error vs per-corner brute force (1e-9); precision and
    aggregation vs scripted oracles (exact)."""
    rng = np.random.default_rng(2024)
    worst_auc = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 15))
        errors = rng.uniform(0, 6, n)
        errors[rng.uniform(size=n) < 0.15] = np.inf
        t = float(rng.uniform(0.5, 5.0))
        # Midpoint integration of the recall step function; the grid pitch
        # bounds the oracle's own error below 5e-7.
        de = t * 1e-6
        grid = np.arange(de / 2.0, t, de)
        finite = np.sort(errors[np.isfinite(errors)])
        recall = np.searchsorted(finite, grid, side="right") / n
        dense = float(recall.sum() * de / t)
        worst_auc = max(worst_auc, abs(auc(errors, t) - dense))
    assert worst_auc < 1e-6

    worst_corner = 0.0
    for _ in range(200):
        ha = Homography(np.eye(3) + rng.uniform(-0.25, 0.25, (3, 3)))
        hb = Homography(np.eye(3) + rng.uniform(-0.25, 0.25, (3, 3)))
        got = homography_corner_error(ha, hb, 640, 480)
        per_corner = []
        for c in [(0.0, 0.0), (640.0, 0.0), (640.0, 480.0), (0.0, 480.0)]:
            pa = ha.h @ [c[0], c[1], 1.0]
            pb = hb.h @ [c[0], c[1], 1.0]
            per_corner.append(np.hypot(pa[0] / pa[2] - pb[0] / pb[2],
                                       pa[1] / pa[2] - pb[1] / pb[2]))
        worst_corner = max(worst_corner, abs(got - sum(per_corner) / 4.0))
    assert worst_corner < 1e-9

    errors = np.array([10.0, 20.0, 40.0, np.inf])
    assert precision_at(errors, (30.0,))[30.0] == 0.5
    from .test_metrics import make_result
    results = [make_result(pair_id=f"p{i}", errors=rng.uniform(0, 40, 5),
                           rot=float(rng.uniform(0, 4)),
                           trans=float(rng.uniform(0, 2)), inliers=3)
               for i in range(10)]
    row = aggregate(results).rows[0]
    assert row.mean_inliers == 3.0
    assert row.auc_rot[3.0] == auc([r.rot_err_deg for r in results], 3.0)
    print(f"\nACCEPTANCE metric-oracles: PASS (auc dev {worst_auc:.2e}, "
          f"corner dev {worst_corner:.2e})")


def test_lm_refinement_gradient_check():
    """Analytic Jacobian vs central differences: relative error < 1e-5 over
    100 random configurations."""
    rng = np.random.default_rng(555)
    k = Intrinsics(fx=600.0, fy=580.0, cx=320.0, cy=240.0,
                   image_width=640, image_height=480)
    worst = 0.0
    for _ in range(100):
        pose = Pose(r=random_rotation(rng),
                    t=np.array([*rng.uniform(-1, 1, 2), rng.uniform(6, 20)]))
        world = rng.uniform(-3, 3, (8, 3))
        uv = rng.uniform(0, [640, 480], (8, 2))
        depths = world @ pose.r[2] + pose.t[2]
        if np.any(depths <= 0.5):
            continue
        _, jac = residuals_and_jacobian(pose, world, uv, k)
        eps = 1e-6
        fd = np.zeros_like(jac)
        for col in range(6):
            d = np.zeros(6)
            d[col] = eps
            rp, _ = residuals_and_jacobian(pose.retract(d[:3], d[3:]),
                                           world, uv, k)
            rm, _ = residuals_and_jacobian(pose.retract(-d[:3], -d[3:]),
                                           world, uv, k)
            fd[:, col] = (rp - rm) / (2 * eps)
        worst = max(worst, float(np.abs(jac - fd).max() / np.abs(jac).max()))
    assert worst < 1e-5
    print(f"\nACCEPTANCE lm-gradient-check: PASS (max rel dev {worst:.2e})")


def test_published_table_replacement_golden_fixture(tmp_path):
    """The published survey-data result tables are NOT reproducible at desk
    scale: they require proprietary car/UAV survey imagery, pretrained
    network weights, and survey-grade ground truth with documented
    decimeter-level inconsistencies. The substitute evidence is (a) the
    property suites above and (b) this committed fixture run, whose summary
    CSV must be byte-stable."""
    golden_path = DATA_DIR / "golden_summary.csv"
    got = build_golden_csv(tmp_path / "golden")
    assert golden_path.is_file(), "golden fixture missing"
    assert got.encode() == golden_path.read_bytes()
    print("\nACCEPTANCE published-table-replacement: PASS (golden CSV "
          "byte-identical; full-table reproduction out of desk-scale scope)")
