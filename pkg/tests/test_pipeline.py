import dataclasses
import json
from pathlib import Path

import numpy as np
import pytest

from facadeloc.camera import CameraRecord, project_points
from facadeloc.cli import main
from facadeloc.matching import matchset_to_dict, save_matchset
from facadeloc.metrics import MetricConfig
from facadeloc.pipeline import (
    ManifestError,
    PairManifest,
    PairSpec,
    RunDefaults,
    _clip_polygon_to_rect,
    _polygon_area,
    build_pairs,
    emit_report,
    load_manifest,
    manifest_from_dict,
    manifest_to_dict,
    report_from_json,
    run_evaluation,
    save_cameras,
    save_manifest,
    summary_to_csv,
    validate_manifest,
)
from facadeloc.robust import RansacConfig
from facadeloc.synth import SceneConfig, corrupt_matches, generate_scene, save_png


def write_scene(scene, outdir: Path, match_source: str) -> Path:
    outdir.mkdir(parents=True, exist_ok=True)
    save_png(scene.texture_image, outdir / "texture.png")
    save_png(scene.view_image, outdir / "view.png")
    (outdir / "scene.gml").write_bytes(scene.gml_document)
    save_cameras([scene.camera], outdir / "cameras.json")
    save_matchset(scene.gt_matches, outdir / "gt.matchset.json")
    manifest = build_pairs(
        [scene.face], [scene.camera], gml_path="scene.gml",
        cameras_path="cameras.json", match_source=match_source,
        defaults=RunDefaults(ransac=RansacConfig(seed=3),
                             record_timing=False))
    manifest.base_dir = outdir
    save_manifest(manifest, outdir / "manifest.json")
    return outdir / "manifest.json"


@pytest.fixture(scope="module")
def scene():
    return generate_scene(SceneConfig(seed=42))


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory, scene):
    root = tmp_path_factory.mktemp("scene")
    write_scene(scene, root, "gt.matchset.json")
    return root


class TestBuildPairs:
    def test_camera_looking_away_gives_no_pair(self, scene):
        away = dataclasses.replace(
            scene.camera,
            gt_pose=dataclasses.replace(scene.camera.gt_pose))
        # Rotate the camera 180 degrees about its own vertical axis.
        import numpy as np
        flip = np.diag([-1.0, 1.0, -1.0])
        away = dataclasses.replace(
            scene.camera, gt_pose=type(scene.camera.gt_pose)(
                r=flip @ scene.camera.gt_pose.r,
                t=flip @ scene.camera.gt_pose.t))
        manifest = build_pairs([scene.face], [away], gml_path="g",
                               cameras_path="c")
        assert manifest.pairs == []

    def test_synth_scene_gives_exactly_one_pair(self, scene):
        manifest = build_pairs([scene.face], [scene.camera], gml_path="g",
                               cameras_path="c")
        assert len(manifest.pairs) == 1
        assert manifest.pairs[0].face_id == scene.face.face_id

    def test_three_cameras_two_with_overlap(self):
        from facadeloc.camera import Pose, so3_exp
        cams = []
        for yaw in (0.0, 30.0):
            sc = generate_scene(SceneConfig(seed=1, yaw_deg=yaw))
            cams.append(dataclasses.replace(sc.camera,
                                            image_path=f"view{yaw:g}.png"))
        # Third camera sits at the frontal position but pans 120 degrees
        # away from the facade.
        frontal = cams[0].gt_pose
        pan = so3_exp(np.radians(120.0) * np.array([0.0, 1.0, 0.0]))
        panned = Pose(r=pan @ frontal.r, t=pan @ frontal.t)
        cams.append(dataclasses.replace(cams[0], image_path="away.png",
                                        gt_pose=panned))
        face = generate_scene(SceneConfig(seed=1)).face
        manifest = build_pairs([face], cams, gml_path="g", cameras_path="c")
        assert [p.image_path for p in manifest.pairs] == ["view0.png",
                                                          "view30.png"]

    def test_overlap_against_shapely_oracle(self, rng):
        shapely = pytest.importorskip("shapely")
        from shapely.geometry import Polygon, box
        for _ in range(50):
            poly = rng.uniform(-200, 800, (4, 2))
            clipped = _clip_polygon_to_rect(poly, 640.0, 480.0)
            got = _polygon_area(clipped)
            sh = Polygon(poly)
            if not sh.is_valid:  # self-intersecting quad: S-H is undefined
                continue
            want = sh.intersection(box(0, 0, 640, 480)).area
            assert got == pytest.approx(want, abs=1e-6)

    def test_duplicate_pair_ids_disambiguated(self, scene):
        manifest = build_pairs([scene.face], [scene.camera] * 2,
                               gml_path="g", cameras_path="c")
        ids = [p.pair_id for p in manifest.pairs]
        assert len(set(ids)) == 2


class TestRunEvaluation:
    def test_gt_match_file_recovers_pose(self, scene_dir):
        report = run_evaluation(load_manifest(scene_dir / "manifest.json"))
        r = report.pair_results[0]
        assert not r.failure
        assert r.rot_err_deg < 1e-4
        assert r.trans_err_m < 1e-4
        assert r.num_inliers == r.num_matches
        assert r.method == "ground-truth"

    def test_builtin_matcher_on_frontal_scene(self, scene, tmp_path):
        manifest_path = write_scene(scene, tmp_path / "b", "builtin")
        report = run_evaluation(load_manifest(manifest_path))
        r = report.pair_results[0]
        assert not r.failure
        assert r.num_inliers >= 30
        assert r.rot_err_deg < 0.5
        assert r.trans_err_m < 0.01 * scene.config.standoff_m

    def test_zero_match_file_fails_gracefully(self, scene, tmp_path):
        manifest_path = write_scene(scene, tmp_path / "z", "empty.matchset.json")
        doc = matchset_to_dict(scene.gt_matches)
        doc["keypoints0"], doc["keypoints1"], doc["matches"] = [], [], []
        (tmp_path / "z" / "empty.matchset.json").write_text(json.dumps(doc))
        report = run_evaluation(load_manifest(manifest_path))
        r = report.pair_results[0]
        assert r.failure and r.num_matches == 0
        assert r.rot_err_deg == np.inf

    def test_resize_neutrality_with_gt_matches(self, scene_dir):
        manifest = load_manifest(scene_dir / "manifest.json")
        base = run_evaluation(manifest).pair_results[0]
        manifest.defaults = dataclasses.replace(manifest.defaults,
                                                resize_long_edge=256)
        resized = run_evaluation(manifest).pair_results[0]
        assert abs(base.rot_err_deg - resized.rot_err_deg) < 1e-9
        assert abs(base.trans_err_m - resized.trans_err_m) < 1e-9

    def test_reproducible_pairs_json(self, scene_dir):
        manifest = load_manifest(scene_dir / "manifest.json")
        a = run_evaluation(manifest)
        b = run_evaluation(manifest)
        from facadeloc.pipeline import pair_result_to_dict
        assert [pair_result_to_dict(r) for r in a.pair_results] \
            == [pair_result_to_dict(r) for r in b.pair_results]

    def test_failure_isolation(self, scene, tmp_path):
        root = tmp_path / "iso"
        write_scene(scene, root, "gt.matchset.json")
        (root / "broken.matchset.json").write_text("{not json")
        cameras_path = "cameras.json"
        manifest = PairManifest(
            pairs=[
                PairSpec(pair_id="good", gml_path="scene.gml",
                         face_id=scene.face.face_id, image_path="view.png",
                         match_source="gt.matchset.json"),
                PairSpec(pair_id="bad", gml_path="scene.gml",
                         face_id=scene.face.face_id, image_path="view.png",
                         match_source="broken.matchset.json"),
            ],
            cameras_path=cameras_path,
            defaults=RunDefaults(record_timing=False),
            base_dir=root)
        report = run_evaluation(manifest)
        by_id = {r.pair_id: r for r in report.pair_results}
        assert by_id["bad"].failure
        assert not by_id["good"].failure
        solo = run_evaluation(dataclasses.replace(
            manifest, pairs=[manifest.pairs[0]]))
        from facadeloc.pipeline import pair_result_to_dict
        assert pair_result_to_dict(by_id["good"]) \
            == pair_result_to_dict(solo.pair_results[0])

    def test_missing_file_aborts_before_work(self, scene_dir):
        manifest = load_manifest(scene_dir / "manifest.json")
        manifest.pairs = [dataclasses.replace(manifest.pairs[0],
                                              match_source="nope.json")]
        with pytest.raises(ManifestError, match="missing"):
            validate_manifest(manifest)
        with pytest.raises(ManifestError):
            run_evaluation(manifest)

    def test_parallel_jobs_match_serial(self, scene_dir):
        manifest = load_manifest(scene_dir / "manifest.json")
        serial = run_evaluation(manifest, jobs=1)
        parallel = run_evaluation(manifest, jobs=2)
        from facadeloc.pipeline import pair_result_to_dict
        assert [pair_result_to_dict(r) for r in serial.pair_results] \
            == [pair_result_to_dict(r) for r in parallel.pair_results]


class TestReports:
    def test_csv_roundtrip_to_printed_precision(self, scene_dir, tmp_path):
        report = run_evaluation(load_manifest(scene_dir / "manifest.json"))
        written = emit_report(report, tmp_path / "out")
        lines = written["csv"].read_text().strip().splitlines()
        header = lines[0].split(",")
        row = lines[1].split(",")
        values = dict(zip(header, row))
        srow = report.summary.rows[0]
        assert values["method"] == srow.method
        assert float(values["mInl"]) == pytest.approx(srow.mean_inliers,
                                                      rel=1e-5)
        assert float(values["mAA"]) == pytest.approx(
            srow.mean_average_accuracy, rel=1e-5)

    def test_two_method_rows_sorted(self, scene, tmp_path):
        root = tmp_path / "two"
        write_scene(scene, root, "gt.matchset.json")
        manifest = load_manifest(root / "manifest.json")
        manifest.pairs = [
            manifest.pairs[0],
            dataclasses.replace(manifest.pairs[0], pair_id="p2",
                                match_source="builtin"),
        ]
        report = run_evaluation(manifest)
        csv_text = summary_to_csv(report.summary)
        methods = [line.split(",")[0] for line in
                   csv_text.strip().splitlines()[1:]]
        assert methods == sorted(methods) == ["builtin", "ground-truth"]

    def test_report_json_roundtrip_reproduces_summary(self, scene_dir,
                                                      tmp_path):
        report = run_evaluation(load_manifest(scene_dir / "manifest.json"))
        written = emit_report(report, tmp_path / "o")
        reloaded = report_from_json(written["json"])
        assert summary_to_csv(reloaded.summary) \
            == summary_to_csv(report.summary)

    def test_csv_byte_stable_across_runs(self, scene_dir, tmp_path):
        manifest = load_manifest(scene_dir / "manifest.json")
        r1 = run_evaluation(manifest)
        r2 = run_evaluation(manifest)
        assert summary_to_csv(r1.summary) == summary_to_csv(r2.summary)

    def test_svg_written_and_deterministic(self, scene_dir, tmp_path):
        report = run_evaluation(load_manifest(scene_dir / "manifest.json"))
        w1 = emit_report(report, tmp_path / "s1")
        w2 = emit_report(report, tmp_path / "s2")
        svg = w1["svg"].read_text()
        assert svg.startswith("<svg") and "polyline" in svg
        assert svg == w2["svg"].read_text()


class TestManifestSerialization:
    def test_roundtrip(self, scene_dir):
        manifest = load_manifest(scene_dir / "manifest.json")
        again = manifest_from_dict(manifest_to_dict(manifest),
                                   base_dir=manifest.base_dir)
        assert manifest_to_dict(again) == manifest_to_dict(manifest)

    def test_duplicate_pair_ids_rejected(self, scene_dir):
        doc = manifest_to_dict(load_manifest(scene_dir / "manifest.json"))
        doc["pairs"] = doc["pairs"] * 2
        with pytest.raises(ManifestError, match="duplicate"):
            manifest_from_dict(doc)

    def test_wrong_schema_rejected(self):
        with pytest.raises(ManifestError, match="schema"):
            manifest_from_dict({"schema": "nope/1"})


class TestCli:
    def test_synth_run_report_flow(self, tmp_path, capsys):
        assert main(["synth", "--out", str(tmp_path / "s"), "--seed", "7"]) == 0
        assert main(["run", str(tmp_path / "s" / "manifest.json"),
                     "--out", str(tmp_path / "r"), "--no-timing"]) == 0
        assert (tmp_path / "r" / "summary.csv").is_file()
        assert main(["report", str(tmp_path / "r" / "report.json"),
                     "--out", str(tmp_path / "r2")]) == 0
        assert (tmp_path / "r2" / "summary.csv").read_bytes() \
            == (tmp_path / "r" / "summary.csv").read_bytes()

    def test_run_missing_manifest_is_validation_error(self, tmp_path, capsys):
        rc = main(["run", str(tmp_path / "nope.json"),
                   "--out", str(tmp_path / "o")])
        assert rc == 1

    def test_config_overrides_defaults(self, tmp_path, scene, capsys):
        root = tmp_path / "s"
        write_scene(scene, root, "gt.matchset.json")
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"ransac": {"threshold_px": 2.0},
                                   "record_timing": False}))
        assert main(["run", str(root / "manifest.json"),
                     "--out", str(tmp_path / "o"),
                     "--config", str(cfg)]) == 0
        report = json.loads((tmp_path / "o" / "report.json").read_text())
        assert report["pairs"][0]["runtime_s"] == 0.0

    def test_ransac_threshold_flag(self, tmp_path, scene, capsys):
        root = tmp_path / "s"
        write_scene(scene, root, "gt.matchset.json")
        corrupted, _ = corrupt_matches(scene.gt_matches, 0.3, 1.0, seed=4)
        save_matchset(corrupted, root / "gt.matchset.json")
        assert main(["run", str(root / "manifest.json"),
                     "--out", str(tmp_path / "o"),
                     "--ransac-threshold", "10"]) == 0
        report = json.loads((tmp_path / "o" / "report.json").read_text())
        assert report["pairs"][0]["num_inliers"] > 0
