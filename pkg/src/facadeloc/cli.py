"""Command-line interface.

Subcommands:
  ingest  CityGML -> faces manifest JSON (parse + quality filter)
  synth   emit a synthetic fixture scene (texture, view, GML, cameras,
          ground-truth matches, ready-to-run manifest)
  pairs   faces JSON + cameras JSON -> pair manifest
  run     evaluate a pair manifest and write reports
  report  re-emit CSV/SVG from a previously written report.json

Exit codes: 0 success, 1 validation error (bad inputs/schemas/missing
files), 2 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import __version__
from .gml_ingest import (
    FilterPolicy,
    GmlParseError,
    ImageStore,
    faces_from_dict,
    faces_to_dict,
    filter_faces,
    parse_citygml,
)
from .matching import MatchSetError, save_matchset
from .pipeline import (
    BUILTIN_MATCHER,
    ManifestError,
    RunDefaults,
    build_pairs,
    emit_report,
    load_cameras,
    load_manifest,
    report_from_json,
    run_evaluation,
    save_cameras,
    save_manifest,
)
from .robust import RansacConfig
from .synth import SceneConfig, generate_scene, save_png


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON file with keyword overrides for this command")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", type=Path, required=True,
                        help="output directory")


def _load_config(path: Path | None) -> dict:
    if path is None:
        return {}
    return json.loads(path.read_text())


_KEEP = object()  # sentinel: keep the manifest's resize setting


def _resize_arg(value: str) -> int | None:
    if value.lower() == "off":
        return None
    px = int(value)
    if px <= 0:
        raise argparse.ArgumentTypeError("resize edge must be positive or 'off'")
    return px


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="facadeloc",
        description="Textured-building-model to camera-image matching "
                    "evaluation toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="parse CityGML into a faces manifest")
    p_ingest.add_argument("gml", type=Path)
    _add_common(p_ingest)
    p_ingest.add_argument("--min-size", type=int, default=64,
                          help="minimum texture width/height in px")
    p_ingest.add_argument("--max-nodata", type=float, default=0.5)
    p_ingest.add_argument("--delta-u", type=float, default=0.0,
                          help="constant height offset added at ingest [m]")
    p_ingest.add_argument("--no-filter", action="store_true",
                          help="keep all parsed faces (still resolves image dims)")

    p_synth = sub.add_parser("synth", help="emit a synthetic fixture scene")
    _add_common(p_synth)
    p_synth.add_argument("--yaw", type=float, default=0.0)
    p_synth.add_argument("--pitch", type=float, default=0.0)
    p_synth.add_argument("--standoff", type=float, default=14.0)
    p_synth.add_argument("--matcher", choices=["builtin", "file"],
                         default="file",
                         help="match source recorded in the manifest: the "
                              "builtin matcher or the emitted ground-truth file")

    p_pairs = sub.add_parser("pairs", help="build a pair manifest")
    p_pairs.add_argument("faces_json", type=Path)
    p_pairs.add_argument("cameras_json", type=Path)
    _add_common(p_pairs)
    p_pairs.add_argument("--min-overlap", type=float, default=0.05)
    p_pairs.add_argument("--matcher", default=BUILTIN_MATCHER,
                         help="'builtin' or a matchset file path template")

    p_run = sub.add_parser("run", help="run an evaluation")
    p_run.add_argument("manifest", type=Path)
    _add_common(p_run)
    p_run.add_argument("--ransac-threshold", type=float, default=None,
                       help="RANSAC inlier threshold in px (default from "
                            "manifest, 10 if unset)")
    p_run.add_argument("--resize-long-edge", type=_resize_arg, default=_KEEP,
                       help="resize images before matching (<px> or 'off'; "
                            "default: manifest setting)")
    p_run.add_argument("--jobs", type=int, default=1)
    p_run.add_argument("--no-timing", action="store_true",
                       help="record runtimes as 0 for byte-stable reports")

    p_report = sub.add_parser("report", help="re-emit outputs from report.json")
    p_report.add_argument("report_json", type=Path)
    _add_common(p_report)

    return parser


def _cmd_ingest(args) -> int:
    overrides = _load_config(args.config)
    result = parse_citygml(
        args.gml.read_bytes(),
        delta_u=overrides.get("delta_u", args.delta_u))
    store = ImageStore(root=args.gml.parent,
                       nodata_rule=overrides.get("nodata_rule",
                                                 "alpha_or_black"))
    if args.no_filter:
        policy = FilterPolicy(min_width=1, min_height=1, max_nodata_fraction=1.0)
    else:
        policy = FilterPolicy(
            min_width=overrides.get("min_width", args.min_size),
            min_height=overrides.get("min_height", args.min_size),
            max_nodata_fraction=overrides.get("max_nodata_fraction",
                                              args.max_nodata))
    faces, filter_warnings = filter_faces(result.faces, policy, store)
    doc = faces_to_dict(faces, result.warnings + filter_warnings,
                        source_gml=str(args.gml))
    args.out.mkdir(parents=True, exist_ok=True)
    out = args.out / "faces.json"
    out.write_text(json.dumps(doc, indent=1) + "\n")
    print(f"{len(faces)} faces kept ({len(result.faces) - len(faces)} filtered, "
          f"{len(doc['warnings'])} warnings) -> {out}")
    return 0


def _cmd_synth(args) -> int:
    overrides = _load_config(args.config)
    cfg = SceneConfig(**{
        "seed": args.seed if args.seed is not None else 42,
        "yaw_deg": args.yaw, "pitch_deg": args.pitch,
        "standoff_m": args.standoff, **overrides})
    scene = generate_scene(cfg)
    outdir = args.out
    outdir.mkdir(parents=True, exist_ok=True)
    save_png(scene.texture_image, outdir / "texture.png")
    save_png(scene.view_image, outdir / "view.png")
    (outdir / "scene.gml").write_bytes(scene.gml_document)
    save_cameras([scene.camera], outdir / "cameras.json")
    save_matchset(scene.gt_matches, outdir / "gt.matchset.json")
    match_source = ("gt.matchset.json" if args.matcher == "file"
                    else BUILTIN_MATCHER)
    manifest = build_pairs(
        [scene.face], [scene.camera], gml_path="scene.gml",
        cameras_path="cameras.json", match_source=match_source,
        defaults=RunDefaults(ransac=RansacConfig(seed=cfg.seed)))
    manifest.base_dir = outdir
    save_manifest(manifest, outdir / "manifest.json")
    print(f"scene written to {outdir} ({len(manifest.pairs)} pair(s), "
          f"matcher={match_source})")
    return 0


def _cmd_pairs(args) -> int:
    import os
    overrides = _load_config(args.config)
    data = json.loads(args.faces_json.read_text())
    faces = faces_from_dict(data)
    source_gml = data.get("source_gml") or ""
    # Paths inside a manifest resolve relative to the manifest file, so
    # re-anchor the inputs against the output directory.
    outdir = args.out.resolve()
    gml_path = os.path.relpath(Path(source_gml).resolve(), outdir) \
        if source_gml and not Path(source_gml).is_absolute() else source_gml
    cameras_path = os.path.relpath(args.cameras_json.resolve(), outdir)
    cameras = list(load_cameras(args.cameras_json).values())
    manifest = build_pairs(
        faces, cameras, gml_path=gml_path,
        cameras_path=cameras_path,
        min_overlap=overrides.get("min_overlap", args.min_overlap),
        match_source=overrides.get("match_source", args.matcher),
        defaults=RunDefaults(ransac=RansacConfig(seed=args.seed or 0)))
    args.out.mkdir(parents=True, exist_ok=True)
    out = args.out / "manifest.json"
    save_manifest(manifest, out)
    print(f"{len(manifest.pairs)} pairs -> {out}")
    return 0


def _cmd_run(args) -> int:
    from .pipeline import manifest_from_dict, manifest_to_dict

    manifest = load_manifest(args.manifest)
    overrides = _load_config(args.config)
    if overrides:
        # --config supplies defaults-section overrides (same keys as the
        # manifest's "defaults" block).
        doc = manifest_to_dict(manifest)
        for key, value in overrides.items():
            if isinstance(value, dict):
                doc["defaults"].setdefault(key, {}).update(value)
            else:
                doc["defaults"][key] = value
        manifest = manifest_from_dict(doc, base_dir=manifest.base_dir)
    defaults = manifest.defaults
    if args.ransac_threshold is not None:
        defaults = dataclasses.replace(
            defaults, ransac=dataclasses.replace(
                defaults.ransac, threshold_px=args.ransac_threshold))
    if args.seed is not None:
        defaults = dataclasses.replace(
            defaults, ransac=dataclasses.replace(defaults.ransac,
                                                 seed=args.seed))
    if args.resize_long_edge is not _KEEP:
        defaults = dataclasses.replace(defaults,
                                       resize_long_edge=args.resize_long_edge)
    if args.no_timing:
        defaults = dataclasses.replace(defaults, record_timing=False)
    manifest.defaults = defaults
    report = run_evaluation(manifest, jobs=args.jobs)
    written = emit_report(report, args.out)
    failures = sum(r.failure for r in report.pair_results)
    print(f"{len(report.pair_results)} pairs evaluated "
          f"({failures} failures) -> {written['csv']}")
    for row in report.summary.rows:
        print(f"  {row.method}: mInl={row.mean_inliers:.1f} "
              f"mAA={row.mean_average_accuracy:.3f}")
    return 0


def _cmd_report(args) -> int:
    report = report_from_json(args.report_json)
    written = emit_report(report, args.out)
    print(f"re-emitted {', '.join(str(p) for p in written.values())}")
    return 0


_COMMANDS = {
    "ingest": _cmd_ingest,
    "synth": _cmd_synth,
    "pairs": _cmd_pairs,
    "run": _cmd_run,
    "report": _cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ManifestError, GmlParseError, MatchSetError, FileNotFoundError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
