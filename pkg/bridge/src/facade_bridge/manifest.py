"""Readers for the core toolkit's external file formats.

The bridge consumes the primary toolkit only through these documented
interfaces: pairmanifest/1 (pair list), cameras/1 (camera image paths) and
the CityGML documents the manifest points at (texture image per face).
Only the pieces a matcher needs are read; no geometry is interpreted.
"""

from __future__ import annotations

import json
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from pathlib import Path


class BridgeInputError(ValueError):
    """Unusable manifest or referenced file."""


@dataclass(frozen=True)
class ImagePair:
    pair_id: str
    texture_path: Path
    camera_image_path: Path


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def texture_uris_from_gml(gml_path: Path) -> dict[str, str]:
    """face id -> texture imageURI, matched the way the core parser does:
    ParameterizedTexture targets referencing polygon or ring ids."""
    root = ET.fromstring(gml_path.read_bytes())
    ring_owner: dict[str, str] = {}
    for poly in root.iter():
        if _local(poly.tag) != "Polygon":
            continue
        poly_id = next((v for k, v in poly.attrib.items()
                        if _local(k) == "id"), None)
        if poly_id is None:
            continue
        ring_owner[poly_id] = poly_id
        for ring in poly.iter():
            if _local(ring.tag) == "LinearRing":
                ring_id = next((v for k, v in ring.attrib.items()
                                if _local(k) == "id"), None)
                if ring_id:
                    ring_owner[ring_id] = poly_id
    uris: dict[str, str] = {}
    for tex in root.iter():
        if _local(tex.tag) != "ParameterizedTexture":
            continue
        uri = None
        for child in tex.iter():
            if _local(child.tag) == "imageURI":
                uri = (child.text or "").strip()
                break
        if not uri:
            continue
        for target in tex:
            if _local(target.tag) != "target":
                continue
            ref = target.attrib.get("uri", "").lstrip("#")
            owner = ring_owner.get(ref)
            if owner:
                uris[owner] = uri
    return uris


def load_image_pairs(manifest_path: Path) -> list[ImagePair]:
    """Resolve each manifest pair to (texture image, camera image) files.

    Texture paths resolve relative to their GML file; camera image paths
    resolve relative to the cameras file that names them.
    """
    try:
        data = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise BridgeInputError(f"cannot read manifest: {exc}") from exc
    if data.get("schema") != "pairmanifest/1":
        raise BridgeInputError(
            f"not a pairmanifest/1 document: schema={data.get('schema')!r}")
    base = manifest_path.parent

    def resolve(p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else base / path

    cameras_file = resolve(data["cameras_path"])
    camera_dir = cameras_file.parent

    pairs: list[ImagePair] = []
    uri_cache: dict[Path, dict[str, str]] = {}
    for raw in data["pairs"]:
        gml_path = resolve(raw["gml_path"])
        if gml_path not in uri_cache:
            uri_cache[gml_path] = texture_uris_from_gml(gml_path)
        uri = uri_cache[gml_path].get(raw["face_id"])
        if uri is None:
            raise BridgeInputError(
                f"pair {raw['pair_id']}: face {raw['face_id']!r} has no "
                f"texture in {gml_path}")
        tex = Path(uri)
        tex = tex if tex.is_absolute() else gml_path.parent / tex
        cam = Path(raw["image_path"])
        cam = cam if cam.is_absolute() else camera_dir / cam
        pairs.append(ImagePair(pair_id=raw["pair_id"], texture_path=tex,
                               camera_image_path=cam))
    return pairs
