"""CityGML LoD2 appearance ingestion.

Extracts textured faces from CityGML documents: the texture image URI, the
st-coordinate ring (``textureCoordinates`` of a ``TexCoordList``) and the
world-coordinate ring (``posList`` of a ``LinearRing``), matched by ring id.
Only this pragmatic subset of the standard is supported; documents are
matched on local element names so CityGML 1.0/2.0 namespace variants parse
alike.

World coordinates are taken verbatim (E, N, U in meters); no reprojection
happens here. An optional constant vertical offset can be applied at ingest
for datasets whose height datum differs from the model's.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

CLOSING_VERTEX_TOL = 1e-9


class GmlParseError(ValueError):
    """Malformed XML or structurally unusable CityGML content."""

    def __init__(self, message, line=None, column=None):
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)
        self.line = line
        self.column = column


@dataclass(frozen=True)
class IngestWarning:
    """Non-fatal per-face problem recorded during parsing or filtering."""

    face_id: str | None
    message: str


@dataclass(frozen=True, eq=False)
class TexturedFace:
    """One planar model face with its texture reference and both rings.

    ``st_ring`` and ``world_ring`` correspond vertex-by-vertex (open rings,
    closing vertex removed). Image dimensions are 0 until resolved against
    an image store; geometry operations require them only when converting
    pixel coordinates.
    """

    face_id: str
    texture_path: str
    st_ring: np.ndarray
    world_ring: np.ndarray
    image_width: int = 0
    image_height: int = 0

    def __post_init__(self):
        st = np.ascontiguousarray(np.asarray(self.st_ring, dtype=np.float64))
        world = np.ascontiguousarray(np.asarray(self.world_ring, dtype=np.float64))
        if st.ndim != 2 or st.shape[1] != 2:
            raise ValueError(f"face {self.face_id}: st_ring must be (N, 2)")
        if world.ndim != 2 or world.shape[1] != 3:
            raise ValueError(f"face {self.face_id}: world_ring must be (N, 3)")
        if len(st) != len(world):
            raise ValueError(
                f"face {self.face_id}: ring length mismatch "
                f"({len(st)} st vs {len(world)} world)"
            )
        if len(st) < 3:
            raise ValueError(f"face {self.face_id}: rings need >= 3 vertices")
        if not (np.all(np.isfinite(st)) and np.all(np.isfinite(world))):
            raise ValueError(f"face {self.face_id}: non-finite ring coordinates")
        if self.image_width < 0 or self.image_height < 0:
            raise ValueError(f"face {self.face_id}: negative image dimensions")
        st.setflags(write=False)
        world.setflags(write=False)
        object.__setattr__(self, "st_ring", st)
        object.__setattr__(self, "world_ring", world)

    @property
    def has_image_dims(self):
        return self.image_width > 0 and self.image_height > 0


@dataclass(frozen=True)
class FilterPolicy:
    """Quality thresholds for texture images attached to faces."""

    min_width: int = 64
    min_height: int = 64
    max_nodata_fraction: float = 0.5

    def __post_init__(self):
        if self.min_width < 1 or self.min_height < 1:
            raise ValueError("min_width and min_height must be >= 1")
        if not 0.0 <= self.max_nodata_fraction <= 1.0:
            raise ValueError("max_nodata_fraction must be in [0, 1]")


@dataclass
class ParseResult:
    faces: list[TexturedFace] = field(default_factory=list)
    warnings: list[IngestWarning] = field(default_factory=list)


class ImageStore:
    """Resolves texture paths to rasters, dimensions and no-data fractions.

    A pixel counts as no-data when it is fully transparent, or exactly black
    in images without an alpha channel (``nodata_rule='alpha_or_black'``,
    the common texture-atlas convention).
    """

    def __init__(self, root: str | Path = ".", nodata_rule: str = "alpha_or_black"):
        if nodata_rule not in ("alpha_or_black", "alpha", "black", "none"):
            raise ValueError(f"unknown nodata_rule {nodata_rule!r}")
        self.root = Path(root)
        self.nodata_rule = nodata_rule
        self._cache: dict[str, tuple[int, int, float]] = {}

    def resolve(self, texture_path: str) -> Path:
        p = Path(texture_path)
        return p if p.is_absolute() else self.root / p

    def load_gray(self, texture_path: str) -> np.ndarray:
        """Texture as float32 grayscale in [0, 255], (H, W)."""
        with Image.open(self.resolve(texture_path)) as im:
            return np.asarray(im.convert("L"), dtype=np.float32)

    def stats(self, texture_path: str) -> tuple[int, int, float]:
        """(width, height, nodata_fraction) for a texture image."""
        if texture_path in self._cache:
            return self._cache[texture_path]
        with Image.open(self.resolve(texture_path)) as im:
            width, height = im.size
            arr = np.asarray(im)
        nodata = self._nodata_fraction(arr, im_mode_has_alpha="A" in im.getbands())
        self._cache[texture_path] = (width, height, nodata)
        return width, height, nodata

    def _nodata_fraction(self, arr: np.ndarray, im_mode_has_alpha: bool) -> float:
        if self.nodata_rule == "none":
            return 0.0
        if im_mode_has_alpha and self.nodata_rule in ("alpha_or_black", "alpha"):
            alpha = arr[..., -1]
            return float(np.mean(alpha == 0))
        if self.nodata_rule in ("alpha_or_black", "black"):
            rgb = arr if arr.ndim == 2 else arr[..., :3]
            black = rgb == 0 if rgb.ndim == 2 else np.all(rgb == 0, axis=-1)
            return float(np.mean(black))
        return 0.0


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _find_id(elem: ET.Element) -> str | None:
    for key, value in elem.attrib.items():
        if _local(key) == "id":
            return value
    return None


def _parse_floats(text: str | None) -> np.ndarray:
    if not text or not text.strip():
        return np.empty(0)
    return np.asarray([float(tok) for tok in text.split()], dtype=np.float64)


def _drop_closing_vertex(ring: np.ndarray) -> np.ndarray:
    if len(ring) >= 2 and np.all(np.abs(ring[-1] - ring[0]) <= CLOSING_VERTEX_TOL):
        return ring[:-1]
    return ring


def parse_citygml(
    document: bytes | str,
    delta_u: float = 0.0,
) -> ParseResult:
    """Extract textured faces from a CityGML document.

    A face is produced for every ParameterizedTexture target whose ring
    geometry resolves and whose st/world rings agree in length. Ring order
    is preserved; a closing vertex (duplicate of the first, within 1e-9) is
    dropped. ``delta_u`` is added to every Up coordinate (datum offset).

    Raises GmlParseError for malformed XML; structural problems on single
    faces become IngestWarning records instead.
    """
    if isinstance(document, str):
        document = document.encode("utf-8")
    try:
        root = ET.fromstring(document)
    except ET.ParseError as exc:
        line, column = exc.position
        raise GmlParseError(f"malformed XML: {exc.msg}", line, column) from exc

    result = ParseResult()

    # Ring geometry indexed by polygon id and by ring id.
    rings: dict[str, tuple[str, np.ndarray, bool]] = {}
    for poly in root.iter():
        if _local(poly.tag) != "Polygon":
            continue
        poly_id = _find_id(poly)
        has_interior = any(
            _local(child.tag) == "interior" for child in poly
        )
        for child in poly:
            if _local(child.tag) != "exterior":
                continue
            for ring_elem in child:
                if _local(ring_elem.tag) != "LinearRing":
                    continue
                ring_id = _find_id(ring_elem)
                pos = None
                for pl in ring_elem:
                    if _local(pl.tag) == "posList":
                        pos = _parse_floats(pl.text)
                if pos is None or pos.size == 0 or pos.size % 3 != 0:
                    result.warnings.append(IngestWarning(
                        poly_id or ring_id,
                        "exterior ring without a 3D posList; skipped"))
                    continue
                coords = pos.reshape(-1, 3)
                entry = (poly_id or ring_id or "", coords, has_interior)
                for key in (poly_id, ring_id):
                    if key:
                        rings[key] = entry

    # Appearance side: one face per resolvable textureCoordinates entry.
    for tex in root.iter():
        if _local(tex.tag) != "ParameterizedTexture":
            continue
        image_uri = None
        for child in tex.iter():
            if _local(child.tag) == "imageURI":
                image_uri = (child.text or "").strip()
                break
        if not image_uri:
            result.warnings.append(IngestWarning(
                None, "ParameterizedTexture without imageURI; skipped"))
            continue
        for target in tex:
            if _local(target.tag) != "target":
                continue
            target_uri = target.attrib.get("uri", "").lstrip("#")
            for tc in target.iter():
                if _local(tc.tag) != "textureCoordinates":
                    continue
                ring_ref = tc.attrib.get("ring", "").lstrip("#") or target_uri
                entry = rings.get(ring_ref) or rings.get(target_uri)
                if entry is None:
                    result.warnings.append(IngestWarning(
                        ring_ref or None,
                        f"texture {image_uri!r} references missing ring "
                        f"{ring_ref!r}; face skipped"))
                    continue
                face_id, world, has_interior = entry
                if has_interior:
                    result.warnings.append(IngestWarning(
                        face_id,
                        "polygon has interior rings (holes); face skipped"))
                    continue
                flat = _parse_floats(tc.text)
                if flat.size == 0 or flat.size % 2 != 0:
                    result.warnings.append(IngestWarning(
                        face_id, "unreadable textureCoordinates; face skipped"))
                    continue
                st = _drop_closing_vertex(flat.reshape(-1, 2))
                world_open = _drop_closing_vertex(world)
                if len(st) != len(world_open):
                    result.warnings.append(IngestWarning(
                        face_id,
                        f"st ring has {len(st)} vertices but world ring has "
                        f"{len(world_open)}; face skipped"))
                    continue
                if len(st) < 3:
                    result.warnings.append(IngestWarning(
                        face_id, "ring has fewer than 3 vertices; face skipped"))
                    continue
                if delta_u != 0.0:
                    world_open = world_open + np.array([0.0, 0.0, delta_u])
                result.faces.append(TexturedFace(
                    face_id=face_id or f"face-{len(result.faces)}",
                    texture_path=image_uri,
                    st_ring=st,
                    world_ring=world_open,
                ))
    return result


def filter_faces(
    faces: list[TexturedFace],
    policy: FilterPolicy,
    images: ImageStore,
) -> tuple[list[TexturedFace], list[IngestWarning]]:
    """Apply the texture-quality policy; returns surviving faces with their
    image dimensions resolved from the store.

    Order is preserved and the operation is idempotent. Unreadable images
    exclude the face with a warning instead of failing the run.
    """
    kept: list[TexturedFace] = []
    warnings: list[IngestWarning] = []
    for face in faces:
        try:
            width, height, nodata = images.stats(face.texture_path)
        except (OSError, ValueError) as exc:
            warnings.append(IngestWarning(
                face.face_id,
                f"unreadable texture {face.texture_path!r}: {exc}"))
            continue
        if width < policy.min_width or height < policy.min_height:
            continue
        if nodata > policy.max_nodata_fraction:
            continue
        kept.append(replace(face, image_width=width, image_height=height))
    return kept, warnings


def to_citygml(faces: list[TexturedFace], *, building_id: str = "building-0") -> bytes:
    """Serialize faces to a minimal CityGML document that parse_citygml
    round-trips at full float precision.

    Rings are written closed (first vertex repeated), matching GML
    convention; parsing opens them again.
    """
    def fmt(values):
        return " ".join(repr(float(v)) for v in values)

    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        '<core:CityModel xmlns:core="http://www.opengis.net/citygml/2.0"',
        ' xmlns:bldg="http://www.opengis.net/citygml/building/2.0"',
        ' xmlns:app="http://www.opengis.net/citygml/appearance/2.0"',
        ' xmlns:gml="http://www.opengis.net/gml">',
        ' <core:cityObjectMember>',
        f'  <bldg:Building gml:id="{building_id}">',
    ]
    for face in faces:
        closed_world = np.vstack([face.world_ring, face.world_ring[:1]])
        lines += [
            '   <bldg:boundedBy><bldg:WallSurface>',
            '    <bldg:lod2MultiSurface><gml:MultiSurface><gml:surfaceMember>',
            f'     <gml:Polygon gml:id="{face.face_id}">',
            f'      <gml:exterior><gml:LinearRing gml:id="{face.face_id}-ring">',
            f'       <gml:posList>{fmt(closed_world.ravel())}</gml:posList>',
            '      </gml:LinearRing></gml:exterior>',
            '     </gml:Polygon>',
            '    </gml:surfaceMember></gml:MultiSurface></bldg:lod2MultiSurface>',
            '   </bldg:WallSurface></bldg:boundedBy>',
        ]
    lines += [
        '  </bldg:Building>',
        ' </core:cityObjectMember>',
        ' <core:appearanceMember><app:Appearance>',
        '  <app:theme>rgbTexture</app:theme>',
    ]
    for face in faces:
        closed_st = np.vstack([face.st_ring, face.st_ring[:1]])
        lines += [
            '  <app:surfaceDataMember><app:ParameterizedTexture>',
            f'   <app:imageURI>{face.texture_path}</app:imageURI>',
            f'   <app:target uri="#{face.face_id}">',
            '    <app:TexCoordList>',
            f'     <app:textureCoordinates ring="#{face.face_id}-ring">'
            f'{fmt(closed_st.ravel())}</app:textureCoordinates>',
            '    </app:TexCoordList>',
            '   </app:target>',
            '  </app:ParameterizedTexture></app:surfaceDataMember>',
        ]
    lines += [' </app:Appearance></core:appearanceMember>',
              '</core:CityModel>', '']
    return "\n".join(lines).encode("utf-8")


def faces_to_dict(faces, warnings=(), source_gml: str | None = None) -> dict:
    """Faces manifest (``faces/1`` schema) as a JSON-ready dict."""
    return {
        "schema": "faces/1",
        "source_gml": source_gml,
        "faces": [
            {
                "face_id": f.face_id,
                "texture_path": f.texture_path,
                "image_width": f.image_width,
                "image_height": f.image_height,
                "st_ring": f.st_ring.tolist(),
                "world_ring": f.world_ring.tolist(),
            }
            for f in faces
        ],
        "warnings": [
            {"face_id": w.face_id, "message": w.message} for w in warnings
        ],
    }


def faces_from_dict(data: dict) -> list[TexturedFace]:
    if data.get("schema") != "faces/1":
        raise GmlParseError(f"not a faces/1 manifest: schema={data.get('schema')!r}")
    return [
        TexturedFace(
            face_id=f["face_id"],
            texture_path=f["texture_path"],
            st_ring=np.asarray(f["st_ring"], dtype=np.float64),
            world_ring=np.asarray(f["world_ring"], dtype=np.float64),
            image_width=int(f.get("image_width", 0)),
            image_height=int(f.get("image_height", 0)),
        )
        for f in data["faces"]
    ]
