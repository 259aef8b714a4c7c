"""Texture pixels to world coordinates through a face-aligned basis.

A textured face carries the same polygon in two parameterizations: the
st-ring in texture space and the world ring in metric ENU. Pixel
coordinates convert to st-space (s = u/width, t = 1 - v/height), are
expressed in a 2D basis spanned by two ring edges, and the same
coefficients scale the matching 3D edge vectors:

    x_b = A^-1 (x_s - x0_s),  A = [b1 b2]
    x_w = x0_w + x_b[0] * w1 + x_b[1] * w2

The map is affine, so results always lie on the plane spanned by (w1, w2);
st values outside [0, 1] transform without clamping (textures that do not
cover the full image extent stay usable).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gml_ingest import TexturedFace

DET_EPS = 1e-12
PLANARITY_TOL_M = 0.05

# Detector keypoints are pixel-index coordinates (center of pixel (0,0) is
# (0.0, 0.0)); the continuous domain of the st conversion is
# [0, width] x [0, height], so sampling positions sit half a pixel up-left.
PIXEL_CENTER_OFFSET = 0.5


class DegenerateFaceError(ValueError):
    """No vertex triple of the face spans an invertible basis."""


@dataclass(frozen=True)
class FaceBasis:
    """Precomputed conversion basis for one face.

    ``triple`` records which ring vertices (always starting at 0) were used;
    the first three are taken unless degenerate.
    """

    origin_st: np.ndarray
    origin_world: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    a_inv: np.ndarray
    triple: tuple[int, int, int]


def pixel_to_st(p, width: float, height: float) -> np.ndarray:
    """Continuous pixel (u right, v down, origin top-left) to (s, t)."""
    if width <= 0 or height <= 0:
        raise ValueError(f"image dimensions must be positive, got {width}x{height}")
    p = np.asarray(p, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise ValueError("non-finite pixel coordinates")
    s = p[..., 0] / width
    t = 1.0 - p[..., 1] / height
    return np.stack([s, t], axis=-1)


def st_to_pixel(st, width: float, height: float) -> np.ndarray:
    """Inverse of pixel_to_st."""
    st = np.asarray(st, dtype=np.float64)
    u = st[..., 0] * width
    v = (1.0 - st[..., 1]) * height
    return np.stack([u, v], axis=-1)


def build_face_basis(face: TexturedFace) -> FaceBasis:
    """Construct the face-aligned basis from the first usable vertex triple.

    Scans triples (0, j, k) in ring order and takes the first whose st edges
    are linearly independent (|det A| > 1e-12) and whose world edges are not
    parallel. Real rings contain collinear vertices, so falling back past
    (0, 1, 2) is routine, not exceptional.
    """
    st = face.st_ring
    world = face.world_ring
    n = len(st)
    origin_st = st[0]
    origin_world = world[0]
    for j in range(1, n - 1):
        for k in range(j + 1, n):
            b1 = st[j] - origin_st
            b2 = st[k] - origin_st
            a = np.array([[b1[0], b2[0]], [b1[1], b2[1]]])
            det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
            if abs(det) <= DET_EPS:
                continue
            w1 = world[j] - origin_world
            w2 = world[k] - origin_world
            if np.linalg.norm(np.cross(w1, w2)) <= DET_EPS:
                continue
            a_inv = np.array([[a[1, 1], -a[0, 1]], [-a[1, 0], a[0, 0]]]) / det
            return FaceBasis(
                origin_st=origin_st, origin_world=origin_world,
                b1=b1, b2=b2, w1=w1, w2=w2, a_inv=a_inv, triple=(0, j, k))
    raise DegenerateFaceError(
        f"face {face.face_id}: every vertex triple is degenerate "
        "(collinear st or world vertices)")


def st_to_world(p, basis: FaceBasis) -> np.ndarray:
    """Map st coordinates onto the face plane in world coordinates."""
    p = np.asarray(p, dtype=np.float64)
    xb = (p - basis.origin_st) @ basis.a_inv.T
    return (basis.origin_world
            + xb[..., :1] * basis.w1
            + xb[..., 1:2] * basis.w2)


def pixel_to_world(p, face: TexturedFace, basis: FaceBasis | None = None) -> np.ndarray:
    """Compose pixel -> st -> world for one face."""
    if not face.has_image_dims:
        raise ValueError(
            f"face {face.face_id}: image dimensions unresolved; "
            "run filter_faces against an image store first")
    if basis is None:
        basis = build_face_basis(face)
    st = pixel_to_st(p, face.image_width, face.image_height)
    return st_to_world(st, basis)


def keypoints_to_world(xy, face: TexturedFace, basis: FaceBasis | None = None) -> np.ndarray:
    """pixel_to_world for detector keypoints (pixel-index convention)."""
    xy = np.asarray(xy, dtype=np.float64)
    return pixel_to_world(xy + PIXEL_CENTER_OFFSET, face, basis)


def st_inside_ring(st, ring: np.ndarray) -> np.ndarray:
    """Even-odd point-in-polygon test in st space.

    Matched pixels can fall outside the textured polygon (texture margins);
    they still transform, but callers may want to tag or drop them.
    """
    st = np.atleast_2d(np.asarray(st, dtype=np.float64))
    x, y = st[..., 0], st[..., 1]
    inside = np.zeros(st.shape[:-1], dtype=bool)
    n = len(ring)
    for i in range(n):
        x0, y0 = ring[i]
        x1, y1 = ring[(i + 1) % n]
        crosses = (y0 > y) != (y1 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_at = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (x < np.where(crosses, x_at, np.inf))
    return inside


@dataclass(frozen=True)
class FaceDiagnostics:
    """Per-face consistency report: non-affine texturing and non-planarity
    surface here instead of crashing the pipeline."""

    max_vertex_roundtrip_m: float
    planarity_residual_m: float
    planar: bool


def face_diagnostics(
    face: TexturedFace,
    basis: FaceBasis | None = None,
    planarity_tol_m: float = PLANARITY_TOL_M,
) -> FaceDiagnostics:
    """Check that every ring vertex round-trips through the affine map and
    measure how far the world ring deviates from its best-fit plane."""
    if basis is None:
        basis = build_face_basis(face)
    mapped = st_to_world(face.st_ring, basis)
    roundtrip = float(np.max(np.linalg.norm(mapped - face.world_ring, axis=1)))

    centered = face.world_ring - face.world_ring.mean(axis=0)
    # Smallest right singular vector = plane normal; residual = max offset.
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    residual = float(np.max(np.abs(centered @ vt[-1])))
    return FaceDiagnostics(
        max_vertex_roundtrip_m=roundtrip,
        planarity_residual_m=residual,
        planar=residual <= planarity_tol_m,
    )
