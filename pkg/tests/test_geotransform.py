import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from facadeloc.geotransform import (
    DegenerateFaceError,
    build_face_basis,
    face_diagnostics,
    pixel_to_st,
    pixel_to_world,
    st_inside_ring,
    st_to_pixel,
    st_to_world,
)
from facadeloc.gml_ingest import TexturedFace

# Unit-square face: s spans easting 100..110, t spans height 10..15.
UNIT_SQUARE = TexturedFace(
    face_id="unit", texture_path="t.png",
    st_ring=[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
    world_ring=[[100.0, 200.0, 10.0], [110.0, 200.0, 10.0],
                [110.0, 200.0, 15.0], [100.0, 200.0, 15.0]],
    image_width=400, image_height=300)


def oracle_st_to_world(st, face):
    """Independent check: solve st = x0 + a*b1 + b*b2 by least squares and
    scale the world edge vectors with the same coefficients."""
    b1 = face.st_ring[1] - face.st_ring[0]
    b2 = face.st_ring[2] - face.st_ring[0]
    w1 = face.world_ring[1] - face.world_ring[0]
    w2 = face.world_ring[2] - face.world_ring[0]
    ab, *_ = np.linalg.lstsq(np.stack([b1, b2], axis=1),
                             np.asarray(st) - face.st_ring[0], rcond=None)
    return face.world_ring[0] + ab[0] * w1 + ab[1] * w2


class TestPixelToSt:
    def test_lower_left_corner_is_st_origin(self):
        np.testing.assert_allclose(pixel_to_st([0.0, 300.0], 400, 300), [0, 0])

    def test_upper_right_corner(self):
        np.testing.assert_allclose(pixel_to_st([400.0, 0.0], 400, 300), [1, 1])

    def test_center_by_linearity(self):
        np.testing.assert_allclose(pixel_to_st([200.0, 150.0], 400, 300),
                                   [0.5, 0.5])

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            pixel_to_st([np.nan, 0.0], 400, 300)

    def test_rejects_zero_dims(self):
        with pytest.raises(ValueError):
            pixel_to_st([1.0, 1.0], 0, 300)

    def test_inverse(self):
        p = np.array([123.25, 47.5])
        np.testing.assert_allclose(
            st_to_pixel(pixel_to_st(p, 400, 300), 400, 300), p)


class TestBuildFaceBasis:
    def test_unit_square_edges(self):
        basis = build_face_basis(UNIT_SQUARE)
        assert basis.triple == (0, 1, 2)
        np.testing.assert_array_equal(basis.b1, [1, 0])
        np.testing.assert_array_equal(basis.b2, [1, 1])
        np.testing.assert_array_equal(basis.w1, [10, 0, 0])
        np.testing.assert_array_equal(basis.w2, [10, 0, 5])

    def test_collinear_first_triple_falls_back(self):
        face = TexturedFace(
            face_id="collinear", texture_path="t.png",
            st_ring=[[0.0, 0.0], [0.5, 0.0], [1.0, 0.0], [1.0, 1.0]],
            world_ring=[[0.0, 0.0, 0.0], [5.0, 0.0, 0.0], [10.0, 0.0, 0.0],
                        [10.0, 0.0, 7.0]],
            image_width=10, image_height=10)
        basis = build_face_basis(face)
        assert basis.triple == (0, 1, 3)

    def test_identical_st_vertices_error(self):
        with pytest.raises(DegenerateFaceError, match="degenerate"):
            build_face_basis(TexturedFace(
                face_id="zero", texture_path="t.png",
                st_ring=[[0.2, 0.2]] * 3,
                world_ring=[[0, 0, 0], [1, 0, 0], [0, 1, 0]],
                image_width=10, image_height=10))


class TestStToWorld:
    def test_origin_maps_to_origin(self):
        basis = build_face_basis(UNIT_SQUARE)
        np.testing.assert_allclose(st_to_world([0.0, 0.0], basis),
                                   [100, 200, 10])

    def test_basis_vertex_maps_to_world_twin(self):
        basis = build_face_basis(UNIT_SQUARE)
        np.testing.assert_allclose(st_to_world(UNIT_SQUARE.st_ring[1], basis),
                                   UNIT_SQUARE.world_ring[1])

    def test_center_against_plane_parameterization_oracle(self):
        basis = build_face_basis(UNIT_SQUARE)
        got = st_to_world([0.5, 0.5], basis)
        np.testing.assert_allclose(got, oracle_st_to_world([0.5, 0.5],
                                                           UNIT_SQUARE))
        # Geometric center of the axis-aligned face, by direct substitution
        # into the conversion equations.
        np.testing.assert_allclose(got, [105.0, 200.0, 12.5])

    def test_random_points_match_oracle(self, rng):
        basis = build_face_basis(UNIT_SQUARE)
        pts = rng.uniform(-0.5, 1.5, size=(10, 2))
        got = st_to_world(pts, basis)
        want = np.array([oracle_st_to_world(p, UNIT_SQUARE) for p in pts])
        np.testing.assert_allclose(got, want, atol=1e-9)


class TestPixelToWorld:
    def test_vertex_identity(self):
        basis = build_face_basis(UNIT_SQUARE)
        pix = st_to_pixel(UNIT_SQUARE.st_ring[2], 400, 300)
        got = pixel_to_world(pix, UNIT_SQUARE, basis)
        np.testing.assert_allclose(got, UNIT_SQUARE.world_ring[2], atol=1e-9)

    def test_output_on_face_plane(self, rng):
        pts = np.stack([rng.uniform(0, 400, 50), rng.uniform(0, 300, 50)], 1)
        world = pixel_to_world(pts, UNIT_SQUARE)
        ring = UNIT_SQUARE.world_ring
        normal = np.cross(ring[1] - ring[0], ring[3] - ring[0])
        normal = normal / np.linalg.norm(normal)
        dist = (world - ring[0]) @ normal
        assert np.abs(dist).max() < 1e-9

    def test_random_pixels_match_linear_solve_oracle(self, rng):
        pts = np.stack([rng.uniform(0, 400, 10), rng.uniform(0, 300, 10)], 1)
        got = pixel_to_world(pts, UNIT_SQUARE)
        st = pixel_to_st(pts, 400, 300)
        want = np.array([oracle_st_to_world(p, UNIT_SQUARE) for p in st])
        np.testing.assert_allclose(got, want, atol=1e-9)

    def test_requires_image_dims(self):
        face = TexturedFace(
            face_id="nodims", texture_path="t.png",
            st_ring=UNIT_SQUARE.st_ring, world_ring=UNIT_SQUARE.world_ring)
        with pytest.raises(ValueError, match="unresolved"):
            pixel_to_world([1.0, 1.0], face)

    def test_out_of_polygon_pixels_transform_without_clamping(self):
        # Texture margins: st outside [0,1] keeps the affine extension.
        basis = build_face_basis(UNIT_SQUARE)
        got = st_to_world([1.5, -0.5], basis)
        np.testing.assert_allclose(got, oracle_st_to_world([1.5, -0.5],
                                                           UNIT_SQUARE))
        assert not np.allclose(got, np.clip(got, [100, 200, 10],
                                            [110, 200, 15]))


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1), st.floats(0, 400), st.floats(0, 300),
       st.floats(0, 400), st.floats(0, 300))
def test_affine_consistency(lam, px, py, qx, qy):
    basis = build_face_basis(UNIT_SQUARE)
    p = np.array([px, py])
    q = np.array([qx, qy])
    mix = pixel_to_world(lam * p + (1 - lam) * q, UNIT_SQUARE, basis)
    blend = (lam * pixel_to_world(p, UNIT_SQUARE, basis)
             + (1 - lam) * pixel_to_world(q, UNIT_SQUARE, basis))
    np.testing.assert_allclose(mix, blend, atol=1e-9)


def make_affine_face(rng, n_vertices=5):
    """Random planar face whose st/world rings are consistent affine images
    of shared parameters, so every vertex must round-trip exactly."""
    origin = rng.uniform(-500, 500, 3)
    q = np.linalg.qr(rng.normal(size=(3, 3)))[0]
    u3, v3 = q[:, 0] * rng.uniform(1, 30), q[:, 1] * rng.uniform(1, 30)
    while True:
        a = rng.uniform(-2, 2, (2, 2))
        if abs(np.linalg.det(a)) > 0.1:
            break
    shift = rng.uniform(-1, 1, 2)
    ang = rng.uniform(0, 2 * np.pi, n_vertices)
    ang.sort()
    params = np.stack([np.cos(ang), np.sin(ang)], 1) * rng.uniform(0.5, 1.0)
    world = origin + params @ np.stack([u3, v3])
    stv = params @ a.T + shift
    return TexturedFace(face_id="rand", texture_path="t.png", st_ring=stv,
                        world_ring=world, image_width=640, image_height=480)


def test_all_ring_vertices_roundtrip(rng):
    for _ in range(25):
        face = make_affine_face(rng, n_vertices=int(rng.integers(3, 9)))
        basis = build_face_basis(face)
        mapped = st_to_world(face.st_ring, basis)
        err = np.linalg.norm(mapped - face.world_ring, axis=1)
        assert err.max() < 1e-9


class TestFaceDiagnostics:
    def test_consistent_face_is_clean(self):
        diag = face_diagnostics(UNIT_SQUARE)
        assert diag.max_vertex_roundtrip_m < 1e-9
        assert diag.planarity_residual_m < 1e-9
        assert diag.planar

    def test_non_affine_texturing_is_reported_not_raised(self):
        face = TexturedFace(
            face_id="warped", texture_path="t.png",
            st_ring=UNIT_SQUARE.st_ring,
            world_ring=[[100, 200, 10], [110, 200, 10], [110, 200, 15],
                        [101.5, 200, 15]],  # last vertex off the affine map
            image_width=400, image_height=300)
        diag = face_diagnostics(face)
        assert diag.max_vertex_roundtrip_m > 1.0

    def test_non_planar_ring_flagged(self):
        face = TexturedFace(
            face_id="bent", texture_path="t.png",
            st_ring=UNIT_SQUARE.st_ring,
            world_ring=[[0, 0, 0], [10, 0, 0], [10, 0.4, 5], [0, 0, 5]],
            image_width=400, image_height=300)
        diag = face_diagnostics(face, planarity_tol_m=0.05)
        assert not diag.planar


def test_st_inside_ring():
    ring = UNIT_SQUARE.st_ring
    inside = st_inside_ring([[0.5, 0.5], [1.5, 0.5], [-0.1, 0.2]], ring)
    np.testing.assert_array_equal(inside, [True, False, False])
