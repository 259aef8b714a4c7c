"""Synthetic planar-facade scenes with exact ground truth.

A scene bundles a procedurally textured facade (plus its CityGML document),
a pinhole camera with known pose, the camera view rendered through the
plane-induced homography, and exact texture-to-view correspondences. Every
piece is derived from the same closed-form geometry, so the defining
consistency holds by construction:

    project(pixel_to_world(p), gt_pose, K) == plane_homography * p

for texture pixels p inside the polygon. Scenes make the full matching and
pose-estimation pipeline verifiable at desk scale, without any proprietary
survey data.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, replace

import numpy as np
from PIL import Image
from scipy import ndimage

from .camera import CameraRecord, Intrinsics, Pose
from .gml_ingest import TexturedFace, to_citygml
from .matching import ImageRef, MatchSet
from .robust import Homography

DEFAULT_WORLD_ORIGIN = (691000.0, 5336000.0, 510.0)  # UTM-scale magnitudes


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 42
    facade_width_m: float = 12.0
    facade_height_m: float = 8.0
    texture_width: int = 576
    texture_height: int = 384
    standoff_m: float = 14.0
    yaw_deg: float = 0.0
    pitch_deg: float = 0.0
    image_width: int = 640
    image_height: int = 480
    focal_px: float = 620.0
    origin_world: tuple[float, float, float] = DEFAULT_WORLD_ORIGIN
    checker_period_px: int = 48
    noise_amplitude: float = 26.0
    background_gray: int = 96
    gt_grid_step_px: int = 16

    def __post_init__(self):
        if self.facade_width_m <= 0 or self.facade_height_m <= 0:
            raise ValueError("facade dimensions must be positive")
        if self.standoff_m <= 0:
            raise ValueError("standoff must be positive")


@dataclass
class SynthScene:
    face: TexturedFace
    gml_document: bytes
    camera: CameraRecord
    texture_image: np.ndarray
    view_image: np.ndarray
    plane_homography: Homography
    gt_matches: MatchSet
    rng_seed: int
    config: SceneConfig


def _procedural_texture(cfg: SceneConfig) -> np.ndarray:
    """Checker plus band-limited noise: enough corner structure that the
    classical detector finds hundreds of keypoints, enough randomness that
    descriptors are locally distinctive."""
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    h, w = cfg.texture_height, cfg.texture_width
    yy, xx = np.mgrid[0:h, 0:w]
    checker = (((xx // cfg.checker_period_px) + (yy // cfg.checker_period_px))
               % 2).astype(np.float64)
    img = 70.0 + 115.0 * checker
    noise = rng.normal(size=(h, w))
    noise = ndimage.gaussian_filter(noise, 2.0, mode="wrap")
    noise = noise / max(np.abs(noise).max(), 1e-12)
    img = img + cfg.noise_amplitude * noise
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def _camera_pose(cfg: SceneConfig, facade_center: np.ndarray) -> Pose:
    """Camera on an orbit around the facade center, optical axis through it.

    yaw=0, pitch=0 puts the camera straight in front (south of the facade,
    looking north); yaw rotates around the vertical axis.
    """
    yaw = np.radians(cfg.yaw_deg)
    pitch = np.radians(cfg.pitch_deg)
    direction = np.array([
        np.sin(yaw) * np.cos(pitch),
        -np.cos(yaw) * np.cos(pitch),
        np.sin(pitch),
    ])
    center = facade_center + cfg.standoff_m * direction
    z_axis = facade_center - center
    z_axis = z_axis / np.linalg.norm(z_axis)
    up = np.array([0.0, 0.0, 1.0])
    x_axis = np.cross(z_axis, up)
    nx = np.linalg.norm(x_axis)
    if nx < 1e-9:
        raise ValueError("camera looks along the vertical; undefined roll")
    x_axis = x_axis / nx
    y_axis = np.cross(z_axis, x_axis)
    r = np.stack([x_axis, y_axis, z_axis])
    t = -(r.astype(np.longdouble) @ center.astype(np.longdouble))
    return Pose(r=r, t=t.astype(np.float64))


def _plane_homography(face: TexturedFace, pose: Pose, k: Intrinsics) -> Homography:
    """Texture-pixel (continuous) to camera-pixel (continuous) homography."""
    origin = face.world_ring[0].astype(np.longdouble)
    we = (face.world_ring[1] - face.world_ring[0]).astype(np.longdouble)
    wu = (face.world_ring[3] - face.world_ring[0]).astype(np.longdouble)
    width = np.longdouble(face.image_width)
    height = np.longdouble(face.image_height)
    # x_w(u, v) = origin + wu_total + u * we/width - v * wu/height
    col_u = we / width
    col_v = -wu / height
    col_1 = origin + wu
    r = pose.r.astype(np.longdouble)
    c = pose.camera_center.astype(np.longdouble)
    m = np.stack([r @ col_u, r @ col_v, r @ (col_1 - c)], axis=1)
    h = k.matrix().astype(np.longdouble) @ m
    return Homography((h / h[2, 2]).astype(np.float64))


def generate_scene(cfg: SceneConfig = SceneConfig()) -> SynthScene:
    """Build a fully self-consistent scene; deterministic for a given config.

    Raises if the facade does not project entirely in front of the camera.
    """
    origin = np.asarray(cfg.origin_world, dtype=np.float64)
    corners_world = np.array([
        origin,
        origin + [cfg.facade_width_m, 0.0, 0.0],
        origin + [cfg.facade_width_m, 0.0, cfg.facade_height_m],
        origin + [0.0, 0.0, cfg.facade_height_m],
    ])
    st_ring = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    face = TexturedFace(
        face_id="synth-facade",
        texture_path="texture.png",
        st_ring=st_ring,
        world_ring=corners_world,
        image_width=cfg.texture_width,
        image_height=cfg.texture_height,
    )

    texture = _procedural_texture(cfg)
    intrinsics = Intrinsics(
        fx=cfg.focal_px, fy=cfg.focal_px,
        cx=cfg.image_width / 2.0, cy=cfg.image_height / 2.0,
        image_width=cfg.image_width, image_height=cfg.image_height)
    facade_center = corners_world.mean(axis=0)
    pose = _camera_pose(cfg, facade_center)

    depths = corners_world @ pose.r[2] + pose.t[2]
    if np.any(depths <= 0):
        raise ValueError("facade is (partially) behind the camera")

    homography = _plane_homography(face, pose, intrinsics)
    view = _render_view(texture, homography, cfg)

    camera = CameraRecord(
        image_path="view.png", intrinsics=intrinsics, gt_pose=pose,
        tags=("synth", f"yaw={cfg.yaw_deg:g}", f"pitch={cfg.pitch_deg:g}"))

    gt_matches = _ground_truth_matches(face, homography, cfg)
    gml = to_citygml([face], building_id="synth-building")

    return SynthScene(
        face=face, gml_document=gml, camera=camera, texture_image=texture,
        view_image=view, plane_homography=homography, gt_matches=gt_matches,
        rng_seed=cfg.seed, config=cfg)


def _render_view(texture: np.ndarray, homography: Homography,
                 cfg: SceneConfig) -> np.ndarray:
    """Inverse-warp the texture through the plane homography with bilinear
    sampling; pixels that fall outside the texture get the background gray."""
    h_inv = np.linalg.inv(homography.h)
    vy, vx = np.mgrid[0:cfg.image_height, 0:cfg.image_width]
    ones = np.ones_like(vx, dtype=np.float64)
    cam = np.stack([vx + 0.5, vy + 0.5, ones])
    tex = np.einsum("ab,bhw->ahw", h_inv, cam)
    tex_u = tex[0] / tex[2] - 0.5
    tex_v = tex[1] / tex[2] - 0.5
    sampled = ndimage.map_coordinates(
        texture.astype(np.float64), [tex_v, tex_u], order=1,
        mode="constant", cval=float(cfg.background_gray))
    return np.clip(np.rint(sampled), 0, 255).astype(np.uint8)


def _ground_truth_matches(face: TexturedFace, homography: Homography,
                          cfg: SceneConfig) -> MatchSet:
    """Exact correspondences on a texture-pixel grid, kept where the mapped
    point lands inside the camera image."""
    step = cfg.gt_grid_step_px
    margin = 2.0
    xs = np.arange(step, cfg.texture_width - step, step, dtype=np.float64)
    ys = np.arange(step, cfg.texture_height - step, step, dtype=np.float64)
    gx, gy = np.meshgrid(xs, ys)
    tex_idx = np.stack([gx.ravel(), gy.ravel()], axis=1)
    cam_cont = homography.apply(tex_idx + 0.5)
    cam_idx = cam_cont - 0.5
    ok = (
        np.all(np.isfinite(cam_idx), axis=1)
        & (cam_idx[:, 0] >= margin) & (cam_idx[:, 0] < cfg.image_width - margin)
        & (cam_idx[:, 1] >= margin) & (cam_idx[:, 1] < cfg.image_height - margin)
    )
    tex_idx, cam_idx = tex_idx[ok], cam_idx[ok]
    n = len(tex_idx)
    indices = np.stack([np.arange(n), np.arange(n)], axis=1)
    return MatchSet(
        keypoints0=tex_idx,
        keypoints1=cam_idx,
        indices=indices,
        scores=np.ones(n),
        image0=ImageRef(path=face.texture_path, width=cfg.texture_width,
                        height=cfg.texture_height),
        image1=ImageRef(path="view.png", width=cfg.image_width,
                        height=cfg.image_height),
        meta={"matcher": "ground-truth", "resize_long_edge": None},
    )


@dataclass(frozen=True)
class CorruptionInfo:
    """Which matches were replaced by outliers; the complement carries only
    Gaussian noise. Lets tests grade RANSAC's inlier mask."""

    outlier_mask: np.ndarray
    noise_sigma_px: float
    seed: int


def corrupt_matches(ms: MatchSet, outlier_fraction: float,
                    noise_sigma_px: float, seed: int,
                    ) -> tuple[MatchSet, CorruptionInfo]:
    """Replace a seeded choice of camera-side keypoints with uniform random
    in-bounds pixels and jitter the remainder with Gaussian noise.

    Exactly round(outlier_fraction * num_matches) matches become outliers.
    """
    if not 0.0 <= outlier_fraction < 1.0:
        raise ValueError("outlier_fraction must be in [0, 1)")
    rng = np.random.Generator(np.random.PCG64(seed))
    n = ms.num_matches
    kps1 = ms.keypoints1.copy()
    outlier_mask = np.zeros(n, dtype=bool)
    n_out = int(round(outlier_fraction * n))
    if n_out:
        chosen = rng.choice(n, size=n_out, replace=False)
        outlier_mask[chosen] = True
    width, height = ms.image1.width, ms.image1.height
    matched1 = ms.indices[:, 1]
    if n_out:
        kps1[matched1[outlier_mask]] = np.stack([
            rng.uniform(0.0, width - 1.0, size=n_out),
            rng.uniform(0.0, height - 1.0, size=n_out),
        ], axis=1)
    if noise_sigma_px > 0:
        keep = matched1[~outlier_mask]
        kps1[keep] = np.clip(
            kps1[keep] + rng.normal(0.0, noise_sigma_px, size=(len(keep), 2)),
            0.0, [width - 1e-6, height - 1e-6])
    corrupted = replace(ms, keypoints1=kps1,
                        meta={**ms.meta, "corrupted": True})
    return corrupted, CorruptionInfo(outlier_mask=outlier_mask,
                                     noise_sigma_px=noise_sigma_px, seed=seed)


def save_png(image: np.ndarray, path) -> None:
    Image.fromarray(image).save(path, format="PNG")


def png_bytes(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(image).save(buf, format="PNG")
    return buf.getvalue()
