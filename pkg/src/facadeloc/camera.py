"""Pinhole camera model, pose conventions and pose-difference measures.

Pose convention: R rotates world into the camera frame and t is the world
origin expressed in the camera frame (t = -R @ camera_center), so
p_cam = R @ x_world + t. The calibration maps unit-plane coordinates to
pixels with the image origin at the upper-left corner (u right, v down).

World coordinates here are geo-referenced (UTM easting/northing, ~1e6 m),
which is why projection, centering and the ground-truth translation offset
run internally in extended precision: plain float64 accumulates ~1e-10 m
rounding per operation at that magnitude, enough to poison pixel-level
identities that the evaluation relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ORTHONORMALITY_STRICT = 1e-9
ORTHONORMALITY_REPAIR = 1e-6


class BehindCameraError(ValueError):
    """Point has non-positive depth in the camera frame."""


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    image_width: int
    image_height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not np.isfinite([self.fx, self.fy, self.cx, self.cy]).all():
            raise ValueError("non-finite intrinsics")

    def matrix(self) -> np.ndarray:
        return np.array([
            [self.fx, 0.0, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ])


def _nearest_rotation(r: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(r)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


@dataclass(frozen=True)
class Pose:
    """World-to-camera rigid transform (R world->camera, t world origin in
    camera frame).

    Rotations from heterogeneous file sources are re-orthonormalized via the
    nearest-rotation projection when off by < 1e-6; larger violations raise.
    """

    r: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("non-finite pose")
        defect = max(
            float(np.max(np.abs(r.T @ r - np.eye(3)))),
            abs(float(np.linalg.det(r)) - 1.0),
        )
        if defect > ORTHONORMALITY_REPAIR:
            raise ValueError(
                f"rotation is not orthonormal (defect {defect:.3g} > "
                f"{ORTHONORMALITY_REPAIR:g})")
        if defect > ORTHONORMALITY_STRICT:
            r = _nearest_rotation(r)
        r = np.ascontiguousarray(r)
        r.setflags(write=False)
        t = np.ascontiguousarray(t)
        t.setflags(write=False)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "t", t)

    @property
    def camera_center(self) -> np.ndarray:
        """Camera origin in world coordinates (-R^T t)."""
        return -(self.r.T @ self.t)

    def transform(self, x) -> np.ndarray:
        """World points into the camera frame (extended precision inside)."""
        x = np.asarray(x, dtype=np.longdouble)
        p = x @ self.r.T.astype(np.longdouble) + self.t.astype(np.longdouble)
        return p.astype(np.float64)

    def retract(self, delta_rot, delta_t) -> "Pose":
        """Right-multiplicative local update: (R exp([d]x), t + dt)."""
        return Pose(self.r @ so3_exp(delta_rot), self.t + np.asarray(delta_t))


@dataclass(frozen=True)
class CameraRecord:
    image_path: str
    intrinsics: Intrinsics
    gt_pose: Pose
    tags: tuple[str, ...] = field(default_factory=tuple)


def project(x, pose: Pose, k: Intrinsics) -> np.ndarray:
    """Project world points to pixels; raises BehindCameraError if any point
    has depth <= 0. Output is continuous image coordinates ([0, W] x [0, H]
    domain, origin at top-left corner)."""
    uv, valid = project_points(x, pose, k)
    if not np.all(valid):
        raise BehindCameraError("point(s) behind the camera (depth <= 0)")
    return uv


def project_points(x, pose: Pose, k: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection; returns (uv, in_front_mask) without raising."""
    x = np.asarray(x, dtype=np.longdouble)
    p = x @ pose.r.T.astype(np.longdouble) + pose.t.astype(np.longdouble)
    z = p[..., 2]
    valid = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = k.fx * p[..., 0] / z + k.cx
        v = k.fy * p[..., 1] / z + k.cy
    uv = np.stack([u, v], axis=-1).astype(np.float64)
    return uv, np.asarray(valid, dtype=bool)


def reprojection_errors_px(world, pixels, pose: Pose, k: Intrinsics) -> np.ndarray:
    """Euclidean pixel distance between projected world points and observed
    continuous pixel coordinates; infinite where the point is behind the
    camera. This is the single reprojection-error implementation shared by
    RANSAC inlier classification and the evaluation metrics."""
    uv, valid = project_points(world, pose, k)
    pixels = np.asarray(pixels, dtype=np.float64)
    err = np.full(uv.shape[:-1], np.inf)
    err[valid] = np.linalg.norm(uv[valid] - pixels[valid], axis=-1)
    return err


def center_points(points) -> tuple[np.ndarray, np.ndarray]:
    """Subtract the component-wise mean; returns (centered, offset).

    PnP on geo-referenced coordinates needs this: translation magnitudes of
    ~1e6 m otherwise dominate the numerics. The mean is accumulated in
    extended precision.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.size == 0:
        raise ValueError("cannot center an empty point set")
    # Subtract exactly the float64 offset that is returned: a higher-
    # precision mean would desynchronize `centered + offset` from `points`.
    offset = np.mean(points.astype(np.longdouble), axis=0).astype(np.float64)
    centered = (points.astype(np.longdouble)
                - offset.astype(np.longdouble)).astype(np.float64)
    return centered, offset


def offset_gt_translation(gt: Pose, offset) -> np.ndarray:
    """Ground-truth translation in the centered world frame:
    t_centered = t_gt + R_gt @ offset."""
    offset = np.asarray(offset, dtype=np.longdouble)
    t = gt.t.astype(np.longdouble) + gt.r.astype(np.longdouble) @ offset
    return t.astype(np.float64)


def rotation_error_deg(ra, rb) -> float:
    """Geodesic angle between two rotations, in degrees ([0, 180]).

    The arccos form has a ~1e-6 deg noise floor for nearly identical
    rotations; bit-identical inputs short-circuit to exactly zero.
    """
    ra = np.asarray(ra, dtype=np.float64)
    rb = np.asarray(rb, dtype=np.float64)
    if np.array_equal(ra, rb):
        return 0.0
    c = (np.trace(ra.T @ rb) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def translation_error_m(ta, tb) -> float:
    """Euclidean distance between translation vectors. When comparing a pose
    estimated from centered points against ground truth, pass the centered
    GT translation (offset_gt_translation)."""
    ta = np.asarray(ta, dtype=np.float64)
    tb = np.asarray(tb, dtype=np.float64)
    return float(np.linalg.norm(ta - tb))


def camera_center_error_m(pose_a: Pose, pose_b: Pose) -> float:
    """Distance between camera centers; differs from translation_error_m
    under rotation error, reported as an additional diagnostic."""
    return float(np.linalg.norm(pose_a.camera_center - pose_b.camera_center))


# --- rotation utilities -----------------------------------------------------

def so3_hat(w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    return np.array([
        [0.0, -w[2], w[1]],
        [w[2], 0.0, -w[0]],
        [-w[1], w[0], 0.0],
    ])


def so3_exp(w) -> np.ndarray:
    """Rodrigues exponential map; Taylor fallback near zero."""
    w = np.asarray(w, dtype=np.float64)
    theta = np.linalg.norm(w)
    k = so3_hat(w)
    if theta < 1e-8:
        return np.eye(3) + k + 0.5 * (k @ k)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * k + b * (k @ k)


def so3_log(r) -> np.ndarray:
    """Inverse of so3_exp (angle in [0, pi])."""
    r = np.asarray(r, dtype=np.float64)
    c = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(c)
    if theta < 1e-8:
        return np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]]) / 2.0
    if theta > np.pi - 1e-6:
        # Near pi the axis comes from the symmetric part.
        m = (r + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diagonal(m), 0.0))
        axis = axis / np.linalg.norm(axis)
        # Fix signs from off-diagonal entries.
        if m[0, 1] < 0:
            axis[1] = -axis[1]
        if m[0, 2] < 0:
            axis[2] = -axis[2]
        return theta * axis
    axis = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    return theta * axis / (2.0 * np.sin(theta))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation (QR of a Gaussian matrix, det fixed)."""
    m = rng.normal(size=(3, 3))
    q, r = np.linalg.qr(m)
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 2] = -q[:, 2]
    return q


def rotation_to_quaternion(r) -> np.ndarray:
    """Unit quaternion (w, x, y, z) for a rotation matrix."""
    r = np.asarray(r, dtype=np.float64)
    tr = np.trace(r)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (r[2, 1] - r[1, 2]) / s,
                      (r[0, 2] - r[2, 0]) / s,
                      (r[1, 0] - r[0, 1]) / s])
    else:
        i = int(np.argmax(np.diagonal(r)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(1.0 + r[i, i] - r[j, j] - r[k, k]) * 2.0
        q = np.empty(4)
        q[0] = (r[k, j] - r[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (r[j, i] + r[i, j]) / s
        q[1 + k] = (r[k, i] + r[i, k]) / s
    return q / np.linalg.norm(q)


# --- serialization (pose/intrinsics JSON schema) -----------------------------

def camera_record_to_dict(rec: CameraRecord) -> dict:
    """Rotation is stored row-major as 9 numbers and is world-to-camera;
    stating that here avoids the usual convention pitfalls."""
    return {
        "image_path": rec.image_path,
        "intrinsics": {
            "fx": rec.intrinsics.fx, "fy": rec.intrinsics.fy,
            "cx": rec.intrinsics.cx, "cy": rec.intrinsics.cy,
            "width": rec.intrinsics.image_width,
            "height": rec.intrinsics.image_height,
        },
        "pose": {
            "rotation_rowmajor_world_to_camera": rec.gt_pose.r.ravel().tolist(),
            "translation": rec.gt_pose.t.tolist(),
        },
        "tags": list(rec.tags),
    }


def camera_record_from_dict(data: dict) -> CameraRecord:
    intr = data["intrinsics"]
    pose = data["pose"]
    return CameraRecord(
        image_path=data["image_path"],
        intrinsics=Intrinsics(
            fx=float(intr["fx"]), fy=float(intr["fy"]),
            cx=float(intr["cx"]), cy=float(intr["cy"]),
            image_width=int(intr["width"]), image_height=int(intr["height"]),
        ),
        gt_pose=Pose(
            r=np.asarray(pose["rotation_rowmajor_world_to_camera"],
                         dtype=np.float64).reshape(3, 3),
            t=np.asarray(pose["translation"], dtype=np.float64),
        ),
        tags=tuple(data.get("tags", ())),
    )
