"""Robust geometric model fitting: homography DLT, P3P, PnP RANSAC and
Levenberg-Marquardt pose refinement.

The minimal absolute-pose solver is a three-point (P3P) method: distance
ratios come from the roots of a quartic (law-of-cosines elimination), the
rigid transform from three-point absolute orientation. P3P keeps working on
coplanar points, which matters here because facade keypoints are restricted
to a single plane.

Estimation failures are values (``success=False``), not exceptions, so the
evaluation can count failed pairs as infinite error instead of aborting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import (
    Intrinsics,
    Pose,
    reprojection_errors_px,
    so3_hat,
)

MIN_PNP_CORRESPONDENCES = 4  # 3 for the solver + 1 to disambiguate candidates


class EstimationError(ValueError):
    """Degenerate input configuration for a direct solver."""


@dataclass(frozen=True)
class RansacConfig:
    threshold_px: float = 10.0
    confidence: float = 0.9999
    max_iterations: int = 10000
    seed: int = 0

    def __post_init__(self):
        if self.threshold_px <= 0:
            raise ValueError("threshold_px must be positive")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must be in (0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass(frozen=True)
class PoseEstimate:
    pose: Pose
    inlier_mask: np.ndarray
    num_iterations: int
    mean_inlier_reproj_px: float
    success: bool
    refine_converged: bool = False


@dataclass(frozen=True)
class Homography:
    """3x3 projective map, normalized so h[2, 2] == 1 when nonzero."""

    h: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h, dtype=np.float64).reshape(3, 3)
        if abs(h[2, 2]) > 1e-12:
            h = h / h[2, 2]
        h = np.ascontiguousarray(h)
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    def apply(self, pts) -> np.ndarray:
        """Map 2D points; rows mapped to infinity (w == 0) come back inf."""
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        ph = np.concatenate([pts, np.ones((len(pts), 1))], axis=1) @ self.h.T
        w = ph[:, 2]
        out = np.full((len(pts), 2), np.inf)
        ok = np.abs(w) > 1e-15
        out[ok] = ph[ok, :2] / w[ok, None]
        return out


def inlier_mask(errors: np.ndarray, threshold_px: float) -> np.ndarray:
    """The single inlier predicate shared by RANSAC and the metrics."""
    return np.asarray(errors) < threshold_px


def _hartley_normalization(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    centroid = pts.mean(axis=0)
    d = np.linalg.norm(pts - centroid, axis=1).mean()
    if d < 1e-12:
        raise EstimationError("degenerate configuration: coincident points")
    s = np.sqrt(2.0) / d
    t = np.array([[s, 0.0, -s * centroid[0]],
                  [0.0, s, -s * centroid[1]],
                  [0.0, 0.0, 1.0]])
    return (pts - centroid) * s, t


def homography_dlt(pts0, pts1) -> Homography:
    """Hartley-normalized direct linear transform from >= 4 correspondences.

    Raises EstimationError when the configuration leaves the homography
    under-determined (e.g. 3 collinear points in a minimal set).
    """
    pts0 = np.asarray(pts0, dtype=np.float64).reshape(-1, 2)
    pts1 = np.asarray(pts1, dtype=np.float64).reshape(-1, 2)
    if len(pts0) != len(pts1) or len(pts0) < 4:
        raise EstimationError("homography needs >= 4 correspondences")
    n0, t0 = _hartley_normalization(pts0)
    n1, t1 = _hartley_normalization(pts1)
    n = len(pts0)
    a = np.zeros((2 * n, 9))
    x, y = n0[:, 0], n0[:, 1]
    xp, yp = n1[:, 0], n1[:, 1]
    a[0::2, 3] = -x
    a[0::2, 4] = -y
    a[0::2, 5] = -1.0
    a[0::2, 6] = yp * x
    a[0::2, 7] = yp * y
    a[0::2, 8] = yp
    a[1::2, 0] = x
    a[1::2, 1] = y
    a[1::2, 2] = 1.0
    a[1::2, 6] = -xp * x
    a[1::2, 7] = -xp * y
    a[1::2, 8] = -xp
    _, sv, vt = np.linalg.svd(a)
    # A unique (up to scale) solution needs rank 8: the second-smallest
    # singular value must be clearly nonzero.
    if sv[7] <= 1e-9 * max(sv[0], 1.0):
        raise EstimationError("degenerate configuration: homography rank-deficient")
    h_norm = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t1) @ h_norm @ t0
    return Homography(h)


# --- P3P ---------------------------------------------------------------------

def _quartic_coefficients(a2, b2, c2, ca, cb, cg) -> np.ndarray:
    """Quartic in v = s3/s1 obtained by eliminating u = s2/s1 from the
    law-of-cosines system (resultant, common factor b2^2 removed)."""
    return np.array([
        a2**2 - 2*a2*b2 - 2*a2*c2 + b2**2 - 4*b2*c2*ca**2 + 2*b2*c2 + c2**2,
        (-4*a2**2*cb + 4*a2*b2*ca*cg + 4*a2*b2*cb + 8*a2*c2*cb
         - 4*b2**2*ca*cg + 8*b2*c2*ca**2*cb + 4*b2*c2*ca*cg - 4*b2*c2*cb
         - 4*c2**2*cb),
        (4*a2**2*cb**2 + 2*a2**2 - 8*a2*b2*ca*cb*cg - 4*a2*b2*cg**2
         - 8*a2*c2*cb**2 - 4*a2*c2 + 4*b2**2*ca**2 + 4*b2**2*cg**2
         - 2*b2**2 - 4*b2*c2*ca**2 - 8*b2*c2*ca*cb*cg + 4*c2**2*cb**2
         + 2*c2**2),
        (-4*a2**2*cb + 4*a2*b2*ca*cg + 8*a2*b2*cb*cg**2 - 4*a2*b2*cb
         + 8*a2*c2*cb - 4*b2**2*ca*cg + 4*b2*c2*ca*cg + 4*b2*c2*cb
         - 4*c2**2*cb),
        a2**2 - 4*a2*b2*cg**2 + 2*a2*b2 - 2*a2*c2 + b2**2 - 2*b2*c2 + c2**2,
    ])


def _polish_real_roots(coeffs: np.ndarray, roots: np.ndarray) -> np.ndarray:
    deriv = np.polyder(coeffs)
    for _ in range(3):
        val = np.polyval(coeffs, roots)
        dval = np.polyval(deriv, roots)
        step = np.where(np.abs(dval) > 1e-300, val / np.where(dval == 0, 1, dval), 0.0)
        roots = roots - step
    return roots


def _absolute_orientation(x_world: np.ndarray, y_cam: np.ndarray) -> Pose:
    """Rigid transform with y = R x + t from exact point triples (Kabsch)."""
    xc = x_world.mean(axis=0)
    yc = y_cam.mean(axis=0)
    h = (x_world - xc).T @ (y_cam - yc)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return Pose(r=r, t=yc - r @ xc)


_UNIT_PLANE_K = Intrinsics(fx=1.0, fy=1.0, cx=0.0, cy=0.0,
                           image_width=1, image_height=1)


def _polish_pose_on_rays(pose: Pose, world: np.ndarray,
                         rays: np.ndarray) -> Pose:
    """Few Gauss-Newton steps on unit-plane residuals. Quartic roots can be
    ill-conditioned (double roots at geometric tangencies); polishing the
    pose directly restores machine precision regardless."""
    if np.any(rays[:, 2] <= 1e-12):
        return pose
    obs = rays[:, :2] / rays[:, 2:]
    best = pose
    best_cost = np.inf
    # Linear convergence at double roots needs a few dozen iterations.
    for _ in range(40):
        try:
            r, j = residuals_and_jacobian(pose, world, obs, _UNIT_PLANE_K)
        except ValueError:
            return best
        cost = float(r @ r)
        if cost < best_cost:
            best, best_cost = pose, cost
        if cost < 1e-28:
            break
        g = j.T @ r
        h = j.T @ j + 1e-14 * np.eye(6)
        try:
            delta = np.linalg.solve(h, -g)
        except np.linalg.LinAlgError:
            return best
        if not np.all(np.isfinite(delta)) or np.linalg.norm(delta) < 1e-15:
            break
        pose = pose.retract(delta[:3], delta[3:])
    return best


def p3p_solve(world, rays, *, angle_tol_rad: float = 1e-8) -> list[Pose]:
    """Absolute pose candidates from 3 world points and 3 unit bearing rays.

    Returns up to 4 poses, each reproducing the input rays to within
    ``angle_tol_rad``. Raises EstimationError for collinear world points;
    returns an empty list when the quartic has no usable real root.
    """
    world = np.asarray(world, dtype=np.float64).reshape(3, 3)
    rays = np.asarray(rays, dtype=np.float64).reshape(3, 3)
    rays = rays / np.linalg.norm(rays, axis=1, keepdims=True)

    cross = np.cross(world[1] - world[0], world[2] - world[0])
    scale = max(np.linalg.norm(world[1] - world[0]),
                np.linalg.norm(world[2] - world[0]), 1e-300)
    if np.linalg.norm(cross) <= 1e-10 * scale**2:
        raise EstimationError("collinear world points")

    a2 = float(np.sum((world[1] - world[2]) ** 2))
    b2 = float(np.sum((world[0] - world[2]) ** 2))
    c2 = float(np.sum((world[0] - world[1]) ** 2))
    # Normalize the triangle scale for conditioning; v, u are scale-free.
    norm = max(a2, b2, c2)
    a2n, b2n, c2n = a2 / norm, b2 / norm, c2 / norm
    ca = float(rays[1] @ rays[2])
    cb = float(rays[0] @ rays[2])
    cg = float(rays[0] @ rays[1])

    coeffs = _quartic_coefficients(a2n, b2n, c2n, ca, cb, cg)
    cmax = np.max(np.abs(coeffs))
    if cmax == 0.0:
        return []
    coeffs = coeffs / cmax
    nz = np.nonzero(np.abs(coeffs) > 1e-14)[0]
    if len(nz) == 0 or nz[0] == len(coeffs) - 1:
        return []
    coeffs = coeffs[nz[0]:]
    roots = np.roots(coeffs)
    real = roots[np.abs(roots.imag) < 1e-6 * (1.0 + np.abs(roots.real))].real
    real = _polish_real_roots(coeffs, real)

    poses: list[Pose] = []
    for v in sorted(set(np.round(real, 14))):
        if v <= 0:
            continue
        denom_u = 2.0 * b2n * (cg - v * ca)
        quad_b = 1.0 + v * v - 2.0 * v * cb
        if quad_b <= 0:
            continue
        if abs(denom_u) > 1e-10:
            u = (b2n * (1.0 - v * v) + (a2n - c2n) * quad_b) / denom_u
            u_candidates = [u]
        else:
            # Fall back to the quadratic in u from the third equation.
            disc = cg * cg - (1.0 - c2n * quad_b / b2n)
            if disc < 0:
                continue
            u_candidates = [cg + np.sqrt(disc), cg - np.sqrt(disc)]
        for u in u_candidates:
            if u <= 0:
                continue
            s1 = np.sqrt(b2 / quad_b)
            cam_pts = np.array([s1, u * s1, v * s1])[:, None] * rays
            pose = _absolute_orientation(world, cam_pts)
            pose = _polish_pose_on_rays(pose, world, rays)
            p = world @ pose.r.T + pose.t
            norms = np.linalg.norm(p, axis=1)
            if np.any(norms <= 0):
                continue
            pn = p / norms[:, None]
            # atan2 form stays accurate where arccos bottoms out (~1.5e-8).
            ang = np.arctan2(np.linalg.norm(np.cross(pn, rays), axis=1),
                             np.sum(pn * rays, axis=1))
            if np.max(ang) < angle_tol_rad:
                if not any(np.allclose(pose.r, q.r, atol=1e-9)
                           and np.allclose(pose.t, q.t, atol=1e-9)
                           for q in poses):
                    poses.append(pose)
    return poses


def bearing_rays(pixels, k: Intrinsics) -> np.ndarray:
    """Unit bearing vectors in the camera frame for continuous pixels."""
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    x = (pixels[:, 0] - k.cx) / k.fx
    y = (pixels[:, 1] - k.cy) / k.fy
    rays = np.stack([x, y, np.ones(len(pixels))], axis=1)
    return rays / np.linalg.norm(rays, axis=1, keepdims=True)


# --- Levenberg-Marquardt refinement -------------------------------------------

@dataclass(frozen=True)
class RefineResult:
    pose: Pose
    converged: bool
    diverged: bool
    num_iterations: int
    initial_rms_px: float
    final_rms_px: float


def residuals_and_jacobian(pose: Pose, world, pixels, k: Intrinsics,
                           ) -> tuple[np.ndarray, np.ndarray]:
    """Stacked reprojection residuals (2N,) and their Jacobian (2N, 6) with
    respect to the local pose update [rotation delta (3), translation (3)]:
    perturbed pose = (R exp([d]x), t + dt).

    Points must be in front of the camera.
    """
    world = np.asarray(world, dtype=np.float64).reshape(-1, 3)
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    p = world @ pose.r.T + pose.t
    z = p[:, 2]
    if np.any(z <= 0):
        raise ValueError("point(s) behind the camera; cannot linearize")
    u = k.fx * p[:, 0] / z + k.cx
    v = k.fy * p[:, 1] / z + k.cy
    r = np.stack([u, v], axis=1) - pixels

    n = len(world)
    duv_dp = np.zeros((n, 2, 3))
    duv_dp[:, 0, 0] = k.fx / z
    duv_dp[:, 0, 2] = -k.fx * p[:, 0] / z**2
    duv_dp[:, 1, 1] = k.fy / z
    duv_dp[:, 1, 2] = -k.fy * p[:, 1] / z**2

    # d p_cam / d delta = -R [x]_x  (right-multiplicative update);
    # d p_cam / d t = I.
    hats = np.empty((n, 3, 3))
    for i in range(n):
        hats[i] = so3_hat(world[i])
    dp_ddelta = -np.einsum("ab,nbc->nac", pose.r, hats)
    j = np.concatenate([
        np.einsum("nab,nbc->nac", duv_dp, dp_ddelta),
        duv_dp,
    ], axis=2)
    return r.reshape(-1), j.reshape(-1, 6)


def _rms(residuals: np.ndarray) -> float:
    if residuals.size == 0:
        return 0.0
    return float(np.sqrt(np.mean(residuals**2)))


def lm_refine_pose(initial: Pose, world, pixels, k: Intrinsics,
                   inlier_mask=None, *, max_iterations: int = 100,
                   rel_tol: float = 1e-10) -> RefineResult:
    """Minimize the sum of squared reprojection errors over the inliers.

    Rotation is parameterized by a 3-vector tangent update, so the returned
    rotation stays orthonormal. Cost never increases: steps are accepted
    only when they lower it, and exhausted damping returns the best pose
    found (the initial one if no step was ever accepted, with
    ``diverged=True``).
    """
    world = np.asarray(world, dtype=np.float64).reshape(-1, 3)
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    if inlier_mask is not None:
        inlier_mask = np.asarray(inlier_mask, dtype=bool)
        world = world[inlier_mask]
        pixels = pixels[inlier_mask]
    if len(world) < MIN_PNP_CORRESPONDENCES:
        raise ValueError("refinement needs >= 4 inlier correspondences")

    pose = initial
    r, j = residuals_and_jacobian(pose, world, pixels, k)
    cost = float(r @ r)
    initial_rms = _rms(r)
    lam = 1e-6
    converged = False
    accepted_any = False
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        jtj = j.T @ j
        g = j.T @ r
        step_ok = False
        while lam <= 1e12:
            h = jtj + lam * np.diag(np.maximum(np.diag(jtj), 1e-12))
            try:
                delta = np.linalg.solve(h, -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            candidate = pose.retract(delta[:3], delta[3:])
            p = world @ candidate.r.T + candidate.t
            if np.any(p[:, 2] <= 0):
                lam *= 10.0
                continue
            r_new, j_new = residuals_and_jacobian(candidate, world, pixels, k)
            cost_new = float(r_new @ r_new)
            if cost_new < cost:
                rel_change = (cost - cost_new) / max(cost, 1e-300)
                pose, r, j, cost = candidate, r_new, j_new, cost_new
                lam = max(lam / 3.0, 1e-12)
                step_ok = True
                accepted_any = True
                if rel_change < rel_tol:
                    converged = True
                break
            lam *= 10.0
        if not step_ok:
            break
        if converged:
            break

    diverged = not accepted_any and not converged and iterations > 0 \
        and initial_rms > 0 and _rms(r) >= initial_rms and cost > 1e-20
    if converged:
        diverged = False
    return RefineResult(
        pose=pose, converged=converged, diverged=diverged,
        num_iterations=iterations, initial_rms_px=initial_rms,
        final_rms_px=_rms(r))


# --- PnP RANSAC ---------------------------------------------------------------

def _failure(n: int, iterations: int) -> PoseEstimate:
    return PoseEstimate(
        pose=Pose(r=np.eye(3), t=np.zeros(3)),
        inlier_mask=np.zeros(n, dtype=bool),
        num_iterations=iterations,
        mean_inlier_reproj_px=float("inf"),
        success=False,
    )


def pnp_ransac(world, pixels, k: Intrinsics,
               cfg: RansacConfig = RansacConfig()) -> PoseEstimate:
    """Absolute pose from 2D-3D correspondences by P3P hypotheses inside
    RANSAC, refined with Levenberg-Marquardt on the consensus set.

    World coordinates should be centered beforehand (camera.center_points);
    geo-referenced magnitudes otherwise degrade the solver numerics. Fewer
    than 4 correspondences, or no hypothesis reaching 4 inliers, yield
    ``success=False`` rather than an exception. Deterministic for a given
    seed: hypotheses are sampled without replacement from a counter-free
    generator and the best model is selected by (inlier count, lower RMS,
    earlier iteration).
    """
    world = np.asarray(world, dtype=np.float64).reshape(-1, 3)
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    n = len(world)
    if n != len(pixels):
        raise ValueError("world/pixel correspondence count mismatch")
    if n < MIN_PNP_CORRESPONDENCES:
        return _failure(n, 0)

    rays = bearing_rays(pixels, k)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))

    best_count = 0
    best_rms = np.inf
    best_pose: Pose | None = None
    needed = cfg.max_iterations
    it = 0
    while it < min(needed, cfg.max_iterations):
        it += 1
        sample = rng.choice(n, size=4, replace=False)
        try:
            candidates = p3p_solve(world[sample[:3]], rays[sample[:3]])
        except EstimationError:
            continue
        if not candidates:
            continue
        # Disambiguate with the 4th sampled point.
        probe_world = world[sample[3]][None, :]
        probe_pixel = pixels[sample[3]][None, :]
        probe_err = [reprojection_errors_px(probe_world, probe_pixel, c, k)[0]
                     for c in candidates]
        pose = candidates[int(np.argmin(probe_err))]
        errors = reprojection_errors_px(world, pixels, pose, k)
        mask = inlier_mask(errors, cfg.threshold_px)
        count = int(mask.sum())
        if count < MIN_PNP_CORRESPONDENCES:
            continue
        rms = _rms(errors[mask])
        if count > best_count or (count == best_count and rms < best_rms):
            best_count, best_rms, best_pose = count, rms, pose
            w = count / n
            if w >= 1.0:
                needed = it
            else:
                needed = int(np.ceil(
                    np.log(1.0 - cfg.confidence) / np.log(1.0 - w**3)))

    if best_pose is None:
        return _failure(n, it)

    errors = reprojection_errors_px(world, pixels, best_pose, k)
    mask = inlier_mask(errors, cfg.threshold_px)
    refine = lm_refine_pose(best_pose, world, pixels, k, inlier_mask=mask)
    errors = reprojection_errors_px(world, pixels, refine.pose, k)
    mask = inlier_mask(errors, cfg.threshold_px)
    if not mask.any():
        return _failure(n, it)
    return PoseEstimate(
        pose=refine.pose,
        inlier_mask=mask,
        num_iterations=it,
        mean_inlier_reproj_px=float(np.mean(errors[mask])),
        success=True,
        refine_converged=refine.converged,
    )
