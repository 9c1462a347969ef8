"""Multi-view mouth perception: synthetic keypoint observation, depth lifting,
outlier-robust rigid registration of the head model, and mouth tracking."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DegenerateGeometryError, RegistrationError
from .geometry import Rigid, kabsch_batch, pose_error, random_rotation, rotation_angle
from .headmodel import (DEFAULT_OPEN_THRESHOLD_MM, HeadParams, HeadTemplate, MouthPose,
                        landmarks_for_jaw_angles, mouth_state, sample_params, synthesize)

log = logging.getLogger(__name__)

RIG_HEADER = "camerarig-v1"
TUKEY_C = 4.685
MAD_TO_SIGMA = 1.4826


# --------------------------------------------------------------------------- cameras

@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    extrinsic: Rigid   # camera-from-world

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigurationError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ConfigurationError("principal point outside the image")

    def project(self, pts_world):
        """Pixels (n, 2) and depth (n,) along the optical axis."""
        pc = self.extrinsic.apply(pts_world)
        z = pc[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * pc[:, 0] / z + self.cx
            v = self.fy * pc[:, 1] / z + self.cy
        return np.column_stack([u, v]), z

    def backproject(self, uv, depth):
        uv = np.asarray(uv, float)
        d = np.asarray(depth, float)
        pc = np.column_stack([(uv[:, 0] - self.cx) / self.fx * d, (uv[:, 1] - self.cy) / self.fy * d, d])
        return self.extrinsic.inverse().apply(pc)

    def in_image(self, uv):
        return (uv[:, 0] >= 0) & (uv[:, 0] < self.width) & (uv[:, 1] >= 0) & (uv[:, 1] < self.height)

    def ray_direction(self, uv):
        uv = np.atleast_2d(uv)
        d = np.column_stack([(uv[:, 0] - self.cx) / self.fx, (uv[:, 1] - self.cy) / self.fy, np.ones(len(uv))])
        return self.extrinsic.inverse().apply_vec(d)


@dataclass(frozen=True)
class CameraMount:
    """Intrinsics plus the camera pose in the tool (utensil-tip) frame."""
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    tool_from_camera: Rigid

    def at(self, world_from_tool: Rigid) -> CameraModel:
        world_from_cam = world_from_tool @ self.tool_from_camera
        return CameraModel(self.fx, self.fy, self.cx, self.cy, self.width, self.height, world_from_cam.inverse())


def _look_at(position, target, right_hint) -> Rigid:
    z = np.asarray(target, float) - np.asarray(position, float)
    z /= np.linalg.norm(z)
    x = np.asarray(right_hint, float) - np.dot(right_hint, z) * z
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return Rigid(np.column_stack([x, y, z]), np.asarray(position, float))


def default_rig(baseline_mm: float = 60.0, standoff_mm: float = 150.0, fx: float = 380.0,
                width: int = 640, height: int = 480) -> list[CameraMount]:
    """Top and bottom wrist cameras converging on the utensil tip.

    Tool frame: origin at the tip, +z back along the utensil toward the robot,
    +y up, +x completing a right-handed frame.
    """
    mounts = []
    for sign in (+1.0, -1.0):
        pose = _look_at([0.0, sign * baseline_mm / 2, standoff_mm], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0])
        mounts.append(CameraMount(fx, fx, width / 2, height / 2, width, height, pose))
    return mounts


def save_rig(mounts: list[CameraMount], path) -> None:
    """``camerarig-v1`` text: count, then per camera ``fx fy cx cy w h`` followed by
    the tool-from-camera rotation (9, row-major) and translation (3)."""
    lines = [RIG_HEADER, str(len(mounts))]
    for m in mounts:
        vals = [m.fx, m.fy, m.cx, m.cy, m.width, m.height, *m.tool_from_camera.R.ravel(), *m.tool_from_camera.t]
        lines.append(" ".join(repr(float(v)) for v in vals))
    Path(path).write_text("\n".join(lines) + "\n")


def load_rig(path=None) -> list[CameraMount]:
    if path is None:
        return default_rig()
    head, _, rest = Path(path).read_text().partition("\n")
    if head.strip() != RIG_HEADER:
        raise ConfigurationError(f"expected header {RIG_HEADER!r}")
    tok = np.array(rest.split(), dtype=float)
    n = int(tok[0])
    if len(tok) != 1 + 18 * n:
        raise ConfigurationError("camera rig file has the wrong number of values")
    mounts = []
    for k in range(n):
        v = tok[1 + 18 * k: 1 + 18 * (k + 1)]
        pose = Rigid(v[6:15].reshape(3, 3), v[15:18])
        if not pose.is_proper(1e-6):
            raise ConfigurationError("camera rotation is not proper")
        mounts.append(CameraMount(v[0], v[1], v[2], v[3], int(v[4]), int(v[5]), pose))
    return mounts


# --------------------------------------------------------------------------- occlusion + observation

@dataclass(frozen=True)
class OcclusionConfig:
    masks: tuple | None = None               # one convex polygon (k, 2) per camera, or None
    keypoint_dropout_prob: float = 0.0
    keypoint_noise_inside: float = 0.0       # px
    keypoint_noise_outside: float = 0.0
    depth_noise_inside: float = 0.0          # mm
    depth_noise_outside: float = 0.0
    depth_outlier_prob: float = 0.0
    depth_outlier_magnitude: float = 80.0

    def __post_init__(self):
        for p in (self.keypoint_dropout_prob, self.depth_outlier_prob):
            if not 0.0 <= p <= 1.0:
                raise ConfigurationError("probabilities must lie in [0, 1]")
        for s in (self.keypoint_noise_inside, self.keypoint_noise_outside,
                  self.depth_noise_inside, self.depth_noise_outside, self.depth_outlier_magnitude):
            if s < 0:
                raise ConfigurationError("noise levels must be non-negative")


OCCLUSION_LEVELS = {
    "none": dict(keypoint_dropout_prob=0.0, depth_outlier_prob=0.0),
    "low": dict(keypoint_dropout_prob=0.1, depth_outlier_prob=0.2),
    "medium": dict(keypoint_dropout_prob=0.2, depth_outlier_prob=0.5),
    "high": dict(keypoint_dropout_prob=0.3, depth_outlier_prob=0.8),
    "full": dict(keypoint_dropout_prob=0.0, depth_outlier_prob=1.0),
}


def occlusion_preset(level: str, masks=None) -> OcclusionConfig:
    if level not in OCCLUSION_LEVELS:
        raise ConfigurationError(f"unknown occlusion level {level!r}; choose from {sorted(OCCLUSION_LEVELS)}")
    return OcclusionConfig(masks=masks, keypoint_noise_inside=2.0, keypoint_noise_outside=1.0,
                           depth_noise_inside=2.0, depth_noise_outside=1.0, **OCCLUSION_LEVELS[level])


@dataclass
class Observation:
    keypoints_2d: np.ndarray   # (C, L, 2)
    depth: np.ndarray          # (C, L)
    valid: np.ndarray          # (C, L) bool
    timestamp: float = 0.0


def convex_hull(points) -> np.ndarray:
    """Counter-clockwise hull (monotone chain)."""
    pts = sorted(map(tuple, np.asarray(points, float)))
    if len(pts) <= 2:
        return np.array(pts)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def inside_polygon(uv, poly) -> np.ndarray:
    """Points inside a convex counter-clockwise polygon."""
    uv = np.asarray(uv, float)
    if poly is None or len(poly) < 3:
        return np.zeros(len(uv), bool)
    a = poly
    b = np.roll(poly, -1, axis=0)
    e = b - a
    rel = uv[:, None, :] - a[None]
    cr = e[None, :, 0] * rel[..., 1] - e[None, :, 1] * rel[..., 0]
    return np.all(cr >= 0, axis=1)


def expanded_hull(uv, margin_px: float) -> np.ndarray:
    """Hull of ``uv`` grown outward by ``margin_px`` (octagonal offset)."""
    uv = np.asarray(uv, float)
    uv = uv[np.all(np.isfinite(uv), axis=1)]
    ang = np.linspace(0, 2 * np.pi, 8, endpoint=False)
    ring = margin_px * np.column_stack([np.cos(ang), np.sin(ang)]) / np.cos(np.pi / 8)
    return convex_hull((uv[:, None, :] + ring[None]).reshape(-1, 2))


def mouth_masks(cameras, mouth_points_world, margin_px: float = 8.0) -> tuple:
    return tuple(expanded_hull(cam.project(mouth_points_world)[0], margin_px) for cam in cameras)


def utensil_masks(cameras, world_from_tool: Rigid, length_mm: float = 120.0, half_width_mm: float = 8.0,
                  food_radius_mm: float = 14.0) -> tuple:
    """Image-space masks covering the utensil shaft and the food at its tip."""
    r, w = food_radius_mm, half_width_mm
    food = np.array([[x, y, z] for x in (-r, r) for y in (-r, r) for z in (-r, r)])
    shaft = np.array([[x, y, z] for x in (-w, w) for y in (-w, w) for z in (0.0, length_mm)])
    pts = world_from_tool.apply(np.vstack([food, shaft]))
    out = []
    for cam in cameras:
        uv, z = cam.project(pts)
        keep = z > 1.0
        out.append(convex_hull(uv[keep]) if keep.sum() >= 3 else None)
    return tuple(out)


def observe(keypoints_world, cameras, occ: OcclusionConfig, rng_seed, timestamp: float = 0.0,
            min_depth_mm: float = 10.0) -> Observation:
    """Project, corrupt and record one multi-view keypoint observation.

    The random draws per camera are made in a fixed order and do not depend
    on the occlusion settings, so two configs with the same seed share noise.
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    X = np.asarray(keypoints_world, float)
    L = len(X)
    C = len(cameras)
    kp = np.zeros((C, L, 2))
    depth = np.zeros((C, L))
    valid = np.zeros((C, L), bool)
    for c, cam in enumerate(cameras):
        n_pix = rng.standard_normal((L, 2))
        n_dep = rng.standard_normal(L)
        u_drop = rng.random(L)
        u_out = rng.random(L)
        sign = np.where(rng.random(L) < 0.5, -1.0, 1.0)

        uv, z = cam.project(X)
        ok = np.isfinite(z) & (z > min_depth_mm)
        ok[ok] &= cam.in_image(uv[ok])
        mask = occ.masks[c] if occ.masks is not None and c < len(occ.masks) else None
        inside = inside_polygon(np.where(np.isfinite(uv), uv, -1e9), mask) if mask is not None else np.zeros(L, bool)

        s_pix = np.where(inside, occ.keypoint_noise_inside, occ.keypoint_noise_outside)
        s_dep = np.where(inside, occ.depth_noise_inside, occ.depth_noise_outside)
        uv_obs = uv + n_pix * s_pix[:, None]
        d_obs = z + n_dep * s_dep
        outlier = inside & (u_out < occ.depth_outlier_prob)
        d_out = z + sign * occ.depth_outlier_magnitude
        d_out = np.where(d_out > min_depth_mm, d_out, z + occ.depth_outlier_magnitude)
        d_obs = np.where(outlier, d_out, d_obs)
        dropped = inside & (u_drop < occ.keypoint_dropout_prob)
        v = ok & ~dropped & (d_obs > 0)
        kp[c] = np.where(v[:, None], uv_obs, np.nan)
        depth[c] = np.where(v, d_obs, np.nan)
        valid[c] = v
    return Observation(kp, depth, valid, timestamp)


def lift(obs: Observation, cameras):
    """Back-project valid keypoints; average points seen by several cameras.

    Returns (points (L, 3) with NaN where unseen, valid mask (L,)).
    """
    C, L = obs.valid.shape
    acc = np.zeros((L, 3))
    cnt = np.zeros(L)
    for c, cam in enumerate(cameras):
        v = obs.valid[c]
        if v.any():
            acc[v] += cam.backproject(obs.keypoints_2d[c][v], obs.depth[c][v])
            cnt[v] += 1
    valid = cnt > 0
    pts = np.full((L, 3), np.nan)
    pts[valid] = acc[valid] / cnt[valid, None]
    return pts, valid


# --------------------------------------------------------------------------- robust registration

@dataclass(frozen=True)
class RegistrationConfig:
    tol_mm: float = 0.01
    tol_rad: float = 1e-4
    max_iters: int = 50
    reject_rmse: float = 20.0
    tukey_c: float = TUKEY_C
    min_scale_mm: float = 0.5
    min_inlier_fraction: float = 0.25


@dataclass
class RegistrationResult:
    pose: Rigid                      # world-from-model
    inlier_weights: np.ndarray
    rmse_inlier: float
    iterations: int
    converged: bool
    objective_history: list = field(default_factory=list)
    scale: float = float("nan")
    n_inliers: int = 0

    def accepted(self, cfg: RegistrationConfig | None = None) -> bool:
        cfg = cfg or RegistrationConfig()
        return self.converged and self.rmse_inlier <= cfg.reject_rmse


def _tukey(r, s, c):
    cs = c * s
    v = np.maximum(1.0 - (r / cs) ** 2, 0.0)
    w = v * v
    rho = (1.0 - w * v) * (cs * cs / 6.0)
    return w, rho


def _mad_scale(r):
    # residual norms are non-negative, so the deviation is taken about zero
    n = r.shape[-1]
    part = np.partition(r, [(n - 1) // 2, n // 2], axis=-1)
    return MAD_TO_SIGMA * 0.5 * (part[..., (n - 1) // 2] + part[..., n // 2])


def _check_spread(P):
    if len(P) < 4:
        raise RegistrationError(f"need at least 4 valid correspondences, got {len(P)}")
    sv = np.linalg.svd(P - P.mean(axis=0), compute_uv=False)
    if sv[0] < 1e-9 or sv[1] < 1e-6 * sv[0]:
        raise RegistrationError("degenerate correspondence spread (collinear points)")


def irls_batch(P, Q, R0, t0, cfg: RegistrationConfig):
    """Tukey-biweight IRLS for a batch of model point sets sharing targets.

    P : (B, n, 3) model points, Q : (n, 3) targets (all valid), R0/t0 : initial poses.
    The robust objective sum(s^2 * rho(r/s)) is non-increasing because the
    MAD scale is only ever allowed to shrink.
    """
    B, n, _ = P.shape
    R = R0.copy()
    t = t0.copy()
    c = cfg.tukey_c
    cos_tol = np.cos(cfg.tol_rad)

    def residuals(P, R, t):
        d = np.matmul(P, np.transpose(R, (0, 2, 1))) + t[:, None] - Q
        return np.sqrt((d * d).sum(axis=2))

    res = residuals(P, R, t)
    s = np.maximum(_mad_scale(res), cfg.min_scale_mm)
    w, rho = _tukey(res, s[:, None], c)
    obj = rho.sum(axis=1)
    history = [obj.copy()]
    converged = np.zeros(B, bool)
    iters = np.zeros(B, int)
    idx = np.arange(B)
    for _ in range(cfg.max_iters):
        idx = idx[(w[idx] > 0).sum(axis=1) >= 3]
        if idx.size == 0:
            break
        Pi = P[idx]
        Rn, tn = kabsch_batch(Pi, Q, w[idx])
        dt = np.sqrt(((tn - t[idx]) ** 2).sum(axis=1))
        cosang = ((Rn * R[idx]).sum(axis=(1, 2)) - 1.0) / 2.0
        R[idx] = Rn
        t[idx] = tn
        iters[idx] += 1
        r_new = residuals(Pi, Rn, tn)
        res[idx] = r_new
        s[idx] = np.maximum(np.minimum(s[idx], _mad_scale(r_new)), cfg.min_scale_mm)
        w[idx], rho_i = _tukey(r_new, s[idx][:, None], c)
        obj[idx] = rho_i.sum(axis=1)
        history.append(obj.copy())
        done = (dt < cfg.tol_mm) & (cosang > cos_tol)
        converged[idx[done]] = True
        idx = idx[~done]
    return R, t, w, res, s, iters, converged, np.array(history)


def _inlier_stats(res, w):
    inl = w > 0.5
    n_in = inl.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        rmse = np.sqrt(np.where(inl, res ** 2, 0.0).sum(axis=-1) / n_in)
    return np.where(n_in > 0, rmse, np.inf), n_in


def robust_register(model_points, world_points, valid=None, cfg: RegistrationConfig | None = None,
                    init: Rigid | None = None) -> RegistrationResult:
    """Outlier-robust rigid fit of ``model_points`` onto ``world_points``.

    Returns the world-from-model pose. Points with ``valid`` False (or NaN)
    are ignored. Without ``init`` the first iterate is the unweighted fit.
    """
    cfg = cfg or RegistrationConfig()
    P = np.asarray(model_points, float)
    Q = np.asarray(world_points, float)
    if P.shape != Q.shape:
        raise RegistrationError("model and world point sets differ in shape")
    v = np.ones(len(P), bool) if valid is None else np.asarray(valid, bool).copy()
    v &= np.all(np.isfinite(P), 1) & np.all(np.isfinite(Q), 1)
    Pv, Qv = P[v], Q[v]
    _check_spread(Pv)
    if init is None:
        R0, t0 = kabsch_batch(Pv[None], Qv, np.ones((1, len(Pv))))
    else:
        R0, t0 = init.R[None].copy(), init.t[None].copy()
    R, t, w, res, s, iters, conv, hist = irls_batch(Pv[None], Qv, R0, t0, cfg)
    rmse, n_in = _inlier_stats(res[0], w[0])
    weights = np.zeros(len(P))
    weights[v] = w[0]
    converged = bool(conv[0]) and n_in >= max(4, cfg.min_inlier_fraction * len(Pv))
    return RegistrationResult(Rigid(R[0], t[0]), weights, float(rmse), int(iters[0]), converged,
                              list(hist[:, 0]), float(s[0]), int(n_in))


# --------------------------------------------------------------------------- mouth tracking

@dataclass(frozen=True)
class TrackerConfig:
    jaw_steps: int = 40
    local_steps: int = 3           # +/- grid steps searched when warm-started
    refine: bool = True
    open_threshold: float = DEFAULT_OPEN_THRESHOLD_MM
    hold_s: float = 0.5
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)


@dataclass
class TrackResult:
    mouth: MouthPose
    registration: RegistrationResult
    jaw_angle: float
    keypoints_3d: np.ndarray       # posed model landmarks (world)


def _score(res, scale, c=TUKEY_C):
    """Tukey loss at a scale shared by all candidates; rejected points cost the cap."""
    return _tukey(res, scale, c)[1].sum(axis=-1)


def reseat_on_rays(obs: Observation, cameras, model_world, points, replace_mask):
    """Move selected lifted points onto their observed camera rays at model depth.

    A rejected keypoint usually has a bad depth but a usable pixel; keeping the
    pixel and taking depth from the posed model turns it into a ray constraint.
    """
    out = points.copy()
    acc = np.zeros_like(points)
    cnt = np.zeros(len(points))
    for c, cam in enumerate(cameras):
        sel = replace_mask & obs.valid[c]
        if not sel.any():
            continue
        centre = cam.extrinsic.inverse().t
        d = cam.ray_direction(obs.keypoints_2d[c][sel])
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        lam = ((model_world[sel] - centre) * d).sum(axis=1)
        acc[sel] += centre + lam[:, None] * d
        cnt[sel] += 1
    hit = cnt > 0
    out[hit] = acc[hit] / cnt[hit, None]
    return out


def _grid_register(template, params, cands, valid, Qv, R0, t0, cfg, s_common=None):
    models = landmarks_for_jaw_angles(template, params.shape, params.expression, cands)
    Pv = models[:, valid]
    out = irls_batch(Pv, Qv, R0, t0, cfg.registration)
    R, t, w, res, s = out[:5]
    if s_common is None:
        s_common = float(s.min())
    scores = _score(res, s_common, cfg.registration.tukey_c)
    return out, scores, s_common


def track_mouth(template: HeadTemplate, params: HeadParams, obs: Observation, cameras,
                prev: TrackResult | RegistrationResult | None = None,
                cfg: TrackerConfig | None = None) -> TrackResult:
    """Pose the personalised head model to the lifted keypoints and read the mouth.

    Shape and expression come from ``params``; the jaw angle is found by a
    grid search (local around ``prev`` when given), a second local pass after
    rejected keypoints are re-seated on their camera rays, and a parabolic
    refinement. The mouth pose is read from the posed model, never from the
    raw mouth-region depth.
    """
    cfg = cfg or TrackerConfig()
    pts, valid = lift(obs, cameras)
    Qv = pts[valid]
    grid = np.linspace(0.0, template.jaw_max, cfg.jaw_steps)
    step = grid[1] - grid[0]
    prev_reg = prev.registration if isinstance(prev, TrackResult) else prev
    prev_jaw = prev.jaw_angle if isinstance(prev, TrackResult) else None

    def window(centre_jaw):
        k = int(round(centre_jaw / step))
        lo, hi = max(0, k - cfg.local_steps), min(cfg.jaw_steps - 1, k + cfg.local_steps)
        return grid[lo:hi + 1]

    cands = window(prev_jaw) if prev_jaw is not None else grid
    _check_spread(landmarks_for_jaw_angles(template, params.shape, params.expression, cands[:1])[0][valid])
    B = len(cands)
    if prev_reg is not None:
        R0 = np.broadcast_to(prev_reg.pose.R, (B, 3, 3)).copy()
        t0 = np.broadcast_to(prev_reg.pose.t, (B, 3)).copy()
    else:
        Pv = landmarks_for_jaw_angles(template, params.shape, params.expression, cands)[:, valid]
        R0, t0 = kabsch_batch(Pv, Qv, np.ones(Pv.shape[:2]))
    out, scores, s_common = _grid_register(template, params, cands, valid, Qv, R0, t0, cfg)
    best = int(np.argmin(scores))

    rejected = np.zeros(len(valid), bool)
    rejected[valid] = out[2][best] == 0.0
    if rejected.any():
        model = landmarks_for_jaw_angles(template, params.shape, params.expression, [cands[best]])[0]
        posed = Rigid(out[0][best], out[1][best]).apply(model)
        pts = reseat_on_rays(obs, cameras, posed, pts, rejected)
        Qv = pts[valid]
        cands = window(cands[best])
        B = len(cands)
        R0 = np.broadcast_to(out[0][best], (B, 3, 3)).copy()
        t0 = np.broadcast_to(out[1][best], (B, 3)).copy()
        out, scores, s_common = _grid_register(template, params, cands, valid, Qv, R0, t0, cfg)
        best = int(np.argmin(scores))

    jaw = float(cands[best])
    chosen = tuple(x[best] for x in out[:7]) + (out[7][:, best],)
    if cfg.refine and 0 < best < len(cands) - 1 and np.all(np.isfinite(scores[best - 1:best + 2])):
        y0, y1, y2 = scores[best - 1:best + 2]
        denom = y0 - 2 * y1 + y2
        if denom > 1e-12:
            off = 0.5 * (y0 - y2) / denom
            j2 = float(np.clip(jaw + off * (cands[1] - cands[0]), 0.0, template.jaw_max))
            r2, sc2, _ = _grid_register(template, params, np.array([j2]), valid, Qv,
                                        out[0][best:best + 1].copy(), out[1][best:best + 1].copy(), cfg, s_common)
            if sc2[0] <= scores[best]:
                jaw = j2
                chosen = tuple(x[0] for x in r2[:7]) + (r2[7][:, 0],)

    Rb, tb, wb, resb, sb, itb, convb, histb = chosen
    rmse, n_in = _inlier_stats(resb, wb)
    weights = np.zeros(len(valid))
    weights[valid] = wb
    converged = bool(convb) and n_in >= max(4, cfg.registration.min_inlier_fraction * valid.sum())
    reg = RegistrationResult(Rigid(Rb, tb), weights, float(rmse), int(itb), converged,
                             list(histb), float(sb), int(n_in))
    model = landmarks_for_jaw_angles(template, params.shape, params.expression, [jaw])[0]
    posed = reg.pose.apply(model)
    mouth = mouth_state(posed, template, cfg.open_threshold, obs.timestamp)
    return TrackResult(mouth, reg, jaw, posed)


def direct_depth_mouth(obs: Observation, cameras, template: HeadTemplate):
    """Baseline: mouth landmarks lifted straight from the (possibly corrupt) depth."""
    pts, valid = lift(obs, cameras)
    return pts[template.mouth_indices]


def mouth_keypoint_rmse(est, truth) -> float:
    est = np.asarray(est, float)
    truth = np.asarray(truth, float)
    ok = np.all(np.isfinite(est), axis=1)
    if not ok.any():
        return float("inf")
    return float(np.sqrt(((est[ok] - truth[ok]) ** 2).sum(axis=1).mean()))


class MouthTracker:
    """Per-session tracker: warm starts and the bounded hold-last-pose policy."""

    def __init__(self, template: HeadTemplate, params: HeadParams, cfg: TrackerConfig | None = None):
        self.template = template
        self.params = params
        self.cfg = cfg or TrackerConfig()
        self.prev: TrackResult | None = None
        self.last_good_time: float | None = None

    def update(self, obs: Observation, cameras):
        """Returns (MouthPose or None, status) with status in {'ok', 'held', 'lost'}."""
        try:
            res = track_mouth(self.template, self.params, obs, cameras, self.prev, self.cfg)
            if not res.registration.accepted(self.cfg.registration):
                raise RegistrationError("registration rejected")
        except (RegistrationError, DegenerateGeometryError) as exc:
            log.debug("perception dropout at t=%.3f: %s", obs.timestamp, exc)
            if self.prev is not None and self.last_good_time is not None \
                    and obs.timestamp - self.last_good_time <= self.cfg.hold_s:
                return self.prev.mouth, "held"
            return None, "lost"
        self.prev = res
        self.last_good_time = obs.timestamp
        return res.mouth, "ok"

    @property
    def last(self) -> TrackResult | None:
        return self.prev


# --------------------------------------------------------------------------- benchmarks

def registration_trial(template: HeadTemplate, seed, outlier_fraction: float = 0.3, box_mm: float = 250.0,
                       cfg: RegistrationConfig | None = None) -> dict:
    """Recover a random rigid pose of the neutral landmarks with a fraction replaced by uniform outliers."""
    rng = np.random.default_rng(seed)
    P = synthesize(template, HeadParams.neutral(template))
    T = Rigid(random_rotation(rng), rng.uniform(-200.0, 200.0, 3))
    Q = T.apply(P)
    idx = rng.choice(len(P), int(round(outlier_fraction * len(P))), replace=False)
    Q[idx] = T.t + rng.uniform(-box_mm, box_mm, (len(idx), 3))
    t0 = time.perf_counter()
    res = robust_register(P, Q, cfg=cfg)
    elapsed = time.perf_counter() - t0
    t_err, r_err = pose_error(res.pose, T)
    h = np.asarray(res.objective_history)
    monotone = bool(np.all(np.diff(h) <= 1e-9 * np.maximum(1.0, h[:-1])))
    return {"translation_error_mm": float(t_err), "rotation_error_deg": float(np.degrees(r_err)),
            "iterations": res.iterations, "objective_monotone": monotone, "seconds": elapsed}


def occlusion_trial(template: HeadTemplate, mounts, seed, level: str = "full",
                    cfg: TrackerConfig | None = None) -> dict:
    """Mouth error of the tracker with and without mouth-region corruption, and of the direct-depth baseline.

    The head gets a random identity, jaw angle and pose; the utensil sits at
    the mouth with the cameras on it. Both observations share one noise draw,
    and the corrupted one applies ``level`` inside a mask around the mouth.
    """
    ss = np.random.SeedSequence(seed)
    rng = np.random.default_rng(ss.spawn(1)[0])
    params = sample_params(template, rng, jaw_angle=rng.uniform(0.0, template.jaw_max),
                           pose=Rigid.from_rotvec(rng.normal(0.0, 0.1, 3), rng.normal(0.0, 20.0, 3)))
    kp = synthesize(template, params)
    mouth_true = kp[template.mouth_indices]
    cams = [m.at(mouth_state(kp, template).frame) for m in mounts]
    masks = mouth_masks(cams, mouth_true)
    obs_seed = int(ss.generate_state(1)[0])
    clean = observe(kp, cams, occlusion_preset("none", masks), obs_seed)
    bad = observe(kp, cams, occlusion_preset(level, masks), obs_seed)
    e_clean = mouth_keypoint_rmse(track_mouth(template, params, clean, cams, cfg=cfg).keypoints_3d[
        template.mouth_indices], mouth_true)
    e_bad = mouth_keypoint_rmse(track_mouth(template, params, bad, cams, cfg=cfg).keypoints_3d[
        template.mouth_indices], mouth_true)
    e_direct = mouth_keypoint_rmse(direct_depth_mouth(bad, cams, template), mouth_true)
    return {"jaw_angle": float(params.jaw_angle), "error_clean_mm": e_clean, "error_occluded_mm": e_bad,
            "error_direct_mm": e_direct,
            "robust": bool(e_bad <= 2.0 * e_clean), "beats_baseline": bool(e_direct >= 10.0 * e_bad)}


def perception_bench(template: HeadTemplate, mounts, trials: int = 100, seed: int = 0,
                     level: str = "full") -> list[dict]:
    """Per-trial rows of :func:`occlusion_trial` for seeds derived from ``seed``."""
    occlusion_preset(level)
    rows = []
    for k in range(trials):
        row = occlusion_trial(template, mounts, [int(seed), k, 4242], level)
        rows.append({"trial": k, **row})
    return rows
