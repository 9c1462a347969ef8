"""Linear blendshape head model with a hinged jaw.

Coordinates are millimetres in the head frame: +y up, +z out of the face,
+x toward landmark 54 (the mouth corner that appears on the right of a
frontal image). Landmarks follow the 68-point iBUG ordering.

``mouth_indices`` holds positions into the landmark list in a fixed order::

    [outer corner -x, outer corner +x, inner corner -x, inner corner +x,
     5 outer (upper, lower) pairs, 3 inner (upper, lower) pairs]

Aperture is the mean distance over the three inner pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DegenerateGeometryError
from .geometry import Rigid, rotation_about_axis

TEMPLATE_HEADER = "headmodel-v1"
DEFAULT_OPEN_THRESHOLD_MM = 15.0
DEFAULT_TEMPLATE_SEED = 20240311

N_VERTICES = 200
N_LANDMARKS = 68
N_SHAPE = 10
N_EXPRESSION = 5
JAW_MAX = 0.5

MOUTH_LANDMARKS = [48, 54, 60, 64,
                   49, 59, 50, 58, 51, 57, 52, 56, 53, 55,
                   61, 67, 62, 66, 63, 65]
N_CORNERS = 4
N_OUTER_PAIRS = 5
N_INNER_PAIRS = 3


@dataclass(frozen=True)
class HeadTemplate:
    vertices: np.ndarray            # (N, 3)
    shape_basis: np.ndarray         # (N, 3, S)
    expression_basis: np.ndarray    # (N, 3, E)
    jaw_region: np.ndarray          # vertex indices
    jaw_hinge: np.ndarray           # (3,)
    jaw_axis: np.ndarray            # unit (3,)
    landmark_indices: np.ndarray    # (L,) vertex indices
    mouth_indices: np.ndarray       # positions into landmark_indices
    jaw_max: float = JAW_MAX

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_shape(self) -> int:
        return self.shape_basis.shape[2]

    @property
    def n_expression(self) -> int:
        return self.expression_basis.shape[2]

    @property
    def n_landmarks(self) -> int:
        return len(self.landmark_indices)

    @property
    def upper_positions(self) -> np.ndarray:
        pairs = self.mouth_indices[N_CORNERS:].reshape(-1, 2)
        return pairs[:, 0]

    @property
    def lower_positions(self) -> np.ndarray:
        pairs = self.mouth_indices[N_CORNERS:].reshape(-1, 2)
        return pairs[:, 1]

    @property
    def inner_pairs(self) -> np.ndarray:
        return self.mouth_indices[N_CORNERS:].reshape(-1, 2)[-N_INNER_PAIRS:]

    @property
    def corner_positions(self) -> tuple[int, int]:
        return int(self.mouth_indices[0]), int(self.mouth_indices[1])

    @cached_property
    def jaw_landmark_mask(self) -> np.ndarray:
        return np.isin(self.landmark_indices, self.jaw_region)

    def validate(self) -> None:
        n = self.n_vertices
        if self.shape_basis.shape[:2] != (n, 3) or self.expression_basis.shape[:2] != (n, 3):
            raise ConfigurationError("basis shape does not match vertex count")
        for name in ("jaw_region", "landmark_indices"):
            idx = getattr(self, name)
            if len(idx) and (idx.min() < 0 or idx.max() >= n):
                raise ConfigurationError(f"{name} out of range")
        m = self.mouth_indices
        if m.min() < 0 or m.max() >= self.n_landmarks:
            raise ConfigurationError("mouth_indices out of range")
        if (len(m) - N_CORNERS) % 2:
            raise ConfigurationError("mouth_indices must hold corners then lip pairs")
        upper = self.landmark_indices[self.upper_positions]
        lower = self.landmark_indices[self.lower_positions]
        if np.isin(upper, self.jaw_region).any():
            raise ConfigurationError("upper-lip landmarks must lie outside the jaw region")
        if not np.isin(lower, self.jaw_region).all():
            raise ConfigurationError("lower-lip landmarks must lie inside the jaw region")
        for arr in (self.vertices, self.shape_basis, self.expression_basis, self.jaw_hinge, self.jaw_axis):
            if not np.all(np.isfinite(arr)):
                raise ConfigurationError("template contains non-finite values")


@dataclass
class HeadParams:
    shape: np.ndarray
    expression: np.ndarray
    jaw_angle: float = 0.0
    pose: Rigid = field(default_factory=Rigid.identity)

    @classmethod
    def neutral(cls, template: HeadTemplate, pose: Rigid | None = None, jaw_angle: float = 0.0) -> "HeadParams":
        return cls(np.zeros(template.n_shape), np.zeros(template.n_expression), jaw_angle,
                   pose or Rigid.identity())

    def validate(self, template: HeadTemplate) -> None:
        if np.shape(self.shape) != (template.n_shape,):
            raise ConfigurationError(f"shape has {np.size(self.shape)} coefficients, template expects {template.n_shape}")
        if np.shape(self.expression) != (template.n_expression,):
            raise ConfigurationError(
                f"expression has {np.size(self.expression)} coefficients, template expects {template.n_expression}")
        if not (-1e-12 <= self.jaw_angle <= template.jaw_max + 1e-12):
            raise ConfigurationError(f"jaw_angle {self.jaw_angle} outside [0, {template.jaw_max}]")
        if not self.pose.is_proper():
            raise ConfigurationError("pose rotation is not a proper rotation")


@dataclass(frozen=True)
class MouthPose:
    frame: Rigid
    aperture: float
    open: bool
    timestamp: float = 0.0

    @property
    def center(self) -> np.ndarray:
        return self.frame.t

    @property
    def normal(self) -> np.ndarray:
        return self.frame.R[:, 2]


# --------------------------------------------------------------------------- synthesis

def deformed_vertices(template: HeadTemplate, shape, expression) -> np.ndarray:
    return (template.vertices
            + template.shape_basis @ np.asarray(shape, float)
            + template.expression_basis @ np.asarray(expression, float))


def _jaw_rotate(points: np.ndarray, template: HeadTemplate, angle: float) -> np.ndarray:
    R = rotation_about_axis(template.jaw_axis, angle)
    return (points - template.jaw_hinge) @ R.T + template.jaw_hinge


def synthesize_vertices(template: HeadTemplate, params: HeadParams) -> np.ndarray:
    params.validate(template)
    v = deformed_vertices(template, params.shape, params.expression)
    jaw = template.jaw_region
    v[jaw] = _jaw_rotate(v[jaw], template, params.jaw_angle)
    return params.pose.apply(v)


def synthesize(template: HeadTemplate, params: HeadParams) -> np.ndarray:
    """World-frame landmarks (L, 3) for the given parameters."""
    return synthesize_vertices(template, params)[template.landmark_indices]


def landmarks_for_jaw_angles(template: HeadTemplate, shape, expression, jaw_angles) -> np.ndarray:
    """Model-frame landmarks for a batch of jaw angles, shape (B, L, 3)."""
    lm = deformed_vertices(template, shape, expression)[template.landmark_indices]
    mask = template.jaw_landmark_mask
    angles = np.atleast_1d(np.asarray(jaw_angles, float))
    out = np.broadcast_to(lm, (len(angles),) + lm.shape).copy()
    axis = template.jaw_axis / np.linalg.norm(template.jaw_axis)
    p = lm[mask] - template.jaw_hinge
    # Rodrigues, vectorised over angles
    c = np.cos(angles)[:, None, None]
    s = np.sin(angles)[:, None, None]
    kxp = np.cross(axis, p)[None]
    kdp = (p @ axis)[None, :, None] * axis[None, None, :]
    out[:, mask] = p[None] * c + kxp * s + kdp * (1 - c) + template.jaw_hinge
    return out


# --------------------------------------------------------------------------- mouth state

def mouth_state(keypoints, template: HeadTemplate, open_threshold: float = DEFAULT_OPEN_THRESHOLD_MM,
                timestamp: float = 0.0) -> MouthPose:
    """Mouth frame, aperture and open flag from ordered landmarks.

    Rows that are NaN count as missing.
    """
    kp = np.asarray(keypoints, float)
    m = kp[template.mouth_indices]
    ok = np.all(np.isfinite(m), axis=1)
    if ok.sum() < 3:
        raise DegenerateGeometryError("fewer than 3 valid mouth keypoints")
    pts = m[ok]
    origin = pts.mean(axis=0)
    _, sv, Vt = np.linalg.svd(pts - origin)
    if sv[1] < 1e-9:
        raise DegenerateGeometryError("mouth keypoints are collinear")
    n = Vt[2]

    left, right = template.corner_positions
    if np.all(np.isfinite(kp[[left, right]])):
        x_dir = kp[right] - kp[left]
    else:
        x_dir = Vt[0]
    upper = kp[template.upper_positions]
    lower = kp[template.lower_positions]
    up_ok = np.all(np.isfinite(upper), 1) & np.all(np.isfinite(lower), 1)
    if not up_ok.any():
        raise DegenerateGeometryError("no complete upper/lower lip pair")
    up_dir = (upper[up_ok] - lower[up_ok]).mean(axis=0)
    if np.dot(n, np.cross(x_dir, up_dir)) < 0:
        n = -n
    x = x_dir - np.dot(x_dir, n) * n
    nx = np.linalg.norm(x)
    if nx < 1e-9:
        raise DegenerateGeometryError("mouth corners coincide")
    x = x / nx
    y = np.cross(n, x)
    R = np.column_stack([x, y, n])

    pairs = template.inner_pairs
    a = kp[pairs[:, 0]]
    b = kp[pairs[:, 1]]
    valid = np.all(np.isfinite(a), 1) & np.all(np.isfinite(b), 1)
    if not valid.any():
        raise DegenerateGeometryError("no complete inner lip pair for aperture")
    aperture = float(np.linalg.norm(a[valid] - b[valid], axis=1).mean())
    return MouthPose(Rigid(R, origin), aperture, aperture > open_threshold, timestamp)


# --------------------------------------------------------------------------- procedural template

def _face_depth(x, y):
    base = 95.0 * np.sqrt(np.clip(1.0 - (x / 75.0) ** 2 - (y / 115.0) ** 2, 0.0, None))
    nose = 25.0 * np.exp(-((x / 12.0) ** 2 + ((y - 8.0) / 22.0) ** 2))
    lips = 7.0 * np.exp(-((x / 28.0) ** 2 + ((y + 50.0) / 12.0) ** 2))
    chin = 12.0 * np.exp(-((x / 25.0) ** 2 + ((y + 88.0) / 15.0) ** 2))
    eyes = -5.0 * (np.exp(-(((x + 32.0) / 12.0) ** 2 + ((y - 35.0) / 8.0) ** 2))
                   + np.exp(-(((x - 32.0) / 12.0) ** 2 + ((y - 35.0) / 8.0) ** 2)))
    return base + nose + lips + chin + eyes


def _landmark_xy() -> np.ndarray:
    xy = np.zeros((N_LANDMARKS, 2))
    phi = np.pi * np.arange(17) / 16.0
    xy[0:17, 0] = -68.0 * np.cos(phi)
    xy[0:17, 1] = -5.0 - 85.0 * np.sin(phi)
    xy[17:22] = np.column_stack([np.linspace(-52, -14, 5), [46, 51, 53, 52, 49]])
    xy[22:27] = np.column_stack([np.linspace(14, 52, 5), [49, 52, 53, 51, 46]])
    xy[27:31] = np.column_stack([np.zeros(4), [36, 26, 16, 6]])
    xy[31:36] = np.column_stack([[-12, -6, 0, 6, 12], [-6, -8, -9, -8, -6]])
    eye = np.array([[-12, 0], [-6, 3], [2, 3], [8, 0], [2, -3], [-6, -3]], float)
    xy[36:42] = eye * [1, 1] + [-30, 35]
    xy[42:48] = eye[[3, 2, 1, 0, 5, 4]] * [-1, 1] + [30, 35]
    ym = -50.0
    outer = [(-25, 0), (-16, 5), (-7, 8), (0, 7), (7, 8), (16, 5),
             (25, 0), (16, -7), (7, -10), (0, -10.5), (-7, -10), (-16, -7)]
    inner = [(-20, 0), (-8, 1), (0, 1), (8, 1), (20, 0), (8, -1), (0, -1), (-8, -1)]
    xy[48:60] = np.array(outer) + [0, ym]
    xy[60:68] = np.array(inner) + [0, ym]
    return xy


def _fibonacci_surface(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    theta = np.pi * (1 + 5 ** 0.5) * i
    d = np.column_stack([np.cos(theta) * np.sin(phi), np.cos(phi), np.sin(theta) * np.sin(phi)])
    return d * [72.0, 110.0, 92.0]


def _rbf_field(points, rng, n_centers, length, amplitude):
    centers = points[rng.choice(len(points), n_centers, replace=False)]
    amps = rng.normal(0.0, amplitude, size=(n_centers, 3))
    d2 = ((points[:, None, :] - centers[None]) ** 2).sum(-1)
    return np.exp(-d2 / (2 * length ** 2)) @ amps


def generate_template(seed: int = DEFAULT_TEMPLATE_SEED) -> HeadTemplate:
    """Procedural head: ellipsoid with nose, lips and chin bumps plus smooth bases."""
    rng = np.random.default_rng(seed)
    xy = _landmark_xy()
    lm = np.column_stack([xy, _face_depth(xy[:, 0], xy[:, 1])])
    extra = _fibonacci_surface(N_VERTICES - N_LANDMARKS)
    front = extra[:, 2] > 0
    extra[front, 2] = np.maximum(extra[front, 2], _face_depth(extra[front, 0], extra[front, 1]))
    vertices = np.vstack([lm, extra])
    landmark_indices = np.arange(N_LANDMARKS)

    shape_basis = np.zeros((N_VERTICES, 3, N_SHAPE))
    shape_basis[:, :, 0] = vertices * [0.03, 0.0, 0.0]          # width
    shape_basis[:, :, 1] = vertices * [0.0, 0.03, 0.0]          # height
    shape_basis[:, :, 2] = vertices * [0.0, 0.0, 0.03]          # depth
    for k in range(3, N_SHAPE):
        shape_basis[:, :, k] = _rbf_field(vertices, rng, 4, 55.0, 2.0)

    x, y, z = vertices.T
    expr = np.zeros((N_VERTICES, 3, N_EXPRESSION))
    g = np.exp(-(((np.abs(x) - 25.0) ** 2) / 100.0 + ((y + 50.0) ** 2) / 150.0)) * (z > 0)
    expr[:, 0, 0] = 2.0 * np.sign(x) * g                         # smile
    expr[:, 1, 0] = 3.0 * g
    g = np.exp(-((x ** 2) / 400.0 + ((y + 50.0) ** 2) / 100.0)) * (z > 0)
    expr[:, 2, 1] = 4.0 * g                                      # pucker
    g = np.exp(-(((np.abs(x) - 32.0) ** 2) / 400.0 + ((y - 50.0) ** 2) / 60.0)) * (z > 0)
    expr[:, 1, 2] = 4.0 * g                                      # brow raise
    g = np.exp(-(((np.abs(x) - 30.0) ** 2) / 150.0 + ((y - 35.0) ** 2) / 20.0)) * (z > 0)
    expr[:, 1, 3] = -1.5 * g                                     # squint
    g = np.exp(-(((np.abs(x) - 45.0) ** 2) / 200.0 + ((y + 30.0) ** 2) / 300.0)) * (z > 0)
    expr[:, 0, 4] = 3.0 * np.sign(x) * g                         # cheek puff

    jaw_region = np.flatnonzero((y < -50.0 - 1e-9) & (z > -30.0))
    t = HeadTemplate(vertices=vertices, shape_basis=shape_basis, expression_basis=expr,
                     jaw_region=jaw_region, jaw_hinge=np.array([0.0, -45.0, 20.0]),
                     jaw_axis=np.array([1.0, 0.0, 0.0]), landmark_indices=landmark_indices,
                     mouth_indices=np.array(MOUTH_LANDMARKS), jaw_max=JAW_MAX)
    t.validate()
    return t


def sample_params(template: HeadTemplate, rng: np.random.Generator, shape_sigma: float = 1.0,
                  expression_sigma: float = 0.5, jaw_angle: float = 0.0, pose: Rigid | None = None) -> HeadParams:
    """Draw identity/expression coefficients from the default Gaussian prior."""
    return HeadParams(rng.normal(0, shape_sigma, template.n_shape),
                      rng.normal(0, expression_sigma, template.n_expression),
                      jaw_angle, pose or Rigid.identity())


# --------------------------------------------------------------------------- file format

def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(values))


def save_template(template: HeadTemplate, path) -> None:
    """Write the ``headmodel-v1`` text format.

    Layout after the header line: ``N S E L``; vertices (N*3, row-major);
    shape_basis (N*3*S); expression_basis (N*3*E); jaw hinge (3); jaw axis (3);
    jaw_max; jaw-region count J then J indices; L landmark indices;
    mouth count M then M landmark positions. One block per line.
    """
    t = template
    lines = [TEMPLATE_HEADER,
             f"{t.n_vertices} {t.n_shape} {t.n_expression} {t.n_landmarks}",
             _fmt(t.vertices), _fmt(t.shape_basis), _fmt(t.expression_basis),
             _fmt(t.jaw_hinge), _fmt(t.jaw_axis), repr(float(t.jaw_max)),
             f"{len(t.jaw_region)} " + " ".join(str(int(i)) for i in t.jaw_region),
             " ".join(str(int(i)) for i in t.landmark_indices),
             f"{len(t.mouth_indices)} " + " ".join(str(int(i)) for i in t.mouth_indices)]
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_template(text: str) -> HeadTemplate:
    head, _, rest = text.partition("\n")
    if head.strip() != TEMPLATE_HEADER:
        raise ConfigurationError(f"expected header {TEMPLATE_HEADER!r}, got {head.strip()!r}")
    tok = rest.split()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(tok):
            raise ConfigurationError("template file truncated")
        out = np.array(tok[pos:pos + n], dtype=float)
        pos += n
        return out

    N, S, E, L = (int(v) for v in take(4))
    vertices = take(N * 3).reshape(N, 3)
    shape_basis = take(N * 3 * S).reshape(N, 3, S)
    expression_basis = take(N * 3 * E).reshape(N, 3, E)
    hinge = take(3)
    axis = take(3)
    jaw_max = float(take(1)[0])
    J = int(take(1)[0])
    jaw_region = take(J).astype(int)
    landmark_indices = take(L).astype(int)
    M = int(take(1)[0])
    mouth = take(M).astype(int)
    if pos != len(tok):
        raise ConfigurationError("trailing data in template file")
    t = HeadTemplate(vertices, shape_basis, expression_basis, jaw_region, hinge, axis,
                     landmark_indices, mouth, jaw_max)
    t.validate()
    return t


def load_template(path=None) -> HeadTemplate:
    """Load a template file; ``None`` loads the shipped default."""
    if path is None:
        text = resources.files("bitetransfer.data").joinpath("head_template_v1.txt").read_text()
    else:
        text = Path(path).read_text()
    return _parse_template(text)


_DEFAULT: HeadTemplate | None = None


def default_template() -> HeadTemplate:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = load_template()
    return _DEFAULT
