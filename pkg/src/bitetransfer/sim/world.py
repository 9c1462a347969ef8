"""Head, utensil and contact physics shared by the interaction generator and the episode runner.

Forces here are the forces *on the utensil* in N; the simulated F/T sensor
reports them (plus torque about a sensor 120 mm behind the tip) in the tool
frame. Physics runs at 1 kHz.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from ..control.admittance import EndEffectorState, integrate
from ..geometry import Rigid, min_jerk
from ..headmodel import HeadParams, HeadTemplate, MouthPose, landmarks_for_jaw_angles, mouth_state, synthesize
from .profiles import ParticipantProfile

PHYSICS_DT = 0.001


@dataclass(frozen=True)
class ContactParams:
    tip_radius: float = 6.0          # mm, utensil tip plus food
    k_lip: float = 0.3               # N/mm
    k_face: float = 0.5              # N/mm
    lip_thickness: float = 8.0       # mm
    sensor_offset: float = 120.0     # mm from tip back to the F/T sensor along tool +z
    force_noise: float = 0.05        # N
    torque_noise: float = 6.0        # N*mm


def _rodrigues(v) -> np.ndarray:
    th = float(np.sqrt(v @ v))
    if th < 1e-12:
        return np.eye(3)
    k = v / th
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(th) * K + (1.0 - np.cos(th)) * (K @ K)


def _cross(a, b) -> np.ndarray:
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


class MouthTable:
    """Mouth frame, aperture and half-width in head coordinates as a function of jaw angle."""

    def __init__(self, template: HeadTemplate, shape, expression, n: int = 101):
        self.jaws = np.linspace(0.0, template.jaw_max, n)
        lms = landmarks_for_jaw_angles(template, shape, expression, self.jaws)
        left, right = template.corner_positions
        rv, ts, ap, hw = [], [], [], []
        for lm in lms:
            m = mouth_state(lm, template)
            rv.append(Rotation.from_matrix(m.frame.R).as_rotvec())
            ts.append(m.frame.t)
            ap.append(m.aperture)
            hw.append(0.5 * np.linalg.norm(lm[right] - lm[left]))
        self.rotvec = np.array(rv)
        self.origin = np.array(ts)
        self.aperture = np.array(ap)
        self.half_width = np.array(hw)

    def _interp(self, table, jaw):
        x = min(max(jaw, self.jaws[0]), self.jaws[-1])
        k = min(int(x / self.jaws[1]), len(self.jaws) - 2)
        f = (x - self.jaws[k]) / (self.jaws[k + 1] - self.jaws[k])
        return (1 - f) * table[k] + f * table[k + 1]

    def local(self, jaw: float):
        R = _rodrigues(self._interp(self.rotvec, jaw))
        return Rigid(R, self._interp(self.origin, jaw)), float(self._interp(self.aperture, jaw)), \
            float(self._interp(self.half_width, jaw))

    def jaw_for_aperture(self, aperture: float) -> float:
        return float(np.interp(aperture, self.aperture, self.jaws))


_TABLES: dict = {}


def mouth_table(template: HeadTemplate, profile: ParticipantProfile) -> MouthTable:
    key = (id(template), profile.shape.tobytes(), profile.expression.tobytes())
    if key not in _TABLES:
        if len(_TABLES) > 64:
            _TABLES.clear()
        _TABLES[key] = MouthTable(template, profile.shape, profile.expression)
    return _TABLES[key]


def lip_face_force(q, aperture: float, half_width: float, cp: ContactParams) -> np.ndarray:
    """Contact force (mouth frame) from lips and surrounding face on a tip at local ``q``.

    Lips push the shaft back toward the opening centre once it crosses the lip
    plane; away from the opening the face pushes the tip outward. All terms
    are continuous in ``q`` and in the aperture.
    """
    qx, qy, qz = q
    r = cp.tip_radius
    b = 0.5 * aperture
    s_in = min(max((r - qz) / r, 0.0), 1.0)
    excess = max(abs(qx) - half_width, abs(qy) - (b + cp.lip_thickness))
    w_face = min(max(excess / r, 0.0), 1.0)
    d_up = max(0.0, qy + r - b)
    d_low = max(0.0, -qy + r - b)
    d_right = max(0.0, qx + r - half_width)
    d_left = max(0.0, -qx + r - half_width)
    f_lip = cp.k_lip * s_in * (1.0 - w_face) * np.array([d_left - d_right, d_low - d_up, 0.0])
    f_face = np.array([0.0, 0.0, cp.k_face * w_face * max(0.0, r - qz)])
    return f_lip + f_face


def smooth_step(t, t0, duration):
    if duration <= 0:
        return float(t >= t0)
    return float(min_jerk((t - t0) / duration))


# --------------------------------------------------------------------------- intents

@dataclass
class Intent:
    """A user action that shapes head motion and/or pushes on the utensil."""
    label: str
    t_start: float
    t_end: float = np.inf
    release: float = 0.03            # ramp-down after t_end (s)

    def active(self, t) -> bool:
        return self.t_start <= t < self.t_end + self.release

    def gate(self, t) -> float:
        if t < self.t_start:
            return 0.0
        if t < self.t_end:
            return 1.0
        return 1.0 - smooth_step(t, self.t_end, self.release)

    def stop(self, t) -> None:
        if self.t_end == np.inf or t < self.t_end:
            self.t_end = max(t, self.t_start)

    def head_offset(self, t) -> np.ndarray:
        return np.zeros(3)

    def jaw(self, t, jaw):
        return jaw

    def force(self, t, world: "World", mouth: Rigid, q, tip) -> np.ndarray:
        return np.zeros(3)


@dataclass
class TapIntent(Intent):
    direction: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))   # mouth frame
    peak: float = 1.0
    duration: float = 0.04
    linger: float = 0.0              # N left resting on the lip after the tap
    linger_time: float = 0.0

    def __post_init__(self):
        self.t_end = self.t_start + self.duration
        self.release = self.linger_time

    def force(self, t, world, mouth, q, tip):
        if t < self.t_start or t >= self.t_end + self.linger_time:
            return np.zeros(3)
        if t >= self.t_end:
            return mouth.R @ (self.direction * self.linger)
        s = np.sin(np.pi * (t - self.t_start) / self.duration)
        if t - self.t_start > 0.5 * self.duration:
            s = max(s, self.linger / self.peak)
        return mouth.R @ (self.direction * self.peak * s)


@dataclass
class TongueIntent(Intent):
    target: np.ndarray = field(default_factory=lambda: np.array([12.0, 0.0, -10.0]))   # mouth frame, mm
    stiffness: float = 0.25          # N/mm
    max_force: float = 3.0
    ramp: float = 0.03
    pulse_hz: float = 0.0            # > 0: the tongue pushes in pulses

    def force(self, t, world, mouth, q, tip):
        g = self.gate(t) * smooth_step(t, self.t_start, self.ramp)
        if self.pulse_hz > 0 and t >= self.t_start:
            g *= 0.5 * (1.0 - np.cos(2 * np.pi * self.pulse_hz * (t - self.t_start)))
        if g == 0.0:
            return np.zeros(3)
        f = self.stiffness * (self.target - q)
        n = np.linalg.norm(f)
        if n > self.max_force:
            f *= self.max_force / n
        return mouth.R @ (g * f)


@dataclass
class BiteIntent(Intent):
    direction: np.ndarray = field(default_factory=lambda: np.array([0.0, -1.0, 0.0]))   # mouth frame
    peak: float = 6.0
    rise: float = 0.06
    jaw_from: float = 0.38
    jaw_to: float = 0.12
    close_time: float = 0.12
    lunge: np.ndarray = field(default_factory=lambda: np.zeros(3))    # world, mm
    taken: bool = False

    def head_offset(self, t):
        if t < self.t_start or not np.any(self.lunge):
            return np.zeros(3)
        return self.lunge * smooth_step(t, self.t_start, self.close_time)

    def jaw(self, t, jaw):
        if t < self.t_start:
            return jaw
        if self.taken:
            # food taken: the mouth stays nearly closed
            return self.jaw_to
        return self.jaw_from + (self.jaw_to - self.jaw_from) * smooth_step(t, self.t_start, self.close_time)

    def force(self, t, world, mouth, q, tip):
        if t < self.t_start or self.taken:
            return np.zeros(3)
        inside = min(max((world.contact.tip_radius - q[2]) / world.contact.tip_radius, 0.0), 1.0)
        return mouth.R @ (self.direction * self.peak * smooth_step(t, self.t_start, self.rise) * inside)


@dataclass
class ImpulseIntent(Intent):
    """Sudden whole-head displacement; tissue around an inserted utensil drags it along."""
    displacement: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 25.0]))  # world, mm
    rise: float = 0.15
    hold: float = 0.2
    back: float = 0.3
    stiffness: float = 0.5          # N/mm tissue coupling
    fade: float = 0.1
    clench: float = 0.0             # rad the jaw closes during the spasm
    anchor: np.ndarray | None = None

    def __post_init__(self):
        self.t_end = self.t_start + self.rise + self.hold + self.back
        self.release = self.fade

    def _profile(self, t) -> float:
        if t < self.t_start:
            return 0.0
        up = smooth_step(t, self.t_start, self.rise)
        down = smooth_step(t, self.t_start + self.rise + self.hold, self.back)
        return up - down

    def head_offset(self, t):
        return self.displacement * self._profile(t)

    def jaw(self, t, jaw):
        return jaw - self.clench * self._profile(t) if self.clench else jaw

    def force(self, t, world, mouth, q, tip):
        if t < self.t_start or not self.active(t):
            return np.zeros(3)
        head = world.head_pose(t)
        if self.anchor is None:
            if q[2] >= 0.0:
                self.anchor = np.full(3, np.nan)     # utensil outside the mouth: nothing to drag
            else:
                self.anchor = head.inverse().apply(np.asarray(tip, float))
        if not np.all(np.isfinite(self.anchor)):
            return np.zeros(3)
        return self.gate(t) * self.stiffness * (head.apply(self.anchor) - tip)


# --------------------------------------------------------------------------- world

@dataclass
class HeadScript:
    """Scripted head pose and jaw angle; ``pose_fn``/``jaw_fn`` map time to values."""
    base: Rigid
    pose_fn: object = None
    jaw_fn: object = None
    default_jaw: float = 0.0

    def pose(self, t) -> Rigid:
        return self.base if self.pose_fn is None else self.pose_fn(t)

    def jaw(self, t) -> float:
        return self.default_jaw if self.jaw_fn is None else float(self.jaw_fn(t))


class World:
    """Head + utensil + contacts; advance with :meth:`substep` at 1 kHz."""

    def __init__(self, template: HeadTemplate, profile: ParticipantProfile, script: HeadScript,
                 tool_pose: Rigid, rng: np.random.Generator, contact: ContactParams | None = None):
        self.template = template
        self.profile = profile
        self.script = script
        self.contact = contact or ContactParams()
        self.table = mouth_table(template, profile)
        self.rng = rng
        self.intents: list[Intent] = []
        self.t = 0.0
        self.ee = EndEffectorState(tool_pose)
        self.last_force = np.zeros(3)
        c = self.contact
        self._noise_scale = np.array([c.force_noise] * 3 + [c.torque_noise] * 3)

    # head ---------------------------------------------------------------
    def head_pose(self, t) -> Rigid:
        pose = self.script.pose(t)
        off = np.zeros(3)
        for it in self.intents:
            off = off + it.head_offset(t)
        return Rigid(pose.R, pose.t + off) if np.any(off) else pose

    def jaw(self, t) -> float:
        j = self.script.jaw(t)
        for it in self.intents:
            j = it.jaw(t, j)
        return float(min(max(j, 0.0), self.template.jaw_max))

    def mouth(self, t):
        """True mouth frame (world), aperture and half-width at time ``t``."""
        local, ap, hw = self.table.local(self.jaw(t))
        return self.head_pose(t) @ local, ap, hw

    def mouth_pose(self, t) -> MouthPose:
        frame, ap, _ = self.mouth(t)
        return MouthPose(frame, ap, ap > 15.0, t)

    def head_params(self, t) -> HeadParams:
        return HeadParams(self.profile.shape, self.profile.expression, self.jaw(t), self.head_pose(t))

    def keypoints(self, t) -> np.ndarray:
        return synthesize(self.template, self.head_params(t))

    # contact ------------------------------------------------------------
    @property
    def tip(self) -> np.ndarray:
        return self.ee.pose.t

    def force_at(self, t, tip) -> np.ndarray:
        frame, ap, hw = self.mouth(t)
        q = frame.inverse().apply(tip)
        f = frame.R @ lip_face_force(q, ap, hw, self.contact)
        for it in self.intents:
            f = f + it.force(t, self, frame, q, tip)
        return f

    def sensor(self, force_world) -> np.ndarray:
        """Noisy tool-frame wrench for a force applied at the tip."""
        R = self.ee.pose.R
        lever = -self.contact.sensor_offset * R[:, 2]
        torque = _cross(lever, force_world)
        w = np.concatenate([R.T @ force_world, R.T @ torque])
        return w + self.rng.normal(0.0, 1.0, 6) * self._noise_scale

    def substep(self, twist, dt: float = PHYSICS_DT) -> np.ndarray:
        """Move the utensil under ``twist`` for ``dt``, then return the sensed wrench."""
        self.ee = integrate(self.ee, twist, dt)
        self.t = round(self.t + dt, 9)
        f = self.force_at(self.t, self.tip)
        self.last_force = f
        return self.sensor(f)

    def wrench_world(self, wrench_tool) -> np.ndarray:
        R = self.ee.pose.R
        return np.concatenate([R @ wrench_tool[:3], R @ wrench_tool[3:]])
