"""Goal-tracking and force-tracking admittance controllers for a free 6-DoF end effector.

Units: positions mm, rotations rad, forces N, torques N*mm. Translational
gains use SI-style values (M in kg, D in N*s/m, K in N/m); rotational gains
use M in kg*mm^2, D in N*mm*s/rad, K in N*mm/rad. With these units
``a = (1000 F - D v - K x) / M`` along translations and
``alpha = 1000 (tau - D w - K theta) / M`` about rotations.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.transform import Rotation

from ..errors import ConfigurationError
from ..geometry import Rigid
from ..headmodel import MouthPose

# force and damping/stiffness scale factors per axis (see module docstring)
_F_SCALE = np.array([1000.0, 1000.0, 1000.0, 1000.0, 1000.0, 1000.0])
_DK_SCALE = np.array([1.0, 1.0, 1.0, 1000.0, 1000.0, 1000.0])
OUTSIDE_STANDOFF_MM = 50.0


@dataclass(frozen=True)
class EndEffectorState:
    pose: Rigid
    twist: np.ndarray = field(default_factory=lambda: np.zeros(6))      # mm/s, rad/s
    wrench: np.ndarray = field(default_factory=lambda: np.zeros(6))     # N, N*mm
    time: float = 0.0

    @property
    def position(self) -> np.ndarray:
        return self.pose.t


@dataclass(frozen=True)
class AdmittanceParams:
    M: tuple = (2.0, 2.0, 2.0, 2000.0, 2000.0, 2000.0)
    D: tuple = (120.0, 120.0, 120.0, 120.0, 120.0, 120.0)
    K: tuple = (1800.0, 1800.0, 1800.0, 1800.0, 1800.0, 1800.0)
    max_speed: float = 100.0         # mm/s
    max_rate: float = 1.0            # rad/s
    max_accel: float = 5000.0        # mm/s^2; the angular limit is max_accel / 100 rad/s^2

    def validate(self) -> None:
        M, D, K = (np.asarray(v, float) for v in (self.M, self.D, self.K))
        if M.shape != (6,) or D.shape != (6,) or K.shape != (6,):
            raise ConfigurationError("M, D and K need 6 entries each")
        if np.any(M <= 0) or np.any(D <= 0) or np.any(K < 0):
            raise ConfigurationError("need M > 0, D > 0 and K >= 0")
        zeta = _damping_ratio(M, D, K)
        if np.any(zeta < 1.0 - 1e-12):
            raise ConfigurationError(f"under-damped axes (damping ratio {zeta.min():.3f} < 1)")
        if self.max_speed <= 0 or self.max_rate <= 0 or self.max_accel <= 0:
            raise ConfigurationError("command limits must be positive")


def _damping_ratio(M, D, K):
    # x'' = -(s D / M) x' - (s K / M) x with s the damping/stiffness scale of the axis
    Ks = np.where(K > 0, K, 1.0)
    return np.where(K > 0, np.sqrt(_DK_SCALE) * D / (2.0 * np.sqrt(Ks * M)), np.inf)


def goal_params() -> AdmittanceParams:
    return AdmittanceParams()


def force_params() -> AdmittanceParams:
    return AdmittanceParams(D=(40.0,) * 6, K=(0.0,) * 6)


def _check_dt(dt: float) -> None:
    if not (0.0 < dt <= 0.02):
        raise ConfigurationError(f"dt must be in (0, 0.02] s, got {dt}")


def pose_error(pose: Rigid, goal: Rigid) -> np.ndarray:
    """6-vector (position error mm, world-frame rotation error rad) of ``pose`` relative to ``goal``."""
    rot = Rotation.from_matrix(pose.R @ goal.R.T).as_rotvec()
    return np.concatenate([pose.t - goal.t, rot])


def _clamp(v: np.ndarray, limit: float) -> np.ndarray:
    n = np.linalg.norm(v)
    return v if n <= limit else v * (limit / n)


def _limit(twist_new, twist_old, p: AdmittanceParams, dt):
    acc = (twist_new - twist_old) / dt
    acc[:3] = _clamp(acc[:3], p.max_accel)
    acc[3:] = _clamp(acc[3:], p.max_accel / 100.0)
    out = twist_old + acc * dt
    out[:3] = _clamp(out[:3], p.max_speed)
    out[3:] = _clamp(out[3:], p.max_rate)
    return out


def goal_step(state: EndEffectorState, goal: Rigid, p: AdmittanceParams | None = None, dt: float = 0.01,
              wrench=None) -> np.ndarray:
    """One semi-implicit Euler step of M a + D v + K (x - goal) = F_ext; returns the new twist command."""
    _check_dt(dt)
    p = p or goal_params()
    F = state.wrench if wrench is None else np.asarray(wrench, float)
    M, D, K = (np.asarray(v, float) for v in (p.M, p.D, p.K))
    x = pose_error(state.pose, goal)
    v = np.asarray(state.twist, float)
    a = (_F_SCALE * F - _DK_SCALE * (D * v + K * x)) / M
    return _limit(v + a * dt, v, p, dt)


def deadband(v, width: float) -> np.ndarray:
    """Shrink a vector's norm by ``width`` (zero inside the band); continuous at the edge."""
    v = np.asarray(v, float)
    n = np.linalg.norm(v)
    if n <= width:
        return np.zeros_like(v)
    return v * (1.0 - width / n)


def force_step(state: EndEffectorState, p: AdmittanceParams | None = None, dt: float = 0.01,
               force_deadband: float = 0.2, torque_deadband: float = 20.0, wrench=None) -> np.ndarray:
    """Zero-stiffness admittance M a + D v = F_ext that yields along the applied wrench.

    Twist components that would push against the applied force (or torque)
    are projected out, so the command never opposes the user.
    """
    _check_dt(dt)
    p = p or force_params()
    if np.any(np.asarray(p.K, float) != 0):
        raise ConfigurationError("force_step needs K = 0 on every axis")
    F = state.wrench if wrench is None else np.asarray(wrench, float)
    M, D = np.asarray(p.M, float), np.asarray(p.D, float)
    Ff = np.concatenate([deadband(F[:3], force_deadband), deadband(F[3:], torque_deadband)])
    v = np.asarray(state.twist, float)
    a = (_F_SCALE * Ff - _DK_SCALE * D * v) / M
    out = _limit(v + a * dt, v, p, dt)
    for sl in (slice(0, 3), slice(3, 6)):
        f = F[sl]
        nf = np.linalg.norm(f)
        if nf > 0:
            u = f / nf
            along = out[sl] @ u
            if along < 0:
                out[sl] = out[sl] - along * u
    return out


def integrate(state: EndEffectorState, twist, dt: float) -> EndEffectorState:
    """Advance the end-effector pose by ``twist`` (world frame) over ``dt``."""
    twist = np.asarray(twist, float)
    if np.any(twist[3:]):
        R = Rotation.from_rotvec(twist[3:] * dt).as_matrix() @ state.pose.R
    else:
        R = state.pose.R
    return replace(state, pose=Rigid(R, state.pose.t + twist[:3] * dt), twist=twist, time=state.time + dt)


def outside_mouth_policy(mouth: MouthPose, standoff_mm: float = OUTSIDE_STANDOFF_MM) -> Rigid:
    """Goal pose a fixed distance in front of the mouth along its outward normal."""
    return Rigid(mouth.frame.R, mouth.frame.t + standoff_mm * mouth.frame.R[:, 2])
