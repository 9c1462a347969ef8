"""Rigid-transform helpers shared by every module (millimetres, radians)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation


@dataclass(frozen=True)
class Rigid:
    """A proper rigid transform ``x -> R @ x + t``."""

    R: np.ndarray
    t: np.ndarray

    @classmethod
    def identity(cls) -> "Rigid":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_rotvec(cls, rotvec, t=(0.0, 0.0, 0.0)) -> "Rigid":
        return cls(Rotation.from_rotvec(np.asarray(rotvec, float)).as_matrix(), np.asarray(t, float))

    @classmethod
    def translation(cls, t) -> "Rigid":
        return cls(np.eye(3), np.asarray(t, float))

    def apply(self, pts) -> np.ndarray:
        pts = np.asarray(pts, float)
        return pts @ self.R.T + self.t

    def apply_vec(self, v) -> np.ndarray:
        return np.asarray(v, float) @ self.R.T

    def inverse(self) -> "Rigid":
        return Rigid(self.R.T, -self.R.T @ self.t)

    def __matmul__(self, other: "Rigid") -> "Rigid":
        return Rigid(self.R @ other.R, self.R @ other.t + self.t)

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def rotvec(self) -> np.ndarray:
        return Rotation.from_matrix(self.R).as_rotvec()

    def is_proper(self, tol: float = 1e-9) -> bool:
        R = self.R
        return (
            R.shape == (3, 3)
            and np.allclose(R.T @ R, np.eye(3), atol=tol)
            and abs(np.linalg.det(R) - 1.0) < tol
        )


def rotation_angle(Ra: np.ndarray, Rb: np.ndarray) -> float:
    """Geodesic angle (rad) between two rotation matrices."""
    c = (np.trace(Ra.T @ Rb) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def pose_error(a: Rigid, b: Rigid) -> tuple[float, float]:
    """(translation error mm, rotation error rad)."""
    return float(np.linalg.norm(a.t - b.t)), rotation_angle(a.R, b.R)


def rotation_about_axis(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, float)
    axis = axis / np.linalg.norm(axis)
    return Rotation.from_rotvec(axis * angle).as_matrix()


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    return Rotation.random(random_state=rng).as_matrix()


def kabsch(P: np.ndarray, Q: np.ndarray, w: np.ndarray | None = None) -> Rigid:
    """Weighted least-squares rigid fit mapping ``P`` onto ``Q`` (scale fixed to 1)."""
    P = np.asarray(P, float)
    Q = np.asarray(Q, float)
    w = np.ones(len(P)) if w is None else np.asarray(w, float)
    sw = w.sum()
    mp = (w @ P) / sw
    mq = (w @ Q) / sw
    H = (P - mp).T @ ((Q - mq) * w[:, None])
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    D = np.diag([1.0, 1.0, d if d != 0 else 1.0])
    R = Vt.T @ D @ U.T
    return Rigid(R, mq - R @ mp)


def kabsch_batch(P: np.ndarray, Q: np.ndarray, w: np.ndarray):
    """Batched weighted Kabsch.

    P : (B, n, 3) model points, Q : (n, 3) or (B, n, 3) targets, w : (B, n).
    Returns R (B, 3, 3) and t (B, 3).
    """
    if Q.ndim == 2:
        Q = np.broadcast_to(Q, P.shape)
    sw = w.sum(axis=1, keepdims=True)
    wn = (w / sw)[:, :, None]
    mp = (wn * P).sum(axis=1)
    mq = (wn * Q).sum(axis=1)
    H = np.matmul(np.transpose((P - mp[:, None, :]) * wn, (0, 2, 1)), Q - mq[:, None, :])
    U, _, Vt = np.linalg.svd(H)
    V = np.transpose(Vt, (0, 2, 1))
    Ut = np.transpose(U, (0, 2, 1))
    d = np.sign(np.linalg.det(np.matmul(V, Ut)))
    d[d == 0] = 1.0
    V[:, :, 2] *= d[:, None]
    R = np.matmul(V, Ut)
    t = mq - np.matmul(R, mp[:, :, None])[:, :, 0]
    return R, t


def min_jerk(tau):
    """Minimum-jerk progress s(tau) on [0, 1], clamped outside."""
    tau = np.clip(tau, 0.0, 1.0)
    return tau**3 * (10.0 - 15.0 * tau + 6.0 * tau**2)
