"""Rigid-body primitives and the minimal line/plane parameterizations.

Lines are stored as ``(alpha, beta, x, y)``: the z-axis shifted by ``(x, y)``
in the xOy plane and then rotated by ``rot2dof(alpha, beta)``. Planes are
stored as ``(alpha, beta, d)``: the normal is the rotated z-axis and every
plane point satisfies ``n . p + d = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class DegenerateDirection(ValueError):
    """A direction or normal vector has (near) zero length."""


def skew(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def so3_exp(w: np.ndarray) -> np.ndarray:
    """Rodrigues formula; accepts a single 3-vector or a stack of them."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w, axis=-1)[..., None, None]
    K = skew(w)
    small = theta < 1e-8
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta**2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    return np.eye(3) + a * K + b * (K @ K)


def so3_log(R: np.ndarray) -> np.ndarray:
    """Matrix logarithm of SO(3) as an axis-angle vector with norm in [0, pi].

    Works on a single matrix or a stack. Near ``theta = pi`` the axis is taken
    from the symmetric part, where the skew part carries no information.
    """
    R = np.asarray(R, dtype=float)
    single = R.ndim == 2
    Rs = R.reshape(-1, 3, 3)
    tr = np.clip((np.trace(Rs, axis1=1, axis2=2) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(tr)
    vee = np.stack(
        [Rs[:, 2, 1] - Rs[:, 1, 2], Rs[:, 0, 2] - Rs[:, 2, 0], Rs[:, 1, 0] - Rs[:, 0, 1]],
        axis=-1,
    )
    out = np.empty((Rs.shape[0], 3))
    sin_t = np.sin(theta)

    small = theta < 1e-6
    # first-order series: log(R) ~ vee/2 * (1 + theta^2/6)
    out[small] = 0.5 * vee[small] * (1.0 + theta[small, None] ** 2 / 6.0)

    near_pi = theta > math.pi - 1e-3
    regular = ~(small | near_pi)
    out[regular] = (theta[regular] / (2.0 * sin_t[regular]))[:, None] * vee[regular]

    for i in np.flatnonzero(near_pi):
        th = theta[i]
        S = 0.5 * (Rs[i] + Rs[i].T) - math.cos(th) * np.eye(3)
        S /= 1.0 - math.cos(th)
        k = int(np.argmax(np.diag(S)))
        axis = S[:, k] / math.sqrt(max(S[k, k], 1e-300))
        axis /= np.linalg.norm(axis)
        if axis @ vee[i] < 0.0:
            axis = -axis
        out[i] = th * axis
    return out[0] if single else out.reshape(R.shape[:-2] + (3,))


def right_jacobian_inv(w: np.ndarray) -> np.ndarray:
    """Inverse right Jacobian of SO(3): d Log(Exp(w) Exp(d)) / d d at d = 0."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w, axis=-1)[..., None, None]
    K = skew(w)
    small = theta < 1e-5
    safe = np.where(small, 1.0, theta)
    coef = np.where(
        small,
        1.0 / 12.0,
        1.0 / safe**2 - (1.0 + np.cos(safe)) / (2.0 * safe * np.sin(safe)),
    )
    return np.eye(3) + 0.5 * K + coef * (K @ K)


@dataclass(frozen=True)
class Pose:
    """Rigid transform mapping local coordinates into the parent frame."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_rotvec(cls, rotvec, translation) -> "Pose":
        return cls(so3_exp(np.asarray(rotvec, dtype=float)), translation)

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def compose(self, other: "Pose") -> "Pose":
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    __matmul__ = compose

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def rotvec(self) -> np.ndarray:
        return so3_log(self.rotation)

    def retract(self, delta: np.ndarray) -> "Pose":
        """Right perturbation: ``R <- R exp(dtheta)``, ``t <- t + dt``; delta = [dt, dtheta]."""
        delta = np.asarray(delta, dtype=float)
        return Pose(self.rotation @ so3_exp(delta[3:]), self.translation + delta[:3])


def relative_pose(a: Pose, b: Pose) -> Pose:
    """Pose of ``b`` expressed in the frame of ``a``."""
    return a.inverse() @ b


class LineParam(NamedTuple):
    alpha: float
    beta: float
    x: float
    y: float


class PlaneParam(NamedTuple):
    alpha: float
    beta: float
    d: float


class PointNormalLine(NamedTuple):
    n: np.ndarray
    q: np.ndarray


class NormalDistancePlane(NamedTuple):
    n: np.ndarray
    d: float


def rot2dof(alpha, beta) -> np.ndarray:
    """The 2-DoF rotation; broadcasts over array-valued angles."""
    ca, sa = np.cos(alpha), np.sin(alpha)
    cb, sb = np.cos(beta), np.sin(beta)
    zero = np.zeros_like(ca)
    return np.stack(
        [
            np.stack([cb, zero, -sb], axis=-1),
            np.stack([sa * sb, ca, sa * cb], axis=-1),
            np.stack([ca * sb, -sa, ca * cb], axis=-1),
        ],
        axis=-2,
    )


def rot2dof_normal(alpha, beta) -> np.ndarray:
    """Third column of ``rot2dof``: the rotated z-axis."""
    ca, sa = np.cos(alpha), np.sin(alpha)
    cb, sb = np.cos(beta), np.sin(beta)
    return np.stack([-sb, sa * cb, ca * cb], axis=-1)


def angles_from_normal(n: np.ndarray) -> tuple[float, float]:
    """Recover (alpha, beta) with ``rot2dof(alpha, beta) @ e_z == n``."""
    n = np.asarray(n, dtype=float)
    # atan2 keeps full precision where asin(-n_x) flattens out near |n_x| = 1;
    # exactly at the pole atan2(0, 0) = 0 picks alpha = 0
    beta = math.atan2(-float(n[0]), math.hypot(float(n[1]), float(n[2])))
    return math.atan2(float(n[1]), float(n[2])), beta


def _unit(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    if not np.isfinite(norm) or norm < 1e-12:
        raise DegenerateDirection(f"cannot normalise vector {v}")
    return v / norm


def line_to_point_direction(line) -> PointNormalLine:
    alpha, beta, x, y = (float(v) for v in line)
    R = rot2dof(alpha, beta)
    return PointNormalLine(R[:, 2].copy(), R @ np.array([x, y, 0.0]))


def line_from_point_direction(pn) -> LineParam:
    n = _unit(pn[0])
    q = np.asarray(pn[1], dtype=float)
    q = q - (q @ n) * n
    alpha, beta = angles_from_normal(n)
    local = rot2dof(alpha, beta).T @ q
    return LineParam(alpha, beta, float(local[0]), float(local[1]))


def plane_to_normal_distance(plane) -> NormalDistancePlane:
    alpha, beta, d = (float(v) for v in plane)
    return NormalDistancePlane(rot2dof_normal(alpha, beta), d)


def canonical_plane(n: np.ndarray, d: float) -> tuple[np.ndarray, float]:
    """Flip ``(n, d)`` so that ``d <= 0``; at ``d == 0`` the first nonzero entry of n is positive."""
    n = np.asarray(n, dtype=float)
    if abs(d) <= 1e-12:
        nz = np.flatnonzero(np.abs(n) > 1e-12)
        if nz.size and n[nz[0]] < 0:
            return -n, -d
        return n, d
    if d > 0:
        return -n, -d
    return n, d


def plane_from_normal_distance(nd) -> PlaneParam:
    n = _unit(nd[0])
    d = float(nd[1]) / float(np.linalg.norm(nd[0]))
    n, d = canonical_plane(n, d)
    alpha, beta = angles_from_normal(n)
    return PlaneParam(alpha, beta, d)


def wrap_angle(a):
    """Map angles to (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    w = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def point_line_distance(points: np.ndarray, n: np.ndarray, q: np.ndarray) -> np.ndarray:
    diff = np.asarray(points, dtype=float) - q
    perp = diff - np.outer(diff @ n, n) if diff.ndim == 2 else diff - (diff @ n) * n
    return np.linalg.norm(perp, axis=-1)


def point_plane_distance(points: np.ndarray, n: np.ndarray, d: float) -> np.ndarray:
    return np.asarray(points, dtype=float) @ n + d
