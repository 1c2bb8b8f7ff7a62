"""Rigid-body math: unit quaternions (w, x, y, z), rotation matrices, poses.

All functions take and return float64 numpy arrays. Quaternions are
normalized, scalar-first, and canonicalized to w >= 0 where a unique
representative matters (serialization, determinism checks).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def unit(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n < 1e-15:
        raise ValueError("cannot normalize a zero vector")
    return v / n


def quat_identity() -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q)
    if q[0] < 0.0:
        q = -q
    return q


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector(s) v by quaternion q. v may be (3,) or (n, 3)."""
    v = np.asarray(v, dtype=np.float64)
    w, x, y, z = q
    single = v.ndim == 1
    pts = v[None, :] if single else v
    px, py, pz = pts[:, 0], pts[:, 1], pts[:, 2]
    # Rodrigues-style expansion: v + 2w (u x v) + 2 u x (u x v), crosses unrolled
    ux = y * pz - z * py
    uy = z * px - x * pz
    uz = x * py - y * px
    out = np.empty_like(pts)
    out[:, 0] = px + 2.0 * (w * ux + y * uz - z * uy)
    out[:, 1] = py + 2.0 * (w * uy + z * ux - x * uz)
    out[:, 2] = pz + 2.0 * (w * uz + x * uy - y * ux)
    return out[0] if single else out


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = unit(axis)
    half = 0.5 * angle
    s = np.sin(half)
    return np.array([np.cos(half), axis[0] * s, axis[1] * s, axis[2] * s])


def quat_from_rotvec(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    angle = np.linalg.norm(r)
    if angle < 1e-12:
        # first-order expansion keeps tiny rotations exact enough for composition
        q = np.array([1.0, 0.5 * r[0], 0.5 * r[1], 0.5 * r[2]])
        return q / np.linalg.norm(q)
    return quat_from_axis_angle(r / angle, angle)


def rotvec_from_quat(q: np.ndarray) -> np.ndarray:
    q = quat_normalize(q)
    sin_half = np.linalg.norm(q[1:])
    if sin_half < 1e-12:
        return 2.0 * q[1:]
    angle = 2.0 * np.arctan2(sin_half, q[0])
    return q[1:] / sin_half * angle


def mat_from_quat(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_mat(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    t = np.trace(m)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(m)))
        if i == 0:
            s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
            q = np.array(
                [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
            )
        elif i == 1:
            s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
            q = np.array(
                [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
            )
        else:
            s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
            q = np.array(
                [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
            )
    return quat_normalize(q)


def quat_slerp(a: np.ndarray, b: np.ndarray, u: float) -> np.ndarray:
    a = quat_normalize(a)
    b = quat_normalize(b)
    dot = float(np.dot(a, b))
    if dot < 0.0:
        b = -b
        dot = -dot
    if dot > 1.0 - 1e-10:
        return quat_normalize(a + u * (b - a))
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    return quat_normalize(
        (np.sin((1.0 - u) * theta) * a + np.sin(u * theta) * b) / np.sin(theta)
    )


def quat_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Rotation angle taking orientation a to orientation b, in radians."""
    rel = quat_mul(quat_conj(a), b)
    return float(np.linalg.norm(rotvec_from_quat(rel)))


def rotation_about_axis(axis: np.ndarray, angle: float) -> np.ndarray:
    """3x3 rotation matrix about a (not necessarily unit) axis."""
    return mat_from_quat(quat_from_axis_angle(axis, angle))


def rotation_between(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimal rotation matrix taking unit direction a onto unit direction b."""
    a = unit(a)
    b = unit(b)
    c = np.cross(a, b)
    d = float(np.dot(a, b))
    if d > 1.0 - 1e-12:
        return np.eye(3)
    if d < -1.0 + 1e-12:
        # opposite: rotate pi about any axis orthogonal to a
        ortho = np.array([1.0, 0.0, 0.0])
        if abs(a[0]) > 0.9:
            ortho = np.array([0.0, 1.0, 0.0])
        axis = unit(np.cross(a, ortho))
        return rotation_about_axis(axis, np.pi)
    return rotation_about_axis(c, float(np.arctan2(np.linalg.norm(c), d)))


def mat_from_euler_xyz(rx: float, ry: float, rz: float) -> np.ndarray:
    """Intrinsic x-y-z rotation: R = Rx(rx) @ Ry(ry) @ Rz(rz)."""
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    rx_m = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry_m = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz_m = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rx_m @ ry_m @ rz_m


def euler_xyz_from_mat(m: np.ndarray) -> tuple[float, float, float]:
    """Inverse of mat_from_euler_xyz. ry is in [-pi/2, pi/2]."""
    sy = np.clip(m[0, 2], -1.0, 1.0)
    ry = float(np.arcsin(sy))
    if abs(sy) < 1.0 - 1e-9:
        rx = float(np.arctan2(-m[1, 2], m[2, 2]))
        rz = float(np.arctan2(-m[0, 1], m[0, 0]))
    else:
        # gimbal lock: fold rz into rx
        rx = float(np.arctan2(m[2, 1], m[1, 1]))
        rz = 0.0
    return rx, ry, rz


@dataclass(frozen=True)
class Pose:
    """Rigid transform: world point = R(orientation) @ local + position."""

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))
        object.__setattr__(self, "orientation", quat_normalize(self.orientation))

    def transform(self, pts: np.ndarray) -> np.ndarray:
        return quat_rotate(self.orientation, pts) + self.position

    def inverse_transform(self, pts: np.ndarray) -> np.ndarray:
        return quat_rotate(quat_conj(self.orientation), np.asarray(pts) - self.position)

    def compose(self, other: "Pose") -> "Pose":
        """self applied after other (self o other)."""
        return Pose(
            self.transform(other.position),
            quat_mul(self.orientation, other.orientation),
        )

    def inverse(self) -> "Pose":
        qi = quat_conj(self.orientation)
        return Pose(-quat_rotate(qi, self.position), qi)


def identity_pose() -> Pose:
    return Pose(np.zeros(3), quat_identity())
