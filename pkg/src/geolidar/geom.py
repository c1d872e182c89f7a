"""SE(3) poses, quaternion algebra, and constant-motion pose extrapolation.

Conventions, fixed once for the whole package:

* Quaternions are stored scalar-last as ``[x, y, z, w]``, unit norm.
* ``Pose`` keeps the representative with non-negative scalar part
  (``q`` and ``-q`` encode the same rotation); serialization uses it.
* Twists are ordered ``[rho, theta]``: translational part first, then the
  axis-angle rotational part.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_EPS = 1e-12
_SMALL_ANGLE = 1e-6


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n < _EPS:
        raise ValueError("cannot normalize a near-zero quaternion")
    return q / n


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b (scalar-last)."""
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return np.array(
        [
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
            aw * bw - ax * bx - ay * by - az * bz,
        ]
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([-q[0], -q[1], -q[2], q[3]])


def quat_angle(q: np.ndarray) -> float:
    """Rotation angle in [0, pi] encoded by a unit quaternion."""
    return 2.0 * math.atan2(np.linalg.norm(q[:3]), abs(q[3]))


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n < _EPS:
        if abs(angle) < _SMALL_ANGLE:
            return np.array([0.0, 0.0, 0.0, 1.0])
        raise ValueError("rotation axis is near zero")
    half = 0.5 * angle
    return np.concatenate([axis / n * math.sin(half), [math.cos(half)]])


def quat_to_axis_angle(q: np.ndarray) -> tuple[np.ndarray, float]:
    """Axis and angle, angle in [0, pi] (scalar part taken non-negative)."""
    q = quat_normalize(q)
    if q[3] < 0.0:
        q = -q
    s = np.linalg.norm(q[:3])
    angle = 2.0 * math.atan2(s, q[3])
    if s < _EPS:
        return np.array([0.0, 0.0, 1.0]), 0.0
    return q[:3] / s, angle


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    x, y, z, w = quat_normalize(q)
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    return np.array(
        [
            [1 - 2 * (yy + zz), 2 * (xy - wz), 2 * (xz + wy)],
            [2 * (xy + wz), 1 - 2 * (xx + zz), 2 * (yz - wx)],
            [2 * (xz - wy), 2 * (yz + wx), 1 - 2 * (xx + yy)],
        ]
    )


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Rotation matrix to scalar-last quaternion (max-diagonal branch method)."""
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0.0:
        s = math.sqrt(tr + 1.0) * 2.0
        w = 0.25 * s
        x = (R[2, 1] - R[1, 2]) / s
        y = (R[0, 2] - R[2, 0]) / s
        z = (R[1, 0] - R[0, 1]) / s
    elif R[0, 0] >= R[1, 1] and R[0, 0] >= R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        x = 0.25 * s
        w = (R[2, 1] - R[1, 2]) / s
        y = (R[0, 1] + R[1, 0]) / s
        z = (R[0, 2] + R[2, 0]) / s
    elif R[1, 1] >= R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        y = 0.25 * s
        w = (R[0, 2] - R[2, 0]) / s
        x = (R[0, 1] + R[1, 0]) / s
        z = (R[1, 2] + R[2, 1]) / s
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        z = 0.25 * s
        w = (R[1, 0] - R[0, 1]) / s
        x = (R[0, 2] + R[2, 0]) / s
        y = (R[1, 2] + R[2, 1]) / s
    return quat_normalize([x, y, z, w])


def quat_pow(q: np.ndarray, s: float) -> np.ndarray:
    """q**s along the geodesic through identity; s may exceed 1."""
    axis, angle = quat_to_axis_angle(q)
    if angle < _EPS:
        return np.array([0.0, 0.0, 0.0, 1.0])
    return quat_from_axis_angle(axis, s * angle)


def slerp(q0: np.ndarray, q1: np.ndarray, s: float) -> np.ndarray:
    """Spherical interpolation/extrapolation q0 (q0^-1 q1)^s.

    Shortest-path convention: q1 is sign-flipped when dot(q0, q1) < 0, so an
    s > 1 extrapolation never runs the long way around.  Falls back to q0
    when the inputs encode (nearly) the same rotation.
    """
    q0 = quat_normalize(q0)
    q1 = quat_normalize(q1)
    if float(np.dot(q0, q1)) < 0.0:
        q1 = -q1
    rel = quat_mul(quat_conjugate(q0), q1)
    if rel[3] > 1.0 - 1e-12:
        return q0.copy()
    return quat_normalize(quat_mul(q0, quat_pow(rel, s)))


def _canonical_quat(q: np.ndarray) -> np.ndarray:
    if q[3] < 0.0:
        return -q
    if q[3] == 0.0:
        for v in q[:3]:
            if v != 0.0:
                return q if v > 0.0 else -q
    return q


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform: rotation by unit quaternion q, then translation t."""

    t: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        t = np.array(self.t, dtype=float).reshape(3)
        q = _canonical_quat(quat_normalize(np.array(self.q, dtype=float).reshape(4)))
        t.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "q", q)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.zeros(3), np.array([0.0, 0.0, 0.0, 1.0]))

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "Pose":
        T = np.asarray(T, dtype=float)
        if T.shape != (4, 4):
            raise ValueError("expected a 4x4 homogeneous matrix")
        return cls(T[:3, 3], matrix_to_quat(T[:3, :3]))

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = quat_to_matrix(self.q)
        T[:3, 3] = self.t
        return T

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def __repr__(self) -> str:
        return f"Pose(t={np.array2string(self.t, precision=4)}, q={np.array2string(self.q, precision=4)})"


def compose(a: Pose, b: Pose) -> Pose:
    """Transform applying b first, then a."""
    return Pose(a.t + quat_to_matrix(a.q) @ b.t, quat_mul(a.q, b.q))


def inverse(p: Pose) -> Pose:
    q_inv = quat_conjugate(p.q)
    return Pose(-(quat_to_matrix(q_inv) @ p.t), q_inv)


def transform_points(p: Pose, points: np.ndarray) -> np.ndarray:
    """Apply a pose to one point (3,) or a stack of points (N, 3)."""
    pts = np.asarray(points, dtype=float)
    R = quat_to_matrix(p.q)
    if pts.ndim == 1:
        return R @ pts + p.t
    return pts @ R.T + p.t


@dataclass(frozen=True, eq=False)
class Twist:
    """se(3) tangent element: rho (m) and theta (rad, axis-angle)."""

    rho: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        rho = np.array(self.rho, dtype=float).reshape(3)
        theta = np.array(self.theta, dtype=float).reshape(3)
        rho.setflags(write=False)
        theta.setflags(write=False)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def from_vector(cls, v: np.ndarray) -> "Twist":
        v = np.asarray(v, dtype=float).reshape(6)
        return cls(v[:3], v[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.rho, self.theta])


def _skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _left_jacobian(theta: np.ndarray) -> np.ndarray:
    """V matrix coupling rho to translation in exp: t = V @ rho."""
    angle = np.linalg.norm(theta)
    K = _skew(theta)
    if angle < 1e-5:
        a = 0.5 - angle**2 / 24.0
        b = 1.0 / 6.0 - angle**2 / 120.0
    else:
        a = (1.0 - math.cos(angle)) / angle**2
        b = (angle - math.sin(angle)) / angle**3
    return np.eye(3) + a * K + b * (K @ K)


def _left_jacobian_inv(theta: np.ndarray) -> np.ndarray:
    angle = np.linalg.norm(theta)
    K = _skew(theta)
    if angle < 1e-5:
        c = 1.0 / 12.0 + angle**2 / 720.0
    else:
        c = 1.0 / angle**2 - (1.0 + math.cos(angle)) / (2.0 * angle * math.sin(angle))
    return np.eye(3) - 0.5 * K + c * (K @ K)


def se3_exp(v: Twist) -> Pose:
    angle = np.linalg.norm(v.theta)
    if angle < _EPS:
        q = np.array([0.0, 0.0, 0.0, 1.0])
    else:
        q = quat_from_axis_angle(v.theta / angle, angle)
    return Pose(_left_jacobian(v.theta) @ v.rho, q)


def se3_log(p: Pose) -> Twist:
    """Inverse of se3_exp; rejects rotations within 1e-6 of 180 degrees."""
    axis, angle = quat_to_axis_angle(p.q)
    if angle > math.pi - 1e-6:
        raise ValueError("se3_log undefined near a 180 degree rotation")
    theta = axis * angle
    return Twist(_left_jacobian_inv(theta) @ p.t, theta)


def extrapolate_pose(prev: Pose, curr: Pose) -> Pose:
    """Constant distance and rotation prediction of the next pose.

    Translation advances by the last position delta; rotation extrapolates
    along the geodesic from prev to curr with slerp parameter 2.
    """
    t_next = curr.t + (curr.t - prev.t)
    q_next = slerp(prev.q, curr.q, 2.0)
    return Pose(t_next, q_next)
