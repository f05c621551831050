"""Rigid-body geometry: vectors, quaternion rotations, poses, Euler angles.

Conventions used throughout the package:
    - Rotations are stored as unit quaternions (w, x, y, z), w >= 0.
    - Euler angles are intrinsic Z-Y-X (yaw, then pitch, then roll), so the
      rotation matrix is R = Rz(yaw) @ Ry(pitch) @ Rx(roll).
    - Angles are wrapped to (-pi, pi]; pitch stays in [-pi/2, pi/2].

All types are immutable values and safe to share between threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap an angle in radians to (-pi, pi]."""
    r = math.remainder(a, _TWO_PI)
    if r <= -math.pi:
        r = math.pi
    return r


@dataclass(frozen=True)
class Vec3:
    """3-vector; meters unless context says otherwise (rad/s, m/s^2)."""

    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.z)):
            raise ValueError(f"Vec3 components must be finite, got ({self.x}, {self.y}, {self.z})")

    @staticmethod
    def zero() -> "Vec3":
        return Vec3(0.0, 0.0, 0.0)

    @staticmethod
    def from_array(a) -> "Vec3":
        return Vec3(float(a[0]), float(a[1]), float(a[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    def __add__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x - other.x, self.y - other.y, self.z - other.z)

    def __mul__(self, s: float) -> "Vec3":
        return Vec3(self.x * s, self.y * s, self.z * s)

    __rmul__ = __mul__

    def dot(self, other: "Vec3") -> float:
        return self.x * other.x + self.y * other.y + self.z * other.z

    def cross(self, other: "Vec3") -> "Vec3":
        return Vec3(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )

    def norm(self) -> float:
        return math.sqrt(self.dot(self))


@dataclass(frozen=True)
class EulerAngles:
    """Intrinsic Z-Y-X Euler angles in radians (roll about x, pitch about y, yaw about z)."""

    roll: float
    pitch: float
    yaw: float

    def wrapped(self) -> "EulerAngles":
        return EulerAngles(wrap_angle(self.roll), wrap_angle(self.pitch), wrap_angle(self.yaw))

    def as_array(self) -> np.ndarray:
        return np.array([self.roll, self.pitch, self.yaw], dtype=np.float64)


@dataclass(frozen=True)
class Rotation:
    """Unit quaternion (w, x, y, z) with w >= 0 kept canonical.

    Construct through the factory methods; the constructor does not
    normalize its inputs.
    """

    w: float
    x: float
    y: float
    z: float

    @staticmethod
    def identity() -> "Rotation":
        return Rotation(1.0, 0.0, 0.0, 0.0)

    @staticmethod
    def from_quat(w: float, x: float, y: float, z: float) -> "Rotation":
        """Build a rotation from quaternion components, normalizing and fixing the sign."""
        n = math.sqrt(w * w + x * x + y * y + z * z)
        if n == 0.0 or not math.isfinite(n):
            raise ValueError("quaternion norm must be positive and finite")
        w, x, y, z = w / n, x / n, y / n, z / n
        if w < 0.0 or (w == 0.0 and _first_nonzero_negative(x, y, z)):
            w, x, y, z = -w, -x, -y, -z
        return Rotation(w, x, y, z)

    @staticmethod
    def from_axis_angle(axis: Vec3, angle: float) -> "Rotation":
        n = axis.norm()
        if n == 0.0:
            raise ValueError("rotation axis must be nonzero")
        half = 0.5 * angle
        s = math.sin(half) / n
        return Rotation.from_quat(math.cos(half), axis.x * s, axis.y * s, axis.z * s)

    @staticmethod
    def about_z(angle: float) -> "Rotation":
        return Rotation.from_quat(math.cos(0.5 * angle), 0.0, 0.0, math.sin(0.5 * angle))

    def multiply(self, other: "Rotation") -> "Rotation":
        """Hamilton product self * other (apply `other` first, then self)."""
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = other.w, other.x, other.y, other.z
        return Rotation.from_quat(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def inverse(self) -> "Rotation":
        return Rotation.from_quat(self.w, -self.x, -self.y, -self.z)

    def rotate(self, v: Vec3) -> Vec3:
        """Rotate a vector: v' = q v q^-1."""
        qv = Vec3(self.x, self.y, self.z)
        t = 2.0 * qv.cross(v)
        return v + self.w * t + qv.cross(t)

    def matrix(self) -> np.ndarray:
        """3x3 rotation matrix."""
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ],
            dtype=np.float64,
        )

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Rotation":
        """Build from an orthonormal 3x3 matrix (Shepperd's method)."""
        m = np.asarray(m, dtype=np.float64)
        t = m[0, 0] + m[1, 1] + m[2, 2]
        if t > 0.0:
            s = math.sqrt(t + 1.0) * 2.0
            w = 0.25 * s
            x = (m[2, 1] - m[1, 2]) / s
            y = (m[0, 2] - m[2, 0]) / s
            z = (m[1, 0] - m[0, 1]) / s
        elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
            s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
            w = (m[2, 1] - m[1, 2]) / s
            x = 0.25 * s
            y = (m[0, 1] + m[1, 0]) / s
            z = (m[0, 2] + m[2, 0]) / s
        elif m[1, 1] >= m[2, 2]:
            s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
            w = (m[0, 2] - m[2, 0]) / s
            x = (m[0, 1] + m[1, 0]) / s
            y = 0.25 * s
            z = (m[1, 2] + m[2, 1]) / s
        else:
            s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
            w = (m[1, 0] - m[0, 1]) / s
            x = (m[0, 2] + m[2, 0]) / s
            y = (m[1, 2] + m[2, 1]) / s
            z = 0.25 * s
        return Rotation.from_quat(w, x, y, z)

    def norm(self) -> float:
        return math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)


def _first_nonzero_negative(*components: float) -> bool:
    for c in components:
        if c != 0.0:
            return c < 0.0
    return False


@dataclass(frozen=True)
class Pose:
    """Rigid transform: rotation followed by translation."""

    rot: Rotation
    trans: Vec3

    @staticmethod
    def identity() -> "Pose":
        return Pose(Rotation.identity(), Vec3.zero())


def compose(a: Pose, b: Pose) -> Pose:
    """Compose rigid transforms: result maps x -> a(b(x))."""
    return Pose(a.rot.multiply(b.rot), a.rot.rotate(b.trans) + a.trans)


def invert(p: Pose) -> Pose:
    rinv = p.rot.inverse()
    return Pose(rinv, -1.0 * rinv.rotate(p.trans))


def transform_point(p: Pose, x: Vec3) -> Vec3:
    """Apply a pose to a point: p.rot * x + p.trans."""
    return p.rot.rotate(x) + p.trans


def euler_to_rotation(e: EulerAngles) -> Rotation:
    """Intrinsic Z-Y-X composition: Rz(yaw) * Ry(pitch) * Rx(roll)."""
    hr, hp, hy = 0.5 * e.roll, 0.5 * e.pitch, 0.5 * e.yaw
    cr, sr = math.cos(hr), math.sin(hr)
    cp, sp = math.cos(hp), math.sin(hp)
    cy, sy = math.cos(hy), math.sin(hy)
    return Rotation.from_quat(
        cy * cp * cr + sy * sp * sr,
        cy * cp * sr - sy * sp * cr,
        cy * sp * cr + sy * cp * sr,
        sy * cp * cr - cy * sp * sr,
    )


def rotation_to_euler(r: Rotation) -> EulerAngles:
    """Extract intrinsic Z-Y-X angles; pitch is clamped to [-pi/2, pi/2].

    Away from gimbal lock the round trip with euler_to_rotation is exact to
    1e-9; at |pitch| = pi/2 the roll/yaw split is not unique.
    """
    m = r.matrix()
    sp = -m[2, 0]
    sp = min(1.0, max(-1.0, sp))
    pitch = math.asin(sp)
    yaw = math.atan2(m[1, 0], m[0, 0])
    roll = math.atan2(m[2, 1], m[2, 2])
    return EulerAngles(wrap_angle(roll), pitch, wrap_angle(yaw))


def pose_to_vector(p: Pose) -> np.ndarray:
    """Flatten a pose to [x, y, z, roll, pitch, yaw]."""
    e = rotation_to_euler(p.rot)
    return np.array([p.trans.x, p.trans.y, p.trans.z, e.roll, e.pitch, e.yaw], dtype=np.float64)


def vector_to_pose(v) -> Pose:
    """Inverse of pose_to_vector."""
    rot = euler_to_rotation(EulerAngles(float(v[3]), float(v[4]), float(v[5])))
    return Pose(rot, Vec3(float(v[0]), float(v[1]), float(v[2])))
