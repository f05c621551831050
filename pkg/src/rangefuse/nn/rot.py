"""Differentiable Euler/rotation-matrix arithmetic on the autodiff tape.

The estimators chain pose estimates across epochs (IMU preprocessing with
the previous rotation, prior composition, loss terms), and gradients must
flow through those rotations. These helpers mirror the float geometry in
rangefuse.geometry using intrinsic Z-Y-X angles: R = Rz(yaw) Ry(pitch) Rx(roll).
"""

from __future__ import annotations

from . import tensor as T
from .tensor import Tensor


def _scalar(t: Tensor) -> Tensor:
    return T.reshape(t, (1,))


def euler_to_matrix_t(euler: Tensor) -> Tensor:
    """(3,) angles [roll, pitch, yaw] -> (3, 3) rotation matrix, on tape."""
    if euler.shape != (3,):
        raise ValueError(f"expected shape (3,), got {euler.shape}")
    sr, cr = T.sin(euler[0]), T.cos(euler[0])
    sp, cp = T.sin(euler[1]), T.cos(euler[1])
    sy, cy = T.sin(euler[2]), T.cos(euler[2])
    entries = [
        T.mul(cy, cp),
        T.sub(T.mul(T.mul(cy, sp), sr), T.mul(sy, cr)),
        T.add(T.mul(T.mul(cy, sp), cr), T.mul(sy, sr)),
        T.mul(sy, cp),
        T.add(T.mul(T.mul(sy, sp), sr), T.mul(cy, cr)),
        T.sub(T.mul(T.mul(sy, sp), cr), T.mul(cy, sr)),
        T.mul(sp, -1.0),
        T.mul(cp, sr),
        T.mul(cp, cr),
    ]
    return T.reshape(T.concat([_scalar(e) for e in entries]), (3, 3))


def matrix_to_euler_t(m: Tensor) -> Tensor:
    """(3, 3) rotation matrix -> (3,) angles [roll, pitch, yaw], on tape.

    Uses roll = atan2(m21, m22), pitch = asin(-m20), yaw = atan2(m10, m00);
    valid away from pitch = +-pi/2 like its float counterpart.
    """
    if m.shape != (3, 3):
        raise ValueError(f"expected shape (3, 3), got {m.shape}")
    roll = T.atan2(m[2, 1], m[2, 2])
    pitch = T.asin(T.mul(m[2, 0], -1.0))
    yaw = T.atan2(m[1, 0], m[0, 0])
    return T.concat([_scalar(roll), _scalar(pitch), _scalar(yaw)])


def compose_euler_t(a: Tensor, b: Tensor) -> Tensor:
    """Angles of R(a) @ R(b), both (3,) Euler vectors."""
    return matrix_to_euler_t(T.matmul(euler_to_matrix_t(a), euler_to_matrix_t(b)))


def relative_euler_t(prev_m: Tensor, cur_m: Tensor) -> Tensor:
    """Angles of prev^T @ cur: the body-frame rotation increment between two epochs."""
    return matrix_to_euler_t(T.matmul(T.transpose(prev_m), cur_m))
