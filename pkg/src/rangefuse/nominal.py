"""Anchor-derived nominal frame: a local coordinate system for estimation.

The frame's origin is the centroid of the anchors near the body and its
axes are the principal directions of their position covariance. Working in
this frame keeps coordinates small and layout-aligned even on long tracks,
and makes learned models transferable between sites that share an anchor
layout style.

Axis signs follow the third central moment of the anchor cloud along each
axis (a rigid-covariant choice), falling back to a fixed world-component
rule only when the layout is symmetric enough that the moment vanishes.
Eigen-decomposition uses a small cyclic Jacobi routine so results are
bit-reproducible across BLAS builds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Pose, Rotation, Vec3, compose, invert

_TIE_REL = 1e-9
_SKEW_REL = 1e-6


@dataclass(frozen=True)
class NominalFrame:
    """Pose of the local frame in the world: x_world = rot * x_local + origin."""

    origin: Vec3
    rot: Rotation
    anchor_set: tuple[int, ...]

    def __post_init__(self) -> None:
        if tuple(sorted(self.anchor_set)) != self.anchor_set:
            raise ValueError("anchor_set must be sorted")

    def as_pose(self) -> Pose:
        return Pose(self.rot, self.origin)


def jacobi_eigh3(s: np.ndarray, sweeps: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and eigenvectors of a symmetric 3x3 matrix.

    Classic cyclic Jacobi; iteration order is fixed so the result is
    bit-identical for identical input. Columns of the returned matrix are
    unit eigenvectors.
    """
    a = np.array(s, dtype=np.float64)
    if a.shape != (3, 3):
        raise ValueError("expected a 3x3 matrix")
    if not np.allclose(a, a.T, atol=1e-12):
        raise ValueError("matrix must be symmetric")
    v = np.eye(3)
    scale = float(np.max(np.abs(a))) or 1.0
    for _ in range(sweeps):
        off = math.sqrt(a[0, 1] ** 2 + a[0, 2] ** 2 + a[1, 2] ** 2)
        if off < 1e-15 * scale:
            break
        for p, q in ((0, 1), (0, 2), (1, 2)):
            apq = a[p, q]
            if abs(apq) < 1e-18 * scale:
                continue
            tau = (a[q, q] - a[p, p]) / (2.0 * apq)
            t = math.copysign(1.0, tau) / (abs(tau) + math.sqrt(1.0 + tau * tau))
            c = 1.0 / math.sqrt(1.0 + t * t)
            sn = t * c
            rot = np.eye(3)
            rot[p, p] = rot[q, q] = c
            rot[p, q] = sn
            rot[q, p] = -sn
            a = rot.T @ a @ rot
            v = v @ rot
    order = np.argsort(a.diagonal(), kind="stable")
    return a.diagonal()[order].copy(), v[:, order].copy()


def _principal_axes(centered: np.ndarray) -> np.ndarray:
    """Covariance eigenvectors as rows, descending variance, ties realigned to world axes."""
    cov = centered.T @ centered / len(centered)
    eigvals, eigvecs = jacobi_eigh3(cov)
    vals = eigvals[::-1].copy()
    axes = eigvecs[:, ::-1].T.copy()
    top = max(float(vals[0]), 0.0)
    if top <= 0.0:
        return np.eye(3)
    # Near-equal eigenvalues leave the eigenbasis arbitrary inside the tied
    # subspace; realign it to the world axes with the strongest projections
    # so construction stays deterministic for symmetric layouts.
    groups = []
    start = 0
    for i in range(1, 3):
        if abs(vals[i] - vals[i - 1]) > _TIE_REL * top:
            groups.append((start, i))
            start = i
    groups.append((start, 3))
    for lo, hi in groups:
        if hi - lo < 2:
            continue
        sub = axes[lo:hi].T  # (3, k) orthonormal basis of the tied subspace
        picked = []
        for axis in np.eye(3):
            proj = sub @ (sub.T @ axis)
            for chosen in picked:
                proj = proj - chosen * float(chosen @ proj)
            norm = float(np.linalg.norm(proj))
            if norm > 1e-9:
                picked.append(proj / norm)
            if len(picked) == hi - lo:
                break
        if len(picked) == hi - lo:
            axes[lo:hi] = np.array(picked)
    return axes


def _fix_sign(axis: np.ndarray, centered: np.ndarray) -> np.ndarray:
    """Orient one axis by the anchor cloud's skewness along it.

    The third central moment flips sign with the axis and is preserved by
    rigid motion of the cloud, so this keeps the frame covariant. For
    layouts too symmetric to decide (vanishing moment), fall back to making
    the largest-magnitude world component positive.
    """
    proj = centered @ axis
    var = float(np.mean(proj * proj))
    if var > 0.0:
        skew = float(np.mean(proj**3)) / var**1.5
        if abs(skew) > _SKEW_REL:
            return axis if skew > 0.0 else -axis
    k = int(np.argmax(np.abs(axis)))
    return axis if axis[k] > 0.0 else -axis


def build_nominal(
    anchors: list[tuple[int, Vec3]],
    radius: float,
    reference: Vec3,
) -> NominalFrame:
    """Construct the local frame from anchors within `radius` of `reference`.

    Origin is the selected anchors' centroid; axes are their covariance
    eigenvectors in descending-eigenvalue order with the third axis forced
    to first x second (right-handed). A collinear selection (second
    eigenvalue below 1e-9 of the first) takes its second axis from
    world-z x first.
    """
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    picked = sorted(
        ((i, p) for i, p in anchors if (p - reference).norm() <= radius),
        key=lambda item: item[0],
    )
    if not picked:
        raise ValueError(f"no anchors within {radius} m of reference")
    ids = tuple(i for i, _ in picked)
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate anchor ids")
    pts = np.array([p.as_array() for _, p in picked])
    centroid = pts.mean(axis=0)
    centered = pts - centroid

    if len(picked) == 1:
        rot = Rotation.identity()
        return NominalFrame(Vec3.from_array(centroid), rot, ids)

    axes = _principal_axes(centered)
    cov = centered.T @ centered / len(centered)
    variances = np.diag(axes @ cov @ axes.T)
    first = _fix_sign(axes[0], centered)
    if variances[1] < _TIE_REL * max(variances[0], 1e-300):
        second = np.cross(np.array([0.0, 0.0, 1.0]), first)
        if np.linalg.norm(second) < 1e-9:
            second = np.cross(np.array([1.0, 0.0, 0.0]), first)
        second = second / np.linalg.norm(second)
    else:
        second = _fix_sign(axes[1], centered)
    third = np.cross(first, second)
    rot = Rotation.from_matrix(np.stack([first, second, third], axis=1))
    return NominalFrame(Vec3.from_array(centroid), rot, ids)


def to_nominal(frame: NominalFrame, pose_world: Pose) -> Pose:
    """Express a world-frame pose in the local frame."""
    return compose(invert(frame.as_pose()), pose_world)


def from_nominal(frame: NominalFrame, pose_local: Pose) -> Pose:
    """Express a local-frame pose back in the world frame."""
    return compose(frame.as_pose(), pose_local)


def point_to_nominal(frame: NominalFrame, p: Vec3) -> Vec3:
    return frame.rot.inverse().rotate(p - frame.origin)


def point_from_nominal(frame: NominalFrame, p: Vec3) -> Vec3:
    return frame.rot.rotate(p) + frame.origin


def rebase(old: NominalFrame, new: NominalFrame, pose_old_local: Pose) -> Pose:
    """Carry a pose expressed in `old` into `new` (old -> world -> new)."""
    return to_nominal(new, from_nominal(old, pose_old_local))
