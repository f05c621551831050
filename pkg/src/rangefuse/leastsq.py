"""Range-only least squares: 6-DoF pose solving and anchor calibration.

Residuals use the squared-distance form r = |R p + t - a|^2 - d^2 (not
|.| - d), so consistent measurements zero the residual exactly and the
Jacobian is polynomial in the state. The solver is a plain
Levenberg-Marquardt loop with a multiplicative damping schedule; accepted
steps never increase the cost. Underdetermined geometry never raises --
the report carries rank/conditioning flags instead, which is how the
single-anchor case degrades gracefully.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import EulerAngles, Pose, Vec3, euler_to_rotation, rotation_to_euler
from .sensors import Scene

_STATE_NAMES = ("x", "y", "z", "roll", "pitch", "yaw")


@dataclass(frozen=True)
class PoseVector6:
    """Pose as a flat state [x, y, z, roll, pitch, yaw], angles in (-pi, pi]."""

    x: float
    y: float
    z: float
    roll: float
    pitch: float
    yaw: float

    def __post_init__(self) -> None:
        for name in _STATE_NAMES:
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.roll, self.pitch, self.yaw], dtype=np.float64)

    @staticmethod
    def from_array(v) -> "PoseVector6":
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (6,):
            raise ValueError(f"expected shape (6,), got {v.shape}")
        return PoseVector6(*(float(c) for c in v))

    def as_pose(self) -> Pose:
        rot = euler_to_rotation(EulerAngles(self.roll, self.pitch, self.yaw))
        return Pose(rot, Vec3(self.x, self.y, self.z))

    @staticmethod
    def from_pose(pose: Pose) -> "PoseVector6":
        e = rotation_to_euler(pose.rot)
        return PoseVector6(pose.trans.x, pose.trans.y, pose.trans.z, e.roll, e.pitch, e.yaw)

    def canonical(self) -> "PoseVector6":
        """Re-wrap the angle block onto the canonical chart (pitch in [-pi/2, pi/2])."""
        return PoseVector6.from_pose(self.as_pose())


@dataclass(frozen=True)
class LsFix2D:
    """Horizontal position extracted from a range-only solution."""

    x: float
    y: float
    frame: str = "world"

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("planar fix must be finite")
        if self.frame not in ("world", "nominal"):
            raise ValueError(f"frame must be 'world' or 'nominal', got {self.frame!r}")


@dataclass(frozen=True)
class LmOptions:
    max_iters: int = 100
    gradient_tol: float = 1e-10
    step_tol: float = 1e-12
    initial_lambda: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 0.5
    rank_tol: float = 1e-12
    cond_tol: float = 1e-6

    def __post_init__(self) -> None:
        for name in ("max_iters", "gradient_tol", "step_tol", "initial_lambda",
                     "lambda_up", "lambda_down", "rank_tol", "cond_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class LmReport:
    iterations: int
    final_cost: float
    converged: bool
    termination: str
    rank_deficient: bool
    # State components whose normal-matrix eigenvalue is tiny relative to the
    # largest one; the solver leaves these essentially at their initial value.
    ill_conditioned: tuple[str, ...]
    cost_history: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.final_cost < 0.0:
            raise ValueError("final_cost must be >= 0")


def _rotation_matrices(roll: float, pitch: float, yaw: float):
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    return rx, ry, rz


def range_residual(state: PoseVector6, tag_ext: Vec3, anchor: Vec3, d: float) -> float:
    """Squared-distance residual |R p + t - a|^2 - d^2 for one measurement."""
    u = state.as_pose().rot.rotate(tag_ext) + Vec3(state.x, state.y, state.z) - anchor
    return u.dot(u) - d * d


def _residuals_and_jacobian(state: np.ndarray, tag_pts: np.ndarray, anchors: np.ndarray, dists: np.ndarray):
    """Stacked residual vector and analytic (m, 6) Jacobian.

    dR/droll = R [ex]x, dR/dpitch = Rz Ry [ey]x Rx, dR/dyaw = [ez]x R, so each
    angle column is 2 u . (dR/dangle p).
    """
    rx, ry, rz = _rotation_matrices(state[3], state[4], state[5])
    rzy = rz @ ry
    r = rzy @ rx
    t = state[:3]
    rp = tag_pts @ r.T
    u = rp + t - anchors
    res = np.einsum("ij,ij->i", u, u) - dists * dists

    jac = np.empty((len(dists), 6), dtype=np.float64)
    jac[:, :3] = 2.0 * u
    ex_p = np.cross(np.array([1.0, 0.0, 0.0]), tag_pts)
    d_roll = ex_p @ r.T
    ey_rxp = np.cross(np.array([0.0, 1.0, 0.0]), tag_pts @ rx.T)
    d_pitch = ey_rxp @ rzy.T
    d_yaw = np.cross(np.array([0.0, 0.0, 1.0]), rp)
    jac[:, 3] = 2.0 * np.einsum("ij,ij->i", u, d_roll)
    jac[:, 4] = 2.0 * np.einsum("ij,ij->i", u, d_pitch)
    jac[:, 5] = 2.0 * np.einsum("ij,ij->i", u, d_yaw)
    return res, jac


def range_residual_jacobian(state: PoseVector6, tag_ext: Vec3, anchor: Vec3, d: float) -> np.ndarray:
    """Analytic derivative of range_residual with respect to the 6 state components."""
    _, jac = _residuals_and_jacobian(
        state.as_array(),
        tag_ext.as_array()[None, :],
        anchor.as_array()[None, :],
        np.array([d], dtype=np.float64),
    )
    return jac[0]


def _conditioning(jtj: np.ndarray, opts: LmOptions, names: tuple[str, ...]):
    """Rank and per-component conditioning flags from the normal matrix spectrum."""
    eigvals, eigvecs = np.linalg.eigh(jtj)
    top = float(eigvals[-1])
    if top <= 0.0:
        return True, names
    weak = []
    rank_deficient = False
    for i, val in enumerate(eigvals):
        rel = float(val) / top
        if rel < opts.rank_tol:
            rank_deficient = True
        if rel < opts.cond_tol:
            weak.append(names[int(np.argmax(np.abs(eigvecs[:, i])))])
    return rank_deficient, tuple(sorted(set(weak), key=names.index))


def _lm_minimize(eval_fn, x0: np.ndarray, opts: LmOptions, names: tuple[str, ...]):
    """Generic damped least-squares loop shared by pose and anchor solving."""
    x = x0.copy()
    res, jac = eval_fn(x)
    cost = float(res @ res)
    lam = opts.initial_lambda
    history = [cost]
    termination = "max_iters"
    converged = False
    iters = 0
    for iters in range(1, opts.max_iters + 1):
        grad = 2.0 * jac.T @ res
        if float(np.max(np.abs(grad))) < opts.gradient_tol:
            termination, converged = "gradient", True
            iters -= 1
            break
        jtj = jac.T @ jac
        try:
            step = np.linalg.solve(jtj + lam * np.eye(len(x)), -jac.T @ res)
        except np.linalg.LinAlgError:
            lam *= opts.lambda_up
            continue
        cand = x + step
        cand_res, cand_jac = eval_fn(cand)
        cand_cost = float(cand_res @ cand_res)
        if cand_cost < cost:
            x, res, jac, cost = cand, cand_res, cand_jac, cand_cost
            history.append(cost)
            lam = max(lam * opts.lambda_down, 1e-15)
            if float(np.linalg.norm(step)) < opts.step_tol:
                termination, converged = "step", True
                break
        else:
            lam *= opts.lambda_up
            if lam > 1e15:
                termination = "stalled"
                break
    rank_deficient, weak = _conditioning(jac.T @ jac, opts, names)
    report = LmReport(
        iterations=iters,
        final_cost=cost,
        converged=converged,
        termination=termination,
        rank_deficient=rank_deficient,
        ill_conditioned=weak,
        cost_history=tuple(history),
    )
    return x, report


def solve_pose_lm(
    measurements: list[tuple[int, int, float]],
    scene: Scene,
    pose0: PoseVector6,
    opts: LmOptions = LmOptions(),
) -> tuple[PoseVector6, LmReport]:
    """Solve the 6-DoF pose from (tag_id, anchor_id, distance) triples.

    Anchors in `scene` must be expressed in the frame the solution is wanted
    in. Underdetermined epochs return the best damped fit with
    report.rank_deficient set rather than raising.
    """
    if not measurements:
        raise ValueError("need at least one measurement")
    tag_pts = np.array([scene.tag_extrinsics[t].as_array() for t, _, _ in measurements])
    anchors = np.array([scene.anchors[a].as_array() for _, a, _ in measurements])
    dists = np.array([d for _, _, d in measurements], dtype=np.float64)
    if np.any(dists < 0.0) or not np.all(np.isfinite(dists)):
        raise ValueError("distances must be finite and >= 0")

    def eval_fn(x):
        return _residuals_and_jacobian(x, tag_pts, anchors, dists)

    x, report = _lm_minimize(eval_fn, pose0.as_array(), opts, _STATE_NAMES)
    return PoseVector6.from_array(x).canonical(), report


def planar_fix(solution: PoseVector6) -> LsFix2D:
    """Horizontal (x, y) of a solved pose, tagged as world-frame."""
    return LsFix2D(solution.x, solution.y, frame="world")


@dataclass(frozen=True)
class AnchorSolveReport:
    """Per-anchor outcome of batch anchor calibration."""

    skipped: tuple[int, ...]
    ill_conditioned: tuple[int, ...]
    iterations: dict[int, int]


def solve_anchor_positions(
    batch: list[tuple[Pose, int, int, float]],
    scene_tags: dict[int, Vec3],
    init: dict[int, Vec3] | None = None,
    opts: LmOptions = LmOptions(),
    min_observations: int = 4,
) -> tuple[dict[int, Vec3], AnchorSolveReport]:
    """Recover anchor positions from ranges taken at known poses.

    Each observation is (body pose, tag_id, anchor_id, distance); poses stay
    fixed and only anchor coordinates are optimized, one independent
    3-parameter problem per anchor. Anchors seen fewer than
    `min_observations` times are skipped and listed in the report.
    """
    init = init or {}
    per_anchor: dict[int, list[tuple[np.ndarray, float]]] = {}
    for pose, tag_id, anchor_id, d in batch:
        if tag_id not in scene_tags:
            raise KeyError(f"unknown tag id {tag_id}")
        tag_w = pose.rot.rotate(scene_tags[tag_id]) + pose.trans
        per_anchor.setdefault(anchor_id, []).append((tag_w.as_array(), float(d)))

    solved: dict[int, Vec3] = {}
    skipped: list[int] = []
    weak: list[int] = []
    iterations: dict[int, int] = {}
    for anchor_id in sorted(per_anchor):
        obs = per_anchor[anchor_id]
        if len(obs) < min_observations:
            skipped.append(anchor_id)
            continue
        pts = np.array([p for p, _ in obs])
        dists = np.array([d for _, d in obs])
        x0 = init[anchor_id].as_array() if anchor_id in init else pts.mean(axis=0)

        def eval_fn(a, pts=pts, dists=dists):
            u = pts - a[None, :]
            res = np.einsum("ij,ij->i", u, u) - dists * dists
            jac = -2.0 * u
            return res, jac

        x, report = _lm_minimize(eval_fn, x0, opts, ("x", "y", "z"))
        solved[anchor_id] = Vec3.from_array(x)
        iterations[anchor_id] = report.iterations
        if report.rank_deficient or report.ill_conditioned:
            weak.append(anchor_id)
    return solved, AnchorSolveReport(tuple(skipped), tuple(weak), iterations)
