"""Two-stage training and trajectory evaluation.

Stage 1 pretrains the recurrent inertial network alone on relative motion
(skipped for modes without it). Stage 2 runs the full estimator chain under
scheduled sampling and optimizes absolute + relative loss jointly with
truncated backprop through time: gradients flow through the pose/hidden
chain inside each chunk and are cut at chunk boundaries, with one Adam step
per chunk.

Evaluation is absolute pose error against ground truth matched by nearest
timestamp, plus splits of that error by anchor-envelope membership and by
masked time windows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Pose, rotation_to_euler
from .nn import tensor as T
from .nn.optim import ParamStore, adam_step
from .nn.rot import relative_euler_t
from .nn.tensor import Tensor
from .odometry import (
    EpochInputs,
    EstimatorMode,
    OdometryConfig,
    WorldImuWindow,
    estimator_mode,
    inertial_forward,
    initial_state,
    local_vec_to_world,
    odometry_step,
    split_epochs,
    world_pose_to_local_vec,
)
from .seeding import child_rng
from .sensors import Record, Scene


@dataclass(frozen=True)
class LossConfig:
    lambda_rel: float = 1.0
    rotation_weight: float = 1.0
    bptt_len: int = 50
    teacher_forcing_end_epoch: int = 8

    def __post_init__(self) -> None:
        if self.bptt_len < 1:
            raise ValueError("bptt_len must be >= 1")
        if self.lambda_rel < 0.0 or self.rotation_weight < 0.0:
            raise ValueError("loss weights must be >= 0")


def _stack6(vecs) -> Tensor:
    if isinstance(vecs, Tensor):
        t = vecs
    else:
        t = T.concat([T.reshape(v, (1, 6)) for v in vecs], axis=0)
    if len(t.shape) == 1:
        t = T.reshape(t, (1, 6))
    if t.shape[1] != 6:
        raise ValueError(f"expected pose 6-vectors, got shape {t.shape}")
    return t


def _pose6_mse(pred, target, rotation_weight: float) -> Tensor:
    """Mean squared error over pose 6-vectors; angle diffs wrapped, rotation terms weighted."""
    p = _stack6(pred)
    tgt = np.asarray(target, dtype=np.float64)
    if tgt.ndim == 1:
        tgt = tgt.reshape(1, -1)
    if tgt.shape != p.shape:
        raise ValueError(f"prediction/target length mismatch: {p.shape} vs {tgt.shape}")
    diff = T.sub(p, Tensor(tgt))
    trans = diff[:, :3]
    rot = T.wrap_angle_t(diff[:, 3:])
    n_terms = float(p.shape[0] * 6)
    sq_trans = T.tensor_sum(T.mul(trans, trans))
    sq_rot = T.tensor_sum(T.mul(rot, rot))
    return T.add(T.mul(sq_trans, 1.0 / n_terms), T.mul(sq_rot, rotation_weight / n_terms))


def relative_loss(pred_deltas, target_deltas, cfg: LossConfig = LossConfig()) -> Tensor:
    """Squared error on epoch-to-epoch motion deltas (world translation, body rotation)."""
    return _pose6_mse(pred_deltas, target_deltas, cfg.rotation_weight)


def absolute_loss(pred_poses, target_poses, cfg: LossConfig = LossConfig()) -> Tensor:
    """Squared error on absolute local-frame pose 6-vectors."""
    return _pose6_mse(pred_poses, target_poses, cfg.rotation_weight)


def total_loss(rel_term: Tensor, abs_term: Tensor, cfg: LossConfig = LossConfig()) -> Tensor:
    """lambda_rel * relative + absolute, as two tape ops and nothing else."""
    return T.add(T.mul(rel_term, cfg.lambda_rel), abs_term)


def teacher_forcing_prob(epoch: int, end_epoch: int) -> float:
    """Linear 1 -> 0 schedule hitting exactly 0.0 at end_epoch."""
    if end_epoch <= 0:
        return 0.0
    return max(0.0, 1.0 - epoch / end_epoch)


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "inertial_ls_graph"
    epochs: int = 12
    pretrain_epochs: int = 4
    lr: float = 1e-3
    pretrain_lr: float = 1e-3
    seed: int = 0
    anchor_dropout: float = 0.0
    grad_clip: float = 10.0
    loss: LossConfig = field(default_factory=LossConfig)
    odometry: OdometryConfig = field(default_factory=OdometryConfig)

    def __post_init__(self) -> None:
        if not 0.0 <= self.anchor_dropout < 1.0:
            raise ValueError("anchor_dropout must be in [0, 1)")
        if self.epochs < 0 or self.pretrain_epochs < 0:
            raise ValueError("epoch counts must be >= 0")


@dataclass
class TrainResult:
    store: ParamStore
    log: list[dict]
    first_loss: float
    final_loss: float
    gate_passed: bool


LOG_COLUMNS = ("epoch", "L_rel", "L_abs", "L_total", "lr", "tf_prob")


def save_training_log(path, rows: list[dict]) -> None:
    lines = [",".join(LOG_COLUMNS)]
    for row in rows:
        lines.append(",".join(str(row[c]) if c == "epoch" else repr(float(row[c])) for c in LOG_COLUMNS))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _gt_delta(prev: Pose, cur: Pose) -> np.ndarray:
    """Ground-truth motion step: world translation + body-frame rotation increment."""
    dt = (cur.trans - prev.trans).as_array()
    rel = prev.rot.inverse().multiply(cur.rot)
    return np.concatenate([dt, rotation_to_euler(rel).as_array()])


def _chunks(items: list, size: int):
    for i in range(0, len(items), size):
        yield items[i : i + size]


def _drop_anchors(ranges, prob: float, rng) -> list:
    """Independently drop each anchor's ranges for this epoch with probability prob."""
    if prob <= 0.0 or not ranges:
        return list(ranges)
    anchors = sorted({r.anchor_id for r in ranges})
    draws = rng.uniform(size=len(anchors))
    dropped = {a for a, u in zip(anchors, draws) if u < prob}
    return [r for r in ranges if r.anchor_id not in dropped]


def _check_finite(value: float, what: str, train_epoch: int, t_chunk: float) -> None:
    if not math.isfinite(value):
        raise RuntimeError(
            f"non-finite {what} ({value}) at training epoch {train_epoch}, "
            f"chunk starting t={t_chunk:.3f}; aborting"
        )


def _inertial_pass(
    epochs: list[EpochInputs],
    init_pose: Pose,
    scene: Scene,
    store: ParamStore,
    cfg: TrainConfig,
    train_epoch: int,
) -> float:
    """One pretraining pass: inertial net alone, ground-truth attitude for frame rotation."""
    gravity = scene.gravity.as_array()
    hidden = None
    prev_gt = init_pose
    total = 0.0
    count = 0
    for chunk in _chunks(epochs, cfg.loss.bptt_len):
        if hidden is not None:
            hidden = (hidden[0].detach(), hidden[1].detach())
        preds, targets = [], []
        for ep in chunk:
            if len(ep.imu_t) == 0:
                prev_gt = ep.gt
                continue
            rot = prev_gt.rot.matrix()
            window = WorldImuWindow(
                ep.imu_t,
                Tensor(ep.imu_accel @ rot.T - gravity),
                Tensor(ep.imu_gyro @ rot.T),
            )
            out = inertial_forward(window, hidden, store, cfg.odometry.net)
            hidden = out.hidden
            preds.append(out.delta_world)
            targets.append(_gt_delta(prev_gt, ep.gt))
            prev_gt = ep.gt
        if not preds:
            continue
        loss = relative_loss(preds, np.array(targets), cfg.loss)
        _check_finite(loss.item(), "pretrain loss", train_epoch, chunk[0].t)
        loss.backward()
        store.clip_grad_norm(cfg.grad_clip)
        adam_step(store, lr=cfg.pretrain_lr)
        total += loss.item() * len(preds)
        count += len(preds)
    if count == 0:
        raise ValueError("no IMU windows available for inertial pretraining")
    return total / count


def _joint_pass(
    epochs: list[EpochInputs],
    init_pose: Pose,
    t0: float,
    scene: Scene,
    mode: EstimatorMode,
    store: ParamStore,
    cfg: TrainConfig,
    tf_prob: float,
    train_epoch: int,
) -> tuple[float, float, float]:
    """One scheduled-sampling pass over the sequence. Returns mean (L_rel, L_abs, L_total)."""
    state = initial_state(scene, init_pose, t0, cfg.odometry)
    prev_w_t = Tensor(init_pose.trans.as_array())
    prev_w_r = Tensor(init_pose.rot.matrix())
    prev_gt = init_pose
    tf_rng = child_rng(cfg.seed, f"tf:{train_epoch}")
    drop_rng = child_rng(cfg.seed, f"drop:{train_epoch}")
    sums = np.zeros(3)
    n_epochs = 0
    for chunk in _chunks(epochs, cfg.loss.bptt_len):
        state = state.detached()
        prev_w_t, prev_w_r = prev_w_t.detach(), prev_w_r.detach()
        abs_pred, abs_tgt, rel_pred, rel_tgt = [], [], [], []
        for ep in chunk:
            ranges = _drop_anchors(ep.ranges, cfg.anchor_dropout, drop_rng)
            override = None
            if tf_prob > 0.0 and tf_rng.uniform() < tf_prob:
                override = prev_gt
            imu = (ep.imu_t, ep.imu_accel, ep.imu_gyro) if mode.use_inertial else None
            state, out = odometry_step(
                state, ep.t, ranges, imu, scene, mode, store, cfg.odometry,
                prev_pose_override=override,
            )
            w_t, w_r = local_vec_to_world(out.est_local, out.frame)
            rel_pred.append(T.concat([T.sub(w_t, prev_w_t), relative_euler_t(prev_w_r, w_r)]))
            rel_tgt.append(_gt_delta(prev_gt, ep.gt))
            abs_pred.append(out.est_local)
            abs_tgt.append(world_pose_to_local_vec(ep.gt, out.frame))
            prev_w_t, prev_w_r = w_t, w_r
            prev_gt = ep.gt
        l_rel = relative_loss(rel_pred, np.array(rel_tgt), cfg.loss)
        l_abs = absolute_loss(abs_pred, np.array(abs_tgt), cfg.loss)
        l_tot = total_loss(l_rel, l_abs, cfg.loss)
        _check_finite(l_tot.item(), "loss", train_epoch, chunk[0].t)
        l_tot.backward()
        store.clip_grad_norm(cfg.grad_clip)
        adam_step(store, lr=cfg.lr)
        sums += np.array([l_rel.item(), l_abs.item(), l_tot.item()]) * len(chunk)
        n_epochs += len(chunk)
    mean = sums / n_epochs
    return float(mean[0]), float(mean[1]), float(mean[2])


def train(records: list[Record], scene: Scene, cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """Train the learned components of one estimator mode on a recorded dataset."""
    mode = estimator_mode(cfg.mode)
    if not mode.use_graph and not mode.use_inertial:
        raise ValueError(f"mode {mode.name!r} has no trainable components")
    if cfg.epochs == 0 and cfg.pretrain_epochs == 0:
        raise ValueError("nothing to train: both epoch counts are zero")
    init_pose, t0, epochs = split_epochs(records)
    if not epochs:
        raise ValueError("dataset has no ranging epochs after the initial pose")
    for ep in epochs:
        if ep.gt is None:
            raise ValueError(f"training needs ground truth at every epoch; missing at t={ep.t}")

    store = ParamStore(cfg.seed)
    rows: list[dict] = []
    counter = 0
    stage1_first = stage1_final = None
    if mode.use_inertial and cfg.pretrain_epochs > 0:
        for _ in range(cfg.pretrain_epochs):
            l_rel = _inertial_pass(epochs, init_pose, scene, store, cfg, counter)
            rows.append({
                "epoch": counter, "L_rel": l_rel, "L_abs": 0.0, "L_total": l_rel,
                "lr": cfg.pretrain_lr, "tf_prob": 1.0,
            })
            stage1_first = stage1_first if stage1_first is not None else l_rel
            stage1_final = l_rel
            counter += 1

    first = final = None
    if mode.use_graph:
        for joint_epoch in range(cfg.epochs):
            p_tf = teacher_forcing_prob(joint_epoch, cfg.loss.teacher_forcing_end_epoch)
            l_rel, l_abs, l_tot = _joint_pass(
                epochs, init_pose, t0, scene, mode, store, cfg, p_tf, counter,
            )
            rows.append({
                "epoch": counter, "L_rel": l_rel, "L_abs": l_abs, "L_total": l_tot,
                "lr": cfg.lr, "tf_prob": p_tf,
            })
            first = first if first is not None else l_tot
            final = l_tot
            counter += 1
    if first is None:
        first, final = stage1_first, stage1_final
    gate = final < 0.5 * first
    return TrainResult(store=store, log=rows, first_loss=first, final_loss=final, gate_passed=gate)


# ---------------------------------------------------------------------------
# Evaluation


@dataclass(frozen=True)
class ApeResult:
    """Absolute pose error of a trajectory against ground truth (no alignment)."""

    rmse_xy: float
    rmse_xyz: float
    n_matched: int
    times: tuple[float, ...]
    errors_xy: tuple[float, ...]
    errors_xyz: tuple[float, ...]

    def as_dict(self) -> dict:
        return {
            "rmse_xy": self.rmse_xy,
            "rmse_xyz": self.rmse_xyz,
            "n_matched": self.n_matched,
        }


def _match(
    trajectory: list[tuple[float, Pose]],
    ground_truth: list[tuple[float, Pose]],
    max_dt: float,
) -> list[tuple[float, Pose, Pose]]:
    """Pair each estimate with the nearest-in-time ground truth within max_dt."""
    est = sorted(trajectory, key=lambda p: p[0])
    gt = sorted(ground_truth, key=lambda p: p[0])
    gt_t = np.array([t for t, _ in gt])
    out = []
    for t, pose in est:
        i = int(np.searchsorted(gt_t, t))
        best, best_dt = None, max_dt
        for j in (i - 1, i):
            if 0 <= j < len(gt) and abs(gt_t[j] - t) <= best_dt:
                best, best_dt = j, abs(gt_t[j] - t)
        if best is not None:
            out.append((t, pose, gt[best][1]))
    return out


def ape(
    trajectory: list[tuple[float, Pose]],
    ground_truth: list[tuple[float, Pose]],
    max_dt: float,
) -> ApeResult:
    matched = _match(trajectory, ground_truth, max_dt)
    if not matched:
        raise ValueError("no estimate matched ground truth within the time tolerance")
    times, exy, exyz = [], [], []
    for t, pose, gt_pose in matched:
        d = (pose.trans - gt_pose.trans).as_array()
        times.append(t)
        exy.append(math.hypot(d[0], d[1]))
        exyz.append(float(np.linalg.norm(d)))
    exy_a, exyz_a = np.array(exy), np.array(exyz)
    return ApeResult(
        rmse_xy=float(np.sqrt(np.mean(exy_a**2))),
        rmse_xyz=float(np.sqrt(np.mean(exyz_a**2))),
        n_matched=len(matched),
        times=tuple(times),
        errors_xy=tuple(exy),
        errors_xyz=tuple(exyz),
    )


def convex_hull_xy(points: np.ndarray) -> np.ndarray:
    """Convex hull of 2-D points (monotone chain), counter-clockwise, no repeats."""
    pts = np.unique(np.asarray(points, dtype=np.float64).reshape(-1, 2), axis=0)
    if len(pts) < 3:
        raise ValueError(f"need at least 3 distinct points for a hull, got {len(pts)}")
    ordered = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list[np.ndarray] = []
    for p in ordered:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[np.ndarray] = []
    for p in ordered[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = np.array(lower[:-1] + upper[:-1])
    if len(hull) < 3:
        raise ValueError("hull is degenerate (all points collinear)")
    return hull


def point_in_convex_hull(hull: np.ndarray, p, eps: float = 1e-12) -> bool:
    """True if p lies inside or on the boundary of a counter-clockwise hull."""
    x, y = float(p[0]), float(p[1])
    for i in range(len(hull)):
        ax, ay = hull[i]
        bx, by = hull[(i + 1) % len(hull)]
        if (bx - ax) * (y - ay) - (by - ay) * (x - ax) < -eps:
            return False
    return True


def _rmse(values: list[float]) -> float:
    if not values:
        return float("nan")
    return float(np.sqrt(np.mean(np.array(values) ** 2)))


def _split_stats(groups: dict[str, list[tuple[float, float]]], a: str, b: str) -> dict:
    """RMSE per group of (xy, xyz) error pairs plus a/b ratios and counts."""
    out: dict = {}
    for name, errs in groups.items():
        out[f"{name}_rmse_xy"] = _rmse([e[0] for e in errs])
        out[f"{name}_rmse_xyz"] = _rmse([e[1] for e in errs])
        out[f"n_{name}"] = len(errs)
    for suffix in ("xy", "xyz"):
        denom = out[f"{b}_rmse_{suffix}"]
        num = out[f"{a}_rmse_{suffix}"]
        out[f"ratio_{suffix}"] = num / denom if out[f"n_{b}"] else float("nan")
    return out


def _pair_errors(pose: Pose, gt_pose: Pose) -> tuple[float, float]:
    d = (pose.trans - gt_pose.trans).as_array()
    return math.hypot(d[0], d[1]), float(np.linalg.norm(d))


def split_ape_by_envelope(
    trajectory: list[tuple[float, Pose]],
    ground_truth: list[tuple[float, Pose]],
    anchor_xy: np.ndarray,
    max_dt: float,
) -> dict:
    """Split APE by whether the true position lies inside the anchors' xy hull.

    Ratios are outside/inside; an empty outside segment yields NaN RMSEs
    there (the count fields flag it).
    """
    hull = convex_hull_xy(anchor_xy)
    groups: dict[str, list[tuple[float, float]]] = {"outside": [], "inside": []}
    for _, pose, gt_pose in _match(trajectory, ground_truth, max_dt):
        gt_xy = (gt_pose.trans.x, gt_pose.trans.y)
        key = "inside" if point_in_convex_hull(hull, gt_xy) else "outside"
        groups[key].append(_pair_errors(pose, gt_pose))
    return _split_stats(groups, "outside", "inside")


def split_ape_by_windows(
    trajectory: list[tuple[float, Pose]],
    ground_truth: list[tuple[float, Pose]],
    windows: list[tuple[float, float]],
    max_dt: float,
) -> dict:
    """Split APE by membership in half-open [start, end) time windows (ratios masked/normal)."""
    groups: dict[str, list[tuple[float, float]]] = {"masked": [], "normal": []}
    for t, pose, gt_pose in _match(trajectory, ground_truth, max_dt):
        key = "masked" if any(start <= t < end for start, end in windows) else "normal"
        groups[key].append(_pair_errors(pose, gt_pose))
    return _split_stats(groups, "masked", "normal")


def challenge_eval(
    kind: str,
    trajectory: list[tuple[float, Pose]],
    ground_truth: list[tuple[float, Pose]],
    scene: Scene,
    windows: list[tuple[float, float]] | None = None,
    max_dt: float = 0.05,
) -> dict:
    """Segment-split APE for the two stressed evaluation settings."""
    if kind == "envelope":
        anchor_xy = np.array([[p.x, p.y] for p in scene.anchors.values()])
        return split_ape_by_envelope(trajectory, ground_truth, anchor_xy, max_dt)
    if kind == "anchor_missing":
        if not windows:
            raise ValueError("anchor_missing evaluation needs mask windows")
        return split_ape_by_windows(trajectory, ground_truth, windows, max_dt)
    raise ValueError(f"unknown challenge kind {kind!r}; expected 'envelope' or 'anchor_missing'")
