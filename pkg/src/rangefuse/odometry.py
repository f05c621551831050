"""Sequential ranging/inertial odometry: five estimator modes over one driver.

Modes (ablation ladder):
  ls                -- damped least squares on ranges only
  graph             -- attention network fed by a prior and raw ranges
  ls_graph          -- graph plus the planar least-squares fix as a feature
  inertial_graph    -- graph plus recurrent IMU delta/features
  inertial_ls_graph -- everything combined

Estimation happens in a local anchor-derived frame (see rangefuse.nominal);
outputs are mapped back to the world frame. All state that must carry
gradients (pose chain, GRU hidden) lives on the autodiff tape, so the same
step function serves inference (under no_grad) and truncated-BPTT training.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .geometry import EulerAngles, Pose, Vec3, euler_to_rotation
from .leastsq import LmOptions, PoseVector6, planar_fix, solve_pose_lm
from .nominal import NominalFrame, build_nominal, from_nominal, point_to_nominal, to_nominal
from .nn import tensor as T
from .nn.layers import GatLayerParams, conv1d, gat_layer, gru_step, linear, mlp
from .nn.optim import ParamStore
from .nn.rot import compose_euler_t, euler_to_matrix_t, matrix_to_euler_t
from .nn.tensor import Tensor, no_grad
from .sensors import GroundTruthPose, ImuSample, RangeMeasurement, Record, Scene

NODE_TYPES = ("anchor", "tag", "body")
EDGE_TYPES = (
    "anchor_tag",
    "tag_anchor",
    "tag_body",
    "body_tag",
    "self_anchor",
    "self_tag",
    "self_body",
)


@dataclass(frozen=True)
class EstimatorMode:
    name: str
    use_inertial: bool
    use_ls: bool
    use_graph: bool


_MODES = {
    "ls": EstimatorMode("ls", False, True, False),
    "graph": EstimatorMode("graph", False, False, True),
    "ls_graph": EstimatorMode("ls_graph", False, True, True),
    "inertial_graph": EstimatorMode("inertial_graph", True, False, True),
    "inertial_ls_graph": EstimatorMode("inertial_ls_graph", True, True, True),
}


def estimator_mode(name: str) -> EstimatorMode:
    try:
        return _MODES[name]
    except KeyError:
        raise ValueError(f"unknown mode {name!r}; expected one of {sorted(_MODES)}") from None


def mode_names() -> tuple[str, ...]:
    return tuple(sorted(_MODES))


@dataclass(frozen=True)
class NetConfig:
    """Widths of the learned components; defaults are desk-scale."""

    hidden: int = 64
    heads: int = 4
    gat_layers: int = 4
    feat_width: int = 64
    gru_hidden: int = 128
    conv_channels: tuple[int, int] = (32, 64)
    conv_kernel: int = 3
    window_len: int = 20

    def __post_init__(self) -> None:
        if self.hidden % self.heads != 0:
            raise ValueError("hidden must be divisible by heads")
        if self.window_len < 2 * (self.conv_kernel - 1) + 1:
            raise ValueError("window_len too short for two valid convolutions")

    @property
    def body_width(self) -> int:
        return 6 + 2 + self.feat_width


@dataclass(frozen=True)
class PosePrior:
    """Body-node pose input: [x, y, z, roll, pitch, yaw] in the local frame."""

    pose_local: Tensor
    source: str

    def __post_init__(self) -> None:
        if self.pose_local.shape != (6,):
            raise ValueError(f"prior must be a 6-vector, got {self.pose_local.shape}")
        if self.source not in ("previous_estimate", "imu_propagated"):
            raise ValueError(f"unknown prior source {self.source!r}")


@dataclass
class InertialOutput:
    delta_world: Tensor  # (6,): world-frame translation step + body-frame rotation step
    feat: Tensor  # (feat_width,)
    hidden: tuple[Tensor, Tensor]


@dataclass
class GraphSnapshot:
    """One epoch's heterogeneous graph, canonically ordered.

    Anchor nodes are duplicated per (anchor, tag) ranging pair, sorted by
    that pair; tag nodes sorted by id; single body node last. Edges are
    sorted by (dst, src). Body feature blocks that a mode leaves unused are
    zero-filled so every mode shares one feature layout; `body_mask` records
    which blocks are live.
    """

    pairs: tuple[tuple[int, int, float], ...]  # (anchor_id, tag_id, distance)
    anchor_feats: np.ndarray  # (A, 4): anchor position in local frame + distance
    tag_ids: tuple[int, ...]
    tag_feats: np.ndarray  # (M, 3): tag extrinsics in the body frame
    prior: PosePrior
    ls_fix: Tensor | None  # (2,) local-frame planar fix
    inertial_feat: Tensor | None
    edge_src: np.ndarray
    edge_dst: np.ndarray
    edge_type: np.ndarray

    @property
    def n_anchor_nodes(self) -> int:
        return len(self.pairs)

    @property
    def n_nodes(self) -> int:
        return len(self.pairs) + len(self.tag_ids) + 1

    @property
    def body_index(self) -> int:
        return self.n_nodes - 1

    @property
    def body_mask(self) -> tuple[bool, bool]:
        return (self.ls_fix is not None, self.inertial_feat is not None)


def build_graph(
    ranges: list[RangeMeasurement],
    scene: Scene,
    frame: NominalFrame,
    prior: PosePrior,
    ls_fix: Tensor | None = None,
    inertial_feat: Tensor | None = None,
) -> GraphSnapshot:
    """Assemble the epoch graph; see GraphSnapshot for the ordering contract."""
    if not ranges:
        raise ValueError("cannot build a graph from zero ranges")
    seen: dict[tuple[int, int], float] = {}
    for r in ranges:
        if r.anchor_id not in scene.anchors:
            raise KeyError(f"range references unknown anchor id {r.anchor_id}")
        if r.tag_id not in scene.tag_extrinsics:
            raise KeyError(f"range references unknown tag id {r.tag_id}")
        seen.setdefault((r.anchor_id, r.tag_id), r.d)
    pairs = tuple((a, t, seen[(a, t)]) for a, t in sorted(seen))
    tag_ids = tuple(sorted({t for _, t, _ in pairs}))
    tag_row = {t: i for i, t in enumerate(tag_ids)}

    anchor_feats = np.empty((len(pairs), 4), dtype=np.float64)
    for i, (a_id, _, d) in enumerate(pairs):
        pos = point_to_nominal(frame, scene.anchors[a_id])
        anchor_feats[i] = (pos.x, pos.y, pos.z, d)
    tag_feats = np.array([scene.tag_extrinsics[t].as_array() for t in tag_ids])

    n_anchor = len(pairs)
    body = n_anchor + len(tag_ids)
    type_idx = {name: k for k, name in enumerate(EDGE_TYPES)}
    src, dst, etype = [], [], []

    def edge(u: int, v: int, kind: str) -> None:
        src.append(u)
        dst.append(v)
        etype.append(type_idx[kind])

    for i, (_, t_id, _) in enumerate(pairs):
        edge(i, n_anchor + tag_row[t_id], "anchor_tag")
        edge(n_anchor + tag_row[t_id], i, "tag_anchor")
        edge(i, i, "self_anchor")
    for j in range(len(tag_ids)):
        edge(n_anchor + j, body, "tag_body")
        edge(body, n_anchor + j, "body_tag")
        edge(n_anchor + j, n_anchor + j, "self_tag")
    edge(body, body, "self_body")

    src_a = np.asarray(src, dtype=np.int64)
    dst_a = np.asarray(dst, dtype=np.int64)
    type_a = np.asarray(etype, dtype=np.int64)
    order = np.lexsort((src_a, dst_a))
    return GraphSnapshot(
        pairs=pairs,
        anchor_feats=anchor_feats,
        tag_ids=tag_ids,
        tag_feats=tag_feats,
        prior=prior,
        ls_fix=ls_fix,
        inertial_feat=inertial_feat,
        edge_src=src_a[order],
        edge_dst=dst_a[order],
        edge_type=type_a[order],
    )


def ranging_forward(graph: GraphSnapshot, store: ParamStore, cfg: NetConfig = NetConfig()) -> Tensor:
    """Graph attention over one epoch snapshot -> absolute local-frame pose 6-vector.

    Ranging geometry is scale-equivariant, so metric features (anchor
    coordinates, distances, prior translation, planar fix) are normalized by
    the RMS of the observed anchors' local coordinates and the head's
    translation is mapped back; encoders then see O(1) inputs whether the
    scene spans 3 m or 300 m. Coordinates alone set the scale so it stays
    constant while the observed anchor set does, and it is a deterministic
    function of the canonically ordered graph.
    """
    h = cfg.hidden
    scale = max(1.0, float(np.sqrt(np.mean(graph.anchor_feats[:, :3] ** 2))))
    inv3 = Tensor(np.array([1.0 / scale] * 3 + [1.0] * 3))
    anchor_h = mlp(Tensor(graph.anchor_feats / scale), store, "graph.enc.anchor", (4, h, h), final_activation=T.tanh)
    tag_h = mlp(Tensor(graph.tag_feats), store, "graph.enc.tag", (3, h, h), final_activation=T.tanh)
    blocks = [T.mul(graph.prior.pose_local, inv3)]
    if graph.ls_fix is not None:
        blocks.append(T.mul(graph.ls_fix, Tensor(np.full(2, 1.0 / scale))))
    else:
        blocks.append(Tensor(np.zeros(2)))
    blocks.append(graph.inertial_feat if graph.inertial_feat is not None else Tensor(np.zeros(cfg.feat_width)))
    body_in = T.reshape(T.concat(blocks), (1, cfg.body_width))
    body_h = mlp(body_in, store, "graph.enc.body", (cfg.body_width, h, h), final_activation=T.tanh)
    feats = T.concat([anchor_h, tag_h, body_h], axis=0)

    n_anchor, n_tag = graph.n_anchor_nodes, len(graph.tag_ids)
    type_blocks = [
        ("anchor", 0, n_anchor),
        ("tag", n_anchor, n_anchor + n_tag),
        ("body", n_anchor + n_tag, n_anchor + n_tag + 1),
    ]
    for layer in range(cfg.gat_layers):
        last = layer == cfg.gat_layers - 1
        params = GatLayerParams(
            in_dim=h,
            heads=cfg.heads,
            head_dim=h if last else h // cfg.heads,
            node_types=NODE_TYPES,
            edge_types=EDGE_TYPES,
            average_heads=last,
        )
        feats = gat_layer(
            feats, type_blocks, graph.edge_src, graph.edge_dst, graph.edge_type,
            store, f"graph.gat{layer}", params,
        )
    body_vec = feats[graph.body_index]
    out = mlp(body_vec, store, "graph.head", (h, h, 6))
    return T.mul(out, Tensor(np.array([scale] * 3 + [1.0] * 3)))


def inertial_forward(
    window,
    hidden: tuple[Tensor, Tensor] | None,
    store: ParamStore,
    cfg: NetConfig = NetConfig(),
) -> InertialOutput:
    """Conv + two-layer GRU over a world-frame IMU window.

    The window is padded (repeating the boundary sample) or truncated
    (keeping the most recent samples) to cfg.window_len columns. Returns the
    6-vector motion delta, the feature vector handed to the graph, and the
    GRU hidden pair to carry into the next epoch.
    """
    n = len(window.t)
    if n == 0:
        raise ValueError("empty IMU window")
    accel = window.accel_w if isinstance(window.accel_w, Tensor) else Tensor(window.accel_w)
    gyro = window.gyro_w if isinstance(window.gyro_w, Tensor) else Tensor(window.gyro_w)
    x = T.concat([T.transpose(accel), T.transpose(gyro)], axis=0)  # (6, n)
    if n < cfg.window_len:
        pads = [x] + [x[:, n - 1 : n]] * (cfg.window_len - n)
        x = T.concat(pads, axis=1)
    elif n > cfg.window_len:
        x = x[:, n - cfg.window_len :]

    c0, c1 = cfg.conv_channels
    x = T.tanh(conv1d(x, store, "inertial.conv0", 6, c0, cfg.conv_kernel))
    x = T.tanh(conv1d(x, store, "inertial.conv1", c0, c1, cfg.conv_kernel))
    seq = T.transpose(x)  # (steps, c1)

    if hidden is None:
        h1 = Tensor(np.zeros(cfg.gru_hidden))
        h2 = Tensor(np.zeros(cfg.gru_hidden))
    else:
        h1, h2 = hidden
    for step in range(seq.shape[0]):
        h1 = gru_step(seq[step], h1, store, "inertial.gru0", c1, cfg.gru_hidden)
        h2 = gru_step(h1, h2, store, "inertial.gru1", cfg.gru_hidden, cfg.gru_hidden)
    delta = linear(h2, store, "inertial.delta_head", cfg.gru_hidden, 6)
    feat = T.tanh(linear(h2, store, "inertial.feat_head", cfg.gru_hidden, cfg.feat_width))
    return InertialOutput(delta, feat, (h1, h2))


def propagate_prior(prev_est_local: Tensor, delta_world: Tensor | None, frame: NominalFrame) -> PosePrior:
    """Prior for the next epoch: the previous estimate, optionally advanced by an IMU delta.

    The translation delta lives in the world frame and is rotated into the
    local frame; the rotation delta is a body-frame increment and composes
    on the right, which is frame-independent.
    """
    if delta_world is None:
        return PosePrior(prev_est_local, "previous_estimate")
    if delta_world.shape != (6,):
        raise ValueError(f"delta must be a 6-vector, got {delta_world.shape}")
    rot_wn = Tensor(frame.rot.matrix().T)
    trans = T.add(prev_est_local[:3], T.matmul(rot_wn, delta_world[:3]))
    euler = compose_euler_t(prev_est_local[3:], delta_world[3:])
    return PosePrior(T.concat([trans, euler]), "imu_propagated")


def local_vec_to_world(vec_local: Tensor, frame: NominalFrame) -> tuple[Tensor, Tensor]:
    """Taped world-frame (translation (3,), rotation matrix (3,3)) of a local 6-vector."""
    rf = Tensor(frame.rot.matrix())
    trans = T.add(T.matmul(rf, vec_local[:3]), Tensor(frame.origin.as_array()))
    rot = T.matmul(rf, euler_to_matrix_t(vec_local[3:]))
    return trans, rot


def world_pose_to_local_vec(pose_world: Pose, frame: NominalFrame) -> np.ndarray:
    return PoseVector6.from_pose(to_nominal(frame, pose_world)).as_array()


def local_vec_to_world_pose(vec_local: np.ndarray, frame: NominalFrame) -> Pose:
    local = PoseVector6.from_array(vec_local).as_pose()
    return from_nominal(frame, local)


@dataclass(frozen=True)
class OdometryConfig:
    nominal_radius: float = 40.0
    rebase_hysteresis: float = 1.0
    lm: LmOptions = field(default_factory=LmOptions)
    net: NetConfig = field(default_factory=NetConfig)


@dataclass
class OdometryState:
    frame: NominalFrame
    est_local: Tensor  # (6,) pose in `frame`
    hidden: tuple[Tensor, Tensor] | None
    ls_prev: PoseVector6 | None
    candidate_set: tuple[int, ...] | None
    candidate_since: float
    t_prev: float

    def detached(self) -> "OdometryState":
        """Cut the autodiff tape at the current state (chunk boundary)."""
        hidden = None if self.hidden is None else (self.hidden[0].detach(), self.hidden[1].detach())
        return replace(self, est_local=self.est_local.detach(), hidden=hidden)


@dataclass
class StepOutput:
    t: float
    est_local: Tensor
    frame: NominalFrame
    prior: PosePrior
    inertial_delta: Tensor | None
    diag: dict


def _select_anchor_ids(scene: Scene, radius: float, reference: Vec3) -> tuple[int, ...]:
    """Anchor ids within radius of the reference, or the single nearest one."""
    dists = {i: (p - reference).norm() for i, p in scene.anchors.items()}
    inside = tuple(sorted(i for i, d in dists.items() if d <= radius))
    if inside:
        return inside
    nearest = min(sorted(dists), key=lambda i: dists[i])
    return (nearest,)


def _frame_from_ids(scene: Scene, ids: tuple[int, ...]) -> NominalFrame:
    subset = [(i, scene.anchors[i]) for i in ids]
    return build_nominal(subset, math.inf, Vec3(0.0, 0.0, 0.0))


def _remap_vec6(vec: Tensor, old: NominalFrame, new: NominalFrame) -> Tensor:
    """Re-express a taped local pose 6-vector in another frame (constant transform)."""
    rel_rot = new.rot.matrix().T @ old.rot.matrix()
    offset = new.rot.matrix().T @ (old.origin - new.origin).as_array()
    trans = T.add(T.matmul(Tensor(rel_rot), vec[:3]), Tensor(offset))
    euler = matrix_to_euler_t(T.matmul(Tensor(rel_rot), euler_to_matrix_t(vec[3:])))
    return T.concat([trans, euler])


def initial_state(scene: Scene, init_pose: Pose, t0: float, cfg: OdometryConfig) -> OdometryState:
    ids = _select_anchor_ids(scene, cfg.nominal_radius, init_pose.trans)
    frame = _frame_from_ids(scene, ids)
    est = Tensor(world_pose_to_local_vec(init_pose, frame))
    return OdometryState(
        frame=frame,
        est_local=est,
        hidden=None,
        ls_prev=None,
        candidate_set=None,
        candidate_since=t0,
        t_prev=t0,
    )


def odometry_step(
    state: OdometryState,
    t: float,
    ranges: list[RangeMeasurement],
    imu: tuple[np.ndarray, np.ndarray, np.ndarray] | None,
    scene: Scene,
    mode: EstimatorMode,
    store: ParamStore | None,
    cfg: OdometryConfig,
    prev_pose_override: Pose | None = None,
) -> tuple[OdometryState, StepOutput]:
    """Advance one ranging epoch.

    `imu` is (timestamps, accel_body (n,3), gyro_body (n,3)) covering
    (state.t_prev, t]. `prev_pose_override` (world frame) replaces the
    chain's previous estimate — used for teacher forcing during training.
    Epochs with zero ranges hold the prior and flag it in the diagnostics.
    """
    frame = state.frame
    est_prev = state.est_local
    candidate_set, candidate_since = state.candidate_set, state.candidate_since

    if prev_pose_override is not None:
        ref_pos = prev_pose_override.trans
    else:
        ref_pos = local_vec_to_world_pose(est_prev.data, frame).trans

    selected = _select_anchor_ids(scene, cfg.nominal_radius, ref_pos)
    rebased = False
    if selected != frame.anchor_set:
        if selected == candidate_set:
            if t - candidate_since >= cfg.rebase_hysteresis:
                new_frame = _frame_from_ids(scene, selected)
                est_prev = _remap_vec6(est_prev, frame, new_frame)
                frame = new_frame
                candidate_set, candidate_since = None, t
                rebased = True
        else:
            candidate_set, candidate_since = selected, t
    else:
        candidate_set = None

    if prev_pose_override is not None:
        est_prev = Tensor(world_pose_to_local_vec(prev_pose_override, frame))

    hidden = state.hidden
    delta = None
    feat = None
    imu_len = 0 if imu is None else len(imu[0])
    if mode.use_inertial and imu_len > 0:
        t_arr, accel_b, gyro_b = imu
        rot_prev = T.matmul(Tensor(frame.rot.matrix()), euler_to_matrix_t(est_prev[3:]))
        accel_w = T.sub(T.matmul(Tensor(accel_b), T.transpose(rot_prev)), Tensor(scene.gravity.as_array()))
        gyro_w = T.matmul(Tensor(gyro_b), T.transpose(rot_prev))
        window = WorldImuWindow(np.asarray(t_arr, dtype=np.float64), accel_w, gyro_w)
        inert = inertial_forward(window, hidden, store, cfg.net)
        hidden = inert.hidden
        delta = inert.delta_world
        feat = inert.feat

    prior = propagate_prior(est_prev, delta, frame)

    ls_fix_local = None
    ls_prev = state.ls_prev
    ls_diag = None
    if mode.use_ls and ranges:
        meas = [(r.tag_id, r.anchor_id, r.d) for r in ranges]
        if ls_prev is None:
            centroid = np.mean([p.as_array() for p in scene.anchors.values()], axis=0)
            pose0 = PoseVector6(centroid[0], centroid[1], centroid[2], 0.0, 0.0, 0.0)
        else:
            pose0 = ls_prev
        solution, report = solve_pose_lm(meas, scene, pose0, cfg.lm)
        ls_prev = solution
        fix = planar_fix(solution)
        fix_local = point_to_nominal(frame, Vec3(fix.x, fix.y, 0.0))
        ls_fix_local = Tensor(np.array([fix_local.x, fix_local.y]))
        ls_diag = {
            "iterations": report.iterations,
            "final_cost": report.final_cost,
            "converged": report.converged,
            "rank_deficient": report.rank_deficient,
            "ill_conditioned": list(report.ill_conditioned),
        }

    no_ranges = not ranges
    if not mode.use_graph:
        if ls_prev is not None and ranges:
            est_new = Tensor(world_pose_to_local_vec(ls_prev.as_pose(), frame))
        else:
            est_new = prior.pose_local
    elif no_ranges:
        est_new = prior.pose_local
    else:
        graph = build_graph(ranges, scene, frame, prior, ls_fix_local, feat)
        est_new = ranging_forward(graph, store, cfg.net)

    diag = {
        "t": t,
        "mode": mode.name,
        "n_ranges": len(ranges),
        "n_anchors": len({r.anchor_id for r in ranges}),
        "frame_anchors": list(frame.anchor_set),
        "rebased": rebased,
        "no_ranges": no_ranges,
        "prior_source": prior.source,
        "ls": ls_diag,
    }
    new_state = OdometryState(
        frame=frame,
        est_local=est_new,
        hidden=hidden,
        ls_prev=ls_prev,
        candidate_set=candidate_set,
        candidate_since=candidate_since,
        t_prev=t,
    )
    return new_state, StepOutput(t, est_new, frame, prior, delta, diag)


@dataclass
class WorldImuWindow:
    """World-frame IMU window whose arrays may live on the autodiff tape."""

    t: np.ndarray
    accel_w: object  # (n, 3) Tensor or ndarray
    gyro_w: object  # (n, 3) Tensor or ndarray


@dataclass(frozen=True)
class EpochInputs:
    """Dataset records regrouped per ranging epoch."""

    t: float
    ranges: tuple[RangeMeasurement, ...]
    imu_t: np.ndarray
    imu_accel: np.ndarray
    imu_gyro: np.ndarray
    gt: Pose | None


def split_epochs(records: list[Record]) -> tuple[Pose, float, list[EpochInputs]]:
    """Group a time-sorted record stream into (initial gt pose, t0, epochs).

    Epoch boundaries are the union of range timestamps and ground-truth
    timestamps after the first ground-truth record, which seeds the chain.
    Each epoch carries the IMU samples in (previous epoch, this epoch].
    """
    imu = [r for r in records if isinstance(r, ImuSample)]
    rngs = [r for r in records if isinstance(r, RangeMeasurement)]
    gts = [r for r in records if isinstance(r, GroundTruthPose)]
    if not gts:
        raise ValueError("dataset has no ground-truth records; cannot seed the estimator")
    init = gts[0]
    times = sorted({r.t for r in rngs if r.t > init.t} | {g.t for g in gts if g.t > init.t})
    by_range: dict[float, list[RangeMeasurement]] = {}
    for r in rngs:
        by_range.setdefault(r.t, []).append(r)
    gt_by_t = {g.t: g.pose for g in gts}

    imu_t = np.array([s.t for s in imu], dtype=np.float64)
    imu_a = np.array([s.accel.as_array() for s in imu]) if imu else np.zeros((0, 3))
    imu_w = np.array([s.gyro.as_array() for s in imu]) if imu else np.zeros((0, 3))

    epochs = []
    t_prev = init.t
    for t in times:
        lo = np.searchsorted(imu_t, t_prev, side="right")
        hi = np.searchsorted(imu_t, t, side="right")
        epochs.append(
            EpochInputs(
                t=t,
                ranges=tuple(sorted(by_range.get(t, []), key=lambda r: (r.tag_id, r.anchor_id))),
                imu_t=imu_t[lo:hi],
                imu_accel=imu_a[lo:hi],
                imu_gyro=imu_w[lo:hi],
                gt=gt_by_t.get(t),
            )
        )
        t_prev = t
    return init.pose, init.t, epochs


def run_odometry(
    records: list[Record],
    scene: Scene,
    mode_name: str,
    store: ParamStore | None = None,
    cfg: OdometryConfig = OdometryConfig(),
) -> tuple[list[tuple[float, Pose]], list[dict]]:
    """Run one estimator over a dataset; returns world-frame trajectory + diagnostics."""
    mode = estimator_mode(mode_name)
    if mode.use_graph and store is None:
        raise ValueError(f"mode {mode.name} needs network parameters")
    if mode.use_inertial and not any(isinstance(r, ImuSample) for r in records):
        raise ValueError(f"mode {mode.name} needs IMU records in the dataset")
    init_pose, t0, epochs = split_epochs(records)
    state = initial_state(scene, init_pose, t0, cfg)
    trajectory: list[tuple[float, Pose]] = []
    diagnostics: list[dict] = []
    with no_grad():
        for ep in epochs:
            imu = (ep.imu_t, ep.imu_accel, ep.imu_gyro) if mode.use_inertial else None
            state, out = odometry_step(state, ep.t, list(ep.ranges), imu, scene, mode, store, cfg)
            trajectory.append((ep.t, local_vec_to_world_pose(out.est_local.data, out.frame)))
            diagnostics.append(out.diag)
    return trajectory, diagnostics


def save_trajectory_csv(path, trajectory: list[tuple[float, Pose]]) -> None:
    lines = ["t,x,y,z,roll,pitch,yaw"]
    for t, pose in trajectory:
        v = PoseVector6.from_pose(pose)
        cols = (t, v.x, v.y, v.z, v.roll, v.pitch, v.yaw)
        lines.append(",".join(repr(float(c)) for c in cols))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_trajectory_csv(path) -> list[tuple[float, Pose]]:
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != "t,x,y,z,roll,pitch,yaw":
        raise ValueError(f"{path}: expected header 't,x,y,z,roll,pitch,yaw'")
    out = []
    for i, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 7:
            raise ValueError(f"{path}:{i}: expected 7 columns, got {len(parts)}")
        try:
            vals = [float(p) for p in parts]
        except ValueError as exc:
            raise ValueError(f"{path}:{i}: {exc}") from None
        pose = Pose(
            euler_to_rotation(EulerAngles(vals[4], vals[5], vals[6])),
            Vec3(vals[1], vals[2], vals[3]),
        )
        out.append((vals[0], pose))
    return out


def save_diagnostics(path, diagnostics: list[dict]) -> None:
    with open(Path(path), "w", encoding="utf-8") as f:
        for entry in diagnostics:
            f.write(json.dumps(entry, sort_keys=True, separators=(",", ":")) + "\n")
