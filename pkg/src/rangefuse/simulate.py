"""Deterministic scene/trajectory generation and sensor corruption.

Three scene presets cover the experiment regimes: a small planar indoor
loop with 3 tags / 8 anchors, a 40 m outdoor corridor whose 4 anchors sit
near the far end (so the path starts outside their convex hull), and a
330 m curved tunnel lined with 36 anchors at uniform height.

All trajectories are closed-form and twice differentiable; velocities,
world accelerations and body rates are exact analytic derivatives, never
finite differences. Generation is single-threaded and every draw comes
from a labeled child stream of one seed, so identical inputs produce
byte-identical dataset files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .geometry import EulerAngles, Pose, Rotation, Vec3, euler_to_rotation
from .seeding import child_rng
from .sensors import GroundTruthPose, ImuSample, RangeMeasurement, Record, Scene

_PRESETS = ("indoor", "outdoor", "tunnel")


@dataclass(frozen=True)
class NoiseModel:
    """Corruption applied to ideal measurements.

    Ranging noise is Gaussian plus, with probability `nlos_prob`, a positive
    exponential delay of mean `nlos_extra` (paths lengthen under multipath,
    never shorten). `bias_range` bounds the per-pair constant bias drawn
    uniformly once per scene. IMU white noise and constant biases use the
    `imu_*` fields. These synthetic models are stand-ins for field behavior
    and are labeled as such in dataset metadata.
    """

    gaussian_sigma: float = 0.0
    bias_range: float = 0.0
    nlos_prob: float = 0.0
    nlos_extra: float = 0.0
    dropout_prob: float = 0.0
    seed: int = 0
    imu_accel_sigma: float = 0.0
    imu_gyro_sigma: float = 0.0
    imu_accel_bias: float = 0.0
    imu_gyro_bias: float = 0.0

    def __post_init__(self) -> None:
        for name in ("nlos_prob", "dropout_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        for name in ("gaussian_sigma", "bias_range", "nlos_extra",
                     "imu_accel_sigma", "imu_gyro_sigma", "imu_accel_bias", "imu_gyro_bias"):
            v = getattr(self, name)
            if v < 0.0:
                raise ValueError(f"{name} must be >= 0, got {v}")


@dataclass(frozen=True)
class TrajectoryProfile:
    """Closed-form path family and its envelope.

    `extent` is the motion envelope: x/y span the horizontal box and z is
    the nominal flight height. `speed` is the characteristic speed (exact
    for circular lissajous paths). A corridor narrower than 1 m degenerates
    to a straight constant-velocity segment.
    """

    kind: str
    extent: Vec3
    duration: float
    speed: float

    def __post_init__(self) -> None:
        if self.kind not in ("lissajous_planar", "corridor_3d", "tunnel_curve"):
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if self.duration <= 0.0:
            raise ValueError("duration must be positive")
        if self.extent.x <= 0.0 or self.extent.y <= 0.0 or self.extent.z <= 0.0:
            raise ValueError("extent components must be positive")
        if self.speed <= 0.0:
            raise ValueError("speed must be positive")


@dataclass(frozen=True)
class TrajectorySample:
    """One ground-truth state: pose plus exact velocity, world acceleration and body rates."""

    t: float
    pose: Pose
    velocity: Vec3
    accel_world: Vec3
    omega_body: Vec3


def scene_preset(name: str) -> tuple[Scene, TrajectoryProfile]:
    """Scene geometry and default trajectory for one of the three regimes.

    Anchor layouts are deliberately a little asymmetric (jittered heights,
    off-grid corners) so frame construction from their covariance stays
    generic. Pair biases are not assigned here; see assign_pair_biases.
    """
    if name == "indoor":
        anchors = {
            0: Vec3(-2.6, -2.2, 2.05),
            1: Vec3(2.25, -2.3, 2.32),
            2: Vec3(2.35, 2.2, 2.18),
            3: Vec3(-2.2, 2.15, 2.45),
            4: Vec3(-2.45, 0.1, 0.32),
            5: Vec3(0.2, -2.4, 0.45),
            6: Vec3(2.55, 0.2, 0.28),
            7: Vec3(-0.1, 2.35, 0.55),
        }
        tags = {
            0: Vec3(0.15, 0.02, 0.03),
            1: Vec3(-0.08, 0.13, -0.02),
            2: Vec3(-0.09, -0.12, 0.06),
        }
        profile = TrajectoryProfile("lissajous_planar", Vec3(3.0, 3.0, 0.8), 60.0, 0.5)
    elif name == "outdoor":
        anchors = {
            0: Vec3(14.0, -1.8, 2.1),
            1: Vec3(26.5, -2.1, 2.6),
            2: Vec3(14.5, 2.0, 2.9),
            3: Vec3(26.0, 1.7, 2.3),
        }
        tags = _vehicle_tags()
        profile = TrajectoryProfile("corridor_3d", Vec3(40.0, 4.0, 1.5), 40.0, 1.0)
    elif name == "tunnel":
        length, width = 330.0, 60.0
        amp, k = width / 2.0, 2.0 * math.pi / length
        anchors = {}
        for i in range(36):
            s = (i + 0.5) * length / 36.0
            slope = amp * k * math.cos(k * s)
            nrm = math.hypot(1.0, slope)
            off = 3.5 if i % 2 == 0 else -3.5
            anchors[i] = Vec3(
                s - off * slope / nrm,
                amp * math.sin(k * s) + off / nrm,
                2.5,
            )
        tags = _vehicle_tags()
        profile = TrajectoryProfile("tunnel_curve", Vec3(length, width, 2.0), 110.0, 3.0)
    else:
        raise ValueError(f"unknown preset {name!r}; expected one of {_PRESETS}")
    return Scene(anchors=anchors, tag_extrinsics=tags), profile


def _vehicle_tags() -> dict[int, Vec3]:
    return {
        0: Vec3(0.16, 0.0, 0.02),
        1: Vec3(-0.15, 0.02, 0.0),
        2: Vec3(0.0, 0.15, 0.05),
        3: Vec3(-0.01, -0.16, -0.04),
    }


def _euler_rate_to_body(euler: np.ndarray, rates: np.ndarray) -> np.ndarray:
    """Body angular velocity from intrinsic Z-Y-X angles and their time derivatives."""
    roll, pitch = euler[:, 0], euler[:, 1]
    rd, pd, yd = rates[:, 0], rates[:, 1], rates[:, 2]
    wx = rd - yd * np.sin(pitch)
    wy = pd * np.cos(roll) + yd * np.cos(pitch) * np.sin(roll)
    wz = -pd * np.sin(roll) + yd * np.cos(pitch) * np.cos(roll)
    return np.stack([wx, wy, wz], axis=1)


def _eval_lissajous(p: TrajectoryProfile, t: np.ndarray):
    ax, ay = p.extent.x / 2.0, p.extent.y / 2.0
    w = 2.0 * p.speed / (ax + ay)
    pos = np.stack([ax * np.cos(w * t), ay * np.sin(w * t), np.full_like(t, p.extent.z)], axis=1)
    vel = np.stack([-ax * w * np.sin(w * t), ay * w * np.cos(w * t), np.zeros_like(t)], axis=1)
    acc = np.stack([-ax * w * w * np.cos(w * t), -ay * w * w * np.sin(w * t), np.zeros_like(t)], axis=1)
    euler = np.stack(
        [
            0.08 * np.sin(1.3 * w * t),
            0.06 * np.sin(1.1 * w * t + 0.5),
            0.7 * np.sin(0.6 * w * t + 0.3),
        ],
        axis=1,
    )
    rates = np.stack(
        [
            0.08 * 1.3 * w * np.cos(1.3 * w * t),
            0.06 * 1.1 * w * np.cos(1.1 * w * t + 0.5),
            0.7 * 0.6 * w * np.cos(0.6 * w * t + 0.3),
        ],
        axis=1,
    )
    return pos, vel, acc, euler, rates


def _eval_corridor(p: TrajectoryProfile, t: np.ndarray):
    length, width, total = p.extent.x, p.extent.y, p.duration
    amp_y = max(0.0, width / 2.0 - 0.5)
    amp_z = min(0.4, amp_y)
    wy, wz = 2.0 * math.pi * 3.0 / total, 2.0 * math.pi * 2.0 / total
    pos = np.stack(
        [
            length * t / total,
            amp_y * np.sin(wy * t + 0.4),
            p.extent.z + amp_z * np.sin(wz * t + 1.1),
        ],
        axis=1,
    )
    vel = np.stack(
        [
            np.full_like(t, length / total),
            amp_y * wy * np.cos(wy * t + 0.4),
            amp_z * wz * np.cos(wz * t + 1.1),
        ],
        axis=1,
    )
    acc = np.stack(
        [
            np.zeros_like(t),
            -amp_y * wy * wy * np.sin(wy * t + 0.4),
            -amp_z * wz * wz * np.sin(wz * t + 1.1),
        ],
        axis=1,
    )
    wr, wp, wyaw = 2.0 * math.pi * 1.5 / total, 2.0 * math.pi * 1.2 / total, wy
    euler = np.stack(
        [
            0.06 * np.sin(wr * t),
            0.05 * np.sin(wp * t + 0.3),
            0.2 * np.sin(wyaw * t + 1.97),
        ],
        axis=1,
    )
    rates = np.stack(
        [
            0.06 * wr * np.cos(wr * t),
            0.05 * wp * np.cos(wp * t + 0.3),
            0.2 * wyaw * np.cos(wyaw * t + 1.97),
        ],
        axis=1,
    )
    return pos, vel, acc, euler, rates


def _eval_tunnel(p: TrajectoryProfile, t: np.ndarray):
    length, amp = p.extent.x, p.extent.y / 2.0
    k, v = 2.0 * math.pi / length, p.speed
    s = v * t
    pos = np.stack([s, amp * np.sin(k * s), p.extent.z + 0.3 * np.sin(3.0 * k * s)], axis=1)
    vel = np.stack(
        [
            np.full_like(t, v),
            amp * k * v * np.cos(k * s),
            0.9 * k * v * np.cos(3.0 * k * s),
        ],
        axis=1,
    )
    acc = np.stack(
        [
            np.zeros_like(t),
            -amp * k * k * v * v * np.sin(k * s),
            -2.7 * k * k * v * v * np.sin(3.0 * k * s),
        ],
        axis=1,
    )
    # Heading follows the centerline tangent; u = dy/dx along the path.
    u = amp * k * np.cos(k * s)
    du = -amp * k * k * v * np.sin(k * s)
    yaw = np.arctan(u)
    yaw_rate = du / (1.0 + u * u)
    euler = np.stack(
        [0.05 * np.sin(2.0 * k * s + 0.7), 0.04 * np.sin(2.5 * k * s), yaw],
        axis=1,
    )
    rates = np.stack(
        [
            0.05 * 2.0 * k * v * np.cos(2.0 * k * s + 0.7),
            0.04 * 2.5 * k * v * np.cos(2.5 * k * s),
            yaw_rate,
        ],
        axis=1,
    )
    return pos, vel, acc, euler, rates


_EVALUATORS = {
    "lissajous_planar": _eval_lissajous,
    "corridor_3d": _eval_corridor,
    "tunnel_curve": _eval_tunnel,
}


def generate_trajectory(profile: TrajectoryProfile, dt: float) -> list[TrajectorySample]:
    """Sample the analytic path at spacing dt, from t=0 through the duration."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    n = int(math.floor(profile.duration / dt + 1e-9)) + 1
    t = np.arange(n, dtype=np.float64) * dt
    pos, vel, acc, euler, rates = _EVALUATORS[profile.kind](profile, t)
    omega = _euler_rate_to_body(euler, rates)
    out = []
    for i in range(n):
        rot = euler_to_rotation(EulerAngles(euler[i, 0], euler[i, 1], euler[i, 2]))
        out.append(
            TrajectorySample(
                t=float(t[i]),
                pose=Pose(rot, Vec3.from_array(pos[i])),
                velocity=Vec3.from_array(vel[i]),
                accel_world=Vec3.from_array(acc[i]),
                omega_body=Vec3.from_array(omega[i]),
            )
        )
    return out


def assign_pair_biases(scene: Scene, bias_range: float, seed: int) -> Scene:
    """Draw one constant bias per (tag, anchor) pair, uniform on [0, bias_range].

    The draw is tied to the given seed only, so every dataset simulated in
    the same scene shares the same biases. bias_range 0 leaves the scene
    without biases.
    """
    if bias_range < 0.0:
        raise ValueError("bias_range must be >= 0")
    if bias_range == 0.0:
        return scene.with_bias({})
    rng = child_rng(seed, "pair-bias")
    bias = {}
    for tag in scene.tag_ids():
        for anchor in scene.anchor_ids():
            bias[(tag, anchor)] = float(rng.uniform(0.0, bias_range))
    return scene.with_bias(bias)


def simulate_sensors(
    traj: list[TrajectorySample],
    scene: Scene,
    noise: NoiseModel,
    imu_rate: float,
    uwb_rate: float,
    max_range: float = math.inf,
) -> list[Record]:
    """Synthesize the merged IMU / range / ground-truth record stream.

    `traj` must be sampled at 1/imu_rate and imu_rate must be an integer
    multiple of uwb_rate. IMU readings invert the world-frame model (specific
    force in body axes includes gravity) and add white noise plus a constant
    run bias. Ranges appear at every ranging epoch from t = 1/uwb_rate on,
    gated on the true tag-anchor distance against max_range, then corrupted
    with the pair bias, Gaussian noise and exponential NLOS delays, and
    possibly dropped. Ground truth is recorded at every epoch including t=0.
    """
    if imu_rate <= 0.0 or uwb_rate <= 0.0:
        raise ValueError("rates must be positive")
    stride = round(imu_rate / uwb_rate)
    if stride < 1 or abs(imu_rate / uwb_rate - stride) > 1e-9:
        raise ValueError(f"imu_rate must be an integer multiple of uwb_rate, got {imu_rate}/{uwb_rate}")
    dt = traj[1].t - traj[0].t if len(traj) > 1 else 1.0 / imu_rate
    if abs(dt - 1.0 / imu_rate) > 1e-9:
        raise ValueError("trajectory sampling interval does not match imu_rate")

    g = scene.gravity.as_array()
    rng_imu = child_rng(noise.seed, "imu-noise")
    rng_bias = child_rng(noise.seed, "imu-bias")
    rng_gauss = child_rng(noise.seed, "uwb-gauss")
    rng_nlos = child_rng(noise.seed, "uwb-nlos")
    rng_drop = child_rng(noise.seed, "uwb-drop")
    accel_bias = rng_bias.normal(0.0, noise.imu_accel_bias, 3) if noise.imu_accel_bias > 0 else np.zeros(3)
    gyro_bias = rng_bias.normal(0.0, noise.imu_gyro_bias, 3) if noise.imu_gyro_bias > 0 else np.zeros(3)

    records: list[Record] = []
    for sample in traj:
        r = sample.pose.rot.matrix()
        a_body = r.T @ (sample.accel_world.as_array() + g) + accel_bias
        w_body = sample.omega_body.as_array() + gyro_bias
        if noise.imu_accel_sigma > 0:
            a_body = a_body + rng_imu.normal(0.0, noise.imu_accel_sigma, 3)
        if noise.imu_gyro_sigma > 0:
            w_body = w_body + rng_imu.normal(0.0, noise.imu_gyro_sigma, 3)
        records.append(ImuSample(sample.t, Vec3.from_array(a_body), Vec3.from_array(w_body)))

    tag_ids, anchor_ids = scene.tag_ids(), scene.anchor_ids()
    n_epochs = (len(traj) - 1) // stride
    for j in range(n_epochs + 1):
        sample = traj[j * stride]
        records.append(GroundTruthPose(sample.t, sample.pose))
        if j == 0:
            continue
        for tag in tag_ids:
            tag_w = sample.pose.rot.rotate(scene.tag_extrinsics[tag]) + sample.pose.trans
            for anchor in anchor_ids:
                true_dist = (tag_w - scene.anchors[anchor]).norm()
                if true_dist > max_range:
                    continue
                if noise.dropout_prob > 0.0 and rng_drop.random() < noise.dropout_prob:
                    continue
                d = true_dist + scene.pair_bias(tag, anchor)
                if noise.gaussian_sigma > 0.0:
                    d += rng_gauss.normal(0.0, noise.gaussian_sigma)
                if noise.nlos_prob > 0.0 and rng_nlos.random() < noise.nlos_prob:
                    d += rng_nlos.exponential(noise.nlos_extra)
                records.append(RangeMeasurement(sample.t, tag, anchor, max(d, 0.0)))
    records.sort(key=_record_order)
    return records


def _record_order(rec: Record) -> tuple:
    if isinstance(rec, ImuSample):
        return (rec.t, 0, 0, 0)
    if isinstance(rec, RangeMeasurement):
        return (rec.t, 1, rec.tag_id, rec.anchor_id)
    return (rec.t, 2, 0, 0)


def mask_anchors(
    records: list[Record],
    windows: list[tuple[float, float, float]],
    seed: int,
) -> list[Record]:
    """Silence a random subset of anchors inside each [t_start, t_end) window.

    Each window keeps round(keep_fraction * n) of the anchor ids it would
    otherwise contain (at least one), with the subset fixed for the whole
    window and drawn deterministically from the seed. Windows must not
    overlap. Records outside all windows pass through untouched.
    """
    spans = sorted(windows)
    for (s0, e0, _), (s1, _, _) in zip(spans, spans[1:]):
        if s1 < e0:
            raise ValueError("mask windows must be disjoint")
    keep_sets: list[tuple[float, float, set[int]]] = []
    for idx, (t_start, t_end, keep_fraction) in enumerate(spans):
        if not 0.0 < keep_fraction <= 1.0:
            raise ValueError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
        present = sorted(
            {
                r.anchor_id
                for r in records
                if isinstance(r, RangeMeasurement) and t_start <= r.t < t_end
            }
        )
        if not present:
            keep_sets.append((t_start, t_end, set()))
            continue
        n_keep = max(1, int(round(keep_fraction * len(present))))
        rng = child_rng(seed, f"mask:{idx}")
        kept = rng.choice(np.asarray(present, dtype=np.int64), size=n_keep, replace=False)
        keep_sets.append((t_start, t_end, set(int(a) for a in kept)))

    out: list[Record] = []
    for rec in records:
        if isinstance(rec, RangeMeasurement):
            dropped = False
            for t_start, t_end, kept in keep_sets:
                if t_start <= rec.t < t_end and rec.anchor_id not in kept:
                    dropped = True
                    break
            if dropped:
                continue
        out.append(rec)
    return out


def strapdown_integrate(
    samples: list[ImuSample],
    init_pose: Pose,
    init_velocity: Vec3,
    g: Vec3 = Vec3(0.0, 0.0, 9.8),
) -> list[tuple[float, Pose, Vec3]]:
    """Re-integrate an IMU stream from a known initial state (trapezoidal).

    Used to validate that simulated IMU data is consistent with the
    trajectory it came from; with noise-free samples the result tracks the
    true path to discretization error only.
    """
    if not samples:
        return []
    rot = init_pose.rot
    pos = init_pose.trans.as_array()
    vel = init_velocity.as_array()
    g_arr = g.as_array()
    out = [(samples[0].t, Pose(rot, Vec3.from_array(pos)), Vec3.from_array(vel))]
    for prev, cur in zip(samples, samples[1:]):
        dt = cur.t - prev.t
        if dt <= 0.0:
            raise ValueError("IMU timestamps must be strictly increasing")
        a_w0 = rot.matrix() @ prev.accel.as_array() - g_arr
        w_mid = 0.5 * (prev.gyro.as_array() + cur.gyro.as_array())
        angle = float(np.linalg.norm(w_mid)) * dt
        if angle > 0.0:
            axis = Vec3.from_array(w_mid / np.linalg.norm(w_mid))
            rot = rot.multiply(Rotation.from_axis_angle(axis, angle))
        a_w1 = rot.matrix() @ cur.accel.as_array() - g_arr
        new_vel = vel + 0.5 * (a_w0 + a_w1) * dt
        pos = pos + 0.5 * (vel + new_vel) * dt
        vel = new_vel
        out.append((cur.t, Pose(rot, Vec3.from_array(pos)), Vec3.from_array(vel)))
    return out


def preset_names() -> tuple[str, ...]:
    return _PRESETS


def profile_with(profile: TrajectoryProfile, speed: float | None = None, duration: float | None = None) -> TrajectoryProfile:
    """Profile variant at a different speed; corridor/tunnel durations rescale to cover the same track."""
    new_speed = profile.speed if speed is None else speed
    if duration is None:
        if profile.kind in ("corridor_3d", "tunnel_curve"):
            duration = profile.duration * profile.speed / new_speed
        else:
            duration = profile.duration
    return replace(profile, speed=new_speed, duration=duration)
