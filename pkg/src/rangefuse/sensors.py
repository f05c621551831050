"""UWB ranging and IMU forward models plus the on-disk record types.

Dataset files are JSON-lines, one record per line (UTF-8, LF). Three record
kinds exist, distinguished by the "type" field:

    {"type":"imu","t":0.005,"a":[ax,ay,az],"w":[wx,wy,wz]}
    {"type":"range","t":1.0,"tag":0,"anchor":3,"d":5.0}
    {"type":"gt","t":1.0,"p":[x,y,z],"q":[qw,qx,qy,qz]}

Scene files are a single JSON object:

    {"anchors":[{"id":0,"p":[x,y,z]},...],
     "tags":[{"id":0,"p":[x,y,z]},...],
     "bias":[{"tag":0,"anchor":3,"b":0.18},...]}

Floats are serialized with shortest round-trip repr, so parse(serialize(x))
reproduces x exactly and a normalized file is byte-stable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np

from .geometry import Pose, Rotation, Vec3, transform_point

GRAVITY = Vec3(0.0, 0.0, 9.8)

# Merge order for records sharing a timestamp: imu first, then range, then gt,
# so an epoch's IMU window (t_prev, t] includes the sample at its own stamp.
_TYPE_ORDER = {"imu": 0, "range": 1, "gt": 2}


class RecordParseError(ValueError):
    """Raised for malformed dataset lines; carries the 1-based line number when known."""

    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


@dataclass(frozen=True)
class ImuSample:
    """One IMU reading in the body frame: specific force (m/s^2) and angular rate (rad/s)."""

    t: float
    accel: Vec3
    gyro: Vec3


@dataclass(frozen=True)
class RangeMeasurement:
    """One tag-anchor distance observation in meters."""

    t: float
    tag_id: int
    anchor_id: int
    d: float

    def __post_init__(self) -> None:
        if self.d < 0.0 or not math.isfinite(self.d):
            raise ValueError(f"range must be finite and >= 0, got {self.d}")


@dataclass(frozen=True)
class GroundTruthPose:
    """Reference pose record used for supervision and evaluation."""

    t: float
    pose: Pose


Record = Union[ImuSample, RangeMeasurement, GroundTruthPose]


@dataclass
class ImuWindow:
    """IMU samples between consecutive ranging epochs, already rotated to the world frame.

    `accel_w` and `gyro_w` are (n, 3); they may be numpy arrays or autodiff
    tensors, so the window can sit on a gradient tape during training.
    """

    t: np.ndarray
    accel_w: object
    gyro_w: object

    def __len__(self) -> int:
        return len(self.t)

    @staticmethod
    def from_body(
        t: np.ndarray,
        accel_b: np.ndarray,
        gyro_b: np.ndarray,
        prev_rot: Rotation,
        g: Vec3 = GRAVITY,
    ) -> "ImuWindow":
        """Rotate body-frame samples into the world frame with the previous rotation.

        Applies a_w = R a_b - g and w_w = R w_b per sample.
        """
        if len(t) < 1:
            raise ValueError("IMU window must contain at least one sample")
        r = prev_rot.matrix()
        a_w = accel_b @ r.T - g.as_array()
        w_w = gyro_b @ r.T
        return ImuWindow(np.asarray(t, dtype=np.float64), a_w, w_w)


@dataclass(frozen=True)
class Scene:
    """Anchor layout, tag extrinsics and per-pair range biases.

    Anchors live in the world frame, tag extrinsics in the body frame. The
    bias map defaults to zero for missing (tag, anchor) pairs; estimators do
    not read it, only the simulator's forward model does.
    """

    anchors: dict[int, Vec3]
    tag_extrinsics: dict[int, Vec3]
    bias: dict[tuple[int, int], float] = field(default_factory=dict)
    gravity: Vec3 = GRAVITY

    def __post_init__(self) -> None:
        if not self.anchors:
            raise ValueError("scene needs at least one anchor")
        if not self.tag_extrinsics:
            raise ValueError("scene needs at least one tag")

    def pair_bias(self, tag_id: int, anchor_id: int) -> float:
        return self.bias.get((tag_id, anchor_id), 0.0)

    def with_bias(self, bias: dict[tuple[int, int], float]) -> "Scene":
        return replace(self, bias=dict(bias))

    def anchor_ids(self) -> list[int]:
        return sorted(self.anchors)

    def tag_ids(self) -> list[int]:
        return sorted(self.tag_extrinsics)


def true_range(pose: Pose, scene: Scene, tag_id: int, anchor_id: int) -> float:
    """Noise-free range: tag-anchor distance plus the pair's constant bias."""
    if tag_id not in scene.tag_extrinsics:
        raise KeyError(f"unknown tag id {tag_id}")
    if anchor_id not in scene.anchors:
        raise KeyError(f"unknown anchor id {anchor_id}")
    tag_w = transform_point(pose, scene.tag_extrinsics[tag_id])
    return (tag_w - scene.anchors[anchor_id]).norm() + scene.pair_bias(tag_id, anchor_id)


def imu_to_world(prev_rot: Rotation, a_b: Vec3, w_b: Vec3, g: Vec3 = GRAVITY) -> tuple[Vec3, Vec3]:
    """Rotate one IMU sample into the world frame and remove gravity.

    Returns (prev_rot * a_b - g, prev_rot * w_b).
    """
    return prev_rot.rotate(a_b) - g, prev_rot.rotate(w_b)


def _vec3_list(v: Vec3) -> list[float]:
    return [v.x, v.y, v.z]


def serialize_record(rec: Record) -> str:
    """One canonical JSON line (no trailing newline) for a record."""
    if isinstance(rec, ImuSample):
        obj = {"type": "imu", "t": rec.t, "a": _vec3_list(rec.accel), "w": _vec3_list(rec.gyro)}
    elif isinstance(rec, RangeMeasurement):
        obj = {"type": "range", "t": rec.t, "tag": rec.tag_id, "anchor": rec.anchor_id, "d": rec.d}
    elif isinstance(rec, GroundTruthPose):
        q = rec.pose.rot
        obj = {
            "type": "gt",
            "t": rec.t,
            "p": _vec3_list(rec.pose.trans),
            "q": [q.w, q.x, q.y, q.z],
        }
    else:
        raise TypeError(f"not a record: {type(rec).__name__}")
    return json.dumps(obj, separators=(",", ":"))


def _require(obj: dict, key: str, line_no: int | None):
    if key not in obj:
        raise RecordParseError(f"missing field {key!r}", line_no)
    return obj[key]


def _as_vec3(v, what: str, line_no: int | None) -> Vec3:
    if not isinstance(v, list) or len(v) != 3:
        raise RecordParseError(f"{what} must be a 3-element array", line_no)
    try:
        return Vec3(float(v[0]), float(v[1]), float(v[2]))
    except (TypeError, ValueError) as exc:
        raise RecordParseError(f"bad {what}: {exc}", line_no) from exc


def parse_record(line: str, line_no: int | None = None) -> Record:
    """Parse one dataset line; raises RecordParseError with the line number."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise RecordParseError(f"invalid JSON: {exc.msg}", line_no) from exc
    if not isinstance(obj, dict):
        raise RecordParseError("record must be a JSON object", line_no)
    kind = _require(obj, "type", line_no)
    t = float(_require(obj, "t", line_no))
    if kind == "imu":
        return ImuSample(
            t,
            _as_vec3(_require(obj, "a", line_no), "a", line_no),
            _as_vec3(_require(obj, "w", line_no), "w", line_no),
        )
    if kind == "range":
        try:
            return RangeMeasurement(
                t,
                int(_require(obj, "tag", line_no)),
                int(_require(obj, "anchor", line_no)),
                float(_require(obj, "d", line_no)),
            )
        except ValueError as exc:
            raise RecordParseError(str(exc), line_no) from exc
    if kind == "gt":
        p = _as_vec3(_require(obj, "p", line_no), "p", line_no)
        q = _require(obj, "q", line_no)
        if not isinstance(q, list) or len(q) != 4:
            raise RecordParseError("q must be a 4-element array [w,x,y,z]", line_no)
        rot = Rotation.from_quat(float(q[0]), float(q[1]), float(q[2]), float(q[3]))
        return GroundTruthPose(t, Pose(rot, p))
    raise RecordParseError(f"unknown record type {kind!r}", line_no)


def record_sort_key(rec: Record) -> tuple[float, int, int, int]:
    if isinstance(rec, ImuSample):
        return (rec.t, _TYPE_ORDER["imu"], 0, 0)
    if isinstance(rec, RangeMeasurement):
        return (rec.t, _TYPE_ORDER["range"], rec.tag_id, rec.anchor_id)
    return (rec.t, _TYPE_ORDER["gt"], 0, 0)


def sort_records(records: list[Record]) -> list[Record]:
    """Sort by timestamp; imu before range before gt at equal t, ranges by (tag, anchor)."""
    return sorted(records, key=record_sort_key)


def save_dataset(path, records: list[Record]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for rec in records:
            f.write(serialize_record(rec))
            f.write("\n")


def load_dataset(path) -> list[Record]:
    records: list[Record] = []
    with open(path, "r", encoding="utf-8") as f:
        for i, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            records.append(parse_record(line, line_no=i))
    return records


def save_scene(path, scene: Scene) -> None:
    obj = {
        "anchors": [{"id": i, "p": _vec3_list(scene.anchors[i])} for i in scene.anchor_ids()],
        "tags": [{"id": i, "p": _vec3_list(scene.tag_extrinsics[i])} for i in scene.tag_ids()],
        "bias": [
            {"tag": t, "anchor": a, "b": scene.bias[(t, a)]} for (t, a) in sorted(scene.bias)
        ],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(obj, f, separators=(",", ":"))
        f.write("\n")


def load_scene(path) -> Scene:
    with open(path, "r", encoding="utf-8") as f:
        obj = json.load(f)
    anchors = {int(a["id"]): Vec3.from_array(a["p"]) for a in obj["anchors"]}
    tags = {int(t["id"]): Vec3.from_array(t["p"]) for t in obj["tags"]}
    bias = {(int(b["tag"]), int(b["anchor"])): float(b["b"]) for b in obj.get("bias", [])}
    return Scene(anchors=anchors, tag_extrinsics=tags, bias=bias)
