"""Run configuration: defaults, TOML/JSON files, and flag overrides.

Precedence is flag > file > default. A parsed config re-serializes to one
canonical JSON form regardless of which source each value came from.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

NOISE_KEYS = (
    "gaussian_sigma",
    "bias_range",
    "nlos_prob",
    "nlos_extra",
    "dropout_prob",
    "imu_accel_sigma",
    "imu_gyro_sigma",
    "imu_accel_bias",
    "imu_gyro_bias",
)

TRAIN_KEYS = (
    "epochs",
    "pretrain_epochs",
    "lr",
    "pretrain_lr",
    "anchor_dropout",
    "grad_clip",
    "bptt_len",
    "teacher_forcing_end_epoch",
    "lambda_rel",
    "rotation_weight",
)

_INT_TRAIN_KEYS = {"epochs", "pretrain_epochs", "bptt_len", "teacher_forcing_end_epoch"}

# Measurement noise each preset was designed around; config values override per key.
PRESET_NOISE: dict[str, dict[str, float]] = {
    "indoor": {
        "gaussian_sigma": 0.05, "bias_range": 0.36, "nlos_prob": 0.05, "nlos_extra": 0.3,
        "dropout_prob": 0.02, "imu_accel_sigma": 0.02, "imu_gyro_sigma": 0.002,
        "imu_accel_bias": 0.005, "imu_gyro_bias": 0.0005,
    },
    "outdoor": {
        "gaussian_sigma": 0.08, "bias_range": 0.2, "nlos_prob": 0.05, "nlos_extra": 0.5,
        "dropout_prob": 0.05, "imu_accel_sigma": 0.03, "imu_gyro_sigma": 0.003,
        "imu_accel_bias": 0.008, "imu_gyro_bias": 0.0008,
    },
    "tunnel": {
        "gaussian_sigma": 0.08, "bias_range": 0.25, "nlos_prob": 0.1, "nlos_extra": 0.6,
        "dropout_prob": 0.05, "imu_accel_sigma": 0.03, "imu_gyro_sigma": 0.003,
        "imu_accel_bias": 0.008, "imu_gyro_bias": 0.0008,
    },
}


@dataclass(frozen=True)
class RunConfig:
    preset: str = "indoor"
    mode: str = "inertial_ls_graph"
    seed: int = 0
    scene_seed: int = 0
    out: str = "runs/latest"
    max_range: float | None = None
    mask: tuple[tuple[float, float, float], ...] = ()
    imu_rate: float = 200.0
    uwb_rate: float = 10.0
    duration: float | None = None
    speed: float | None = None
    radius: float = 40.0
    hysteresis: float = 1.0
    noise: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for key in self.noise:
            if key not in NOISE_KEYS:
                raise ValueError(f"config.noise: unknown field {key!r}; expected one of {NOISE_KEYS}")
        for key in self.train:
            if key not in TRAIN_KEYS:
                raise ValueError(f"config.train: unknown field {key!r}; expected one of {TRAIN_KEYS}")
        for start, end, keep in self.mask:
            if not end > start:
                raise ValueError(f"config.mask: window end must exceed start, got {start}:{end}")
            if not 0.0 < keep <= 1.0:
                raise ValueError(f"config.mask: keep fraction must be in (0, 1], got {keep}")

    def noise_values(self) -> dict[str, float]:
        """Preset noise defaults with config overrides applied."""
        base = dict(PRESET_NOISE.get(self.preset, PRESET_NOISE["indoor"]))
        base.update(self.noise)
        return base

    def to_dict(self) -> dict:
        return {
            "preset": self.preset,
            "mode": self.mode,
            "seed": self.seed,
            "scene_seed": self.scene_seed,
            "out": self.out,
            "max_range": self.max_range,
            "mask": [list(w) for w in self.mask],
            "imu_rate": self.imu_rate,
            "uwb_rate": self.uwb_rate,
            "duration": self.duration,
            "speed": self.speed,
            "radius": self.radius,
            "hysteresis": self.hysteresis,
            "noise": {k: self.noise[k] for k in sorted(self.noise)},
            "train": {k: self.train[k] for k in sorted(self.train)},
        }


def canonical_json(value) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"), allow_nan=True)


def save_config(path, cfg: RunConfig) -> None:
    Path(path).write_text(canonical_json(cfg.to_dict()) + "\n", encoding="utf-8")


def _coerce_mask(raw) -> tuple[tuple[float, float, float], ...]:
    windows = []
    for entry in raw:
        if isinstance(entry, str):
            parts = entry.split(":")
            if len(parts) != 3:
                raise ValueError(f"mask window must be START:END:KEEP, got {entry!r}")
            entry = parts
        if len(entry) != 3:
            raise ValueError(f"mask window must have 3 values, got {entry!r}")
        windows.append((float(entry[0]), float(entry[1]), float(entry[2])))
    return tuple(windows)


def load_config_file(path) -> dict:
    """Read a TOML or JSON config file into a plain dict of raw values."""
    p = Path(path)
    text = p.read_bytes()
    if p.suffix == ".toml":
        try:
            return tomllib.loads(text.decode("utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ValueError(f"{path}: invalid TOML: {exc}") from None
    if p.suffix == ".json":
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: invalid JSON: {exc}") from None
    raise ValueError(f"{path}: config must be a .toml or .json file")


_FIELD_TYPES = {f.name: f for f in fields(RunConfig)}


def build_config(file_values: dict | None = None, flag_values: dict | None = None) -> RunConfig:
    """Merge default < file < flags into a validated RunConfig."""
    merged: dict = {}
    for source_name, source in (("config file", file_values), ("flag", flag_values)):
        if not source:
            continue
        for key, value in source.items():
            if value is None:
                continue
            if key not in _FIELD_TYPES:
                raise ValueError(f"{source_name}: unknown field {key!r}")
            if key == "mask":
                merged["mask"] = _coerce_mask(value)
            elif key in ("noise", "train"):
                if not isinstance(value, dict):
                    raise ValueError(f"{source_name}: {key} must be a table/object")
                section = dict(merged.get(key, {}))
                for k, v in value.items():
                    if key == "train" and k in _INT_TRAIN_KEYS:
                        section[k] = int(v)
                    else:
                        section[k] = float(v)
                merged[key] = section
            elif key in ("seed", "scene_seed"):
                merged[key] = int(value)
            elif key in ("preset", "mode", "out"):
                merged[key] = str(value)
            else:
                merged[key] = float(value)
    return RunConfig(**merged)
