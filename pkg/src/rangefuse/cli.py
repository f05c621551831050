"""Command-line front end: simulate, solve-ls, train, eval, plot.

Every command is deterministic given its config and seeds; reruns overwrite
their outputs byte-identically. Failures exit nonzero with a one-line JSON
error object on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, build_config, canonical_json, load_config_file, save_config
from .nn.optim import load_checkpoint, save_checkpoint
from .odometry import (
    OdometryConfig,
    estimator_mode,
    load_trajectory_csv,
    run_odometry,
    save_diagnostics,
    save_trajectory_csv,
)
from .plots import plot_axis_series, plot_error_series, plot_trajectory_overlay
from .sensors import GroundTruthPose, RangeMeasurement, load_dataset, load_scene, save_dataset, save_scene
from .simulate import (
    NoiseModel,
    assign_pair_biases,
    generate_trajectory,
    mask_anchors,
    preset_names,
    profile_with,
    scene_preset,
    simulate_sensors,
)
from .training import LossConfig, TrainConfig, ape, challenge_eval, save_training_log, train

log = logging.getLogger("rangefuse")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="TOML or JSON config file")
    parser.add_argument("--seed", type=int, help="root seed for run randomness")
    parser.add_argument("--scene-seed", dest="scene_seed", type=int,
                        help="seed for scene-level randomness (pair biases)")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--mode", help="estimator mode(s), comma separated for eval")
    parser.add_argument("--preset", choices=list(preset_names()), help="scene preset")
    parser.add_argument("--max-range", dest="max_range", type=float, help="range gating distance [m]")
    parser.add_argument("--mask", action="append", metavar="START:END:KEEP",
                        help="anchor-missing window (repeatable)")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rangefuse",
                                     description="ranging/inertial odometry toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a deterministic scene + sensor dataset")
    _add_common(p_sim)
    p_sim.add_argument("--duration", type=float, help="trajectory duration override [s]")
    p_sim.add_argument("--speed", type=float, help="trajectory speed override [m/s]")
    p_sim.add_argument("--imu-rate", dest="imu_rate", type=float, help="IMU rate [Hz]")
    p_sim.add_argument("--uwb-rate", dest="uwb_rate", type=float, help="ranging epoch rate [Hz]")

    p_ls = sub.add_parser("solve-ls", help="run the least-squares estimator over a dataset")
    _add_common(p_ls)
    p_ls.add_argument("--dataset", required=True, help="dataset .jsonl file")
    p_ls.add_argument("--scene", required=True, help="scene .json file")

    p_train = sub.add_parser("train", help="train the learned estimator components")
    _add_common(p_train)
    p_train.add_argument("--dataset", required=True)
    p_train.add_argument("--scene", required=True)
    p_train.add_argument("--epochs", type=int, help="joint training passes")
    p_train.add_argument("--pretrain-epochs", dest="pretrain_epochs", type=int,
                         help="inertial-only pretraining passes")
    p_train.add_argument("--anchor-dropout", dest="anchor_dropout", type=float,
                         help="training-time anchor dropout probability")
    p_train.add_argument("--lr", type=float, help="joint learning rate")

    p_eval = sub.add_parser("eval", help="run estimators and report APE metrics + figures")
    _add_common(p_eval)
    p_eval.add_argument("--dataset", required=True)
    p_eval.add_argument("--scene", required=True)
    p_eval.add_argument("--checkpoint", help="trained parameters (.bin), required for graph modes")
    p_eval.add_argument("--challenge", choices=["envelope", "anchor_missing"],
                        help="additionally split APE by envelope or mask windows")

    p_plot = sub.add_parser("plot", help="render figures from trajectory CSV files")
    _add_common(p_plot)
    p_plot.add_argument("--traj", action="append", metavar="NAME=FILE", default=[],
                        help="labelled trajectory CSV (repeatable)")
    p_plot.add_argument("--gt", help="ground-truth trajectory CSV")
    p_plot.add_argument("--scene", help="scene .json file, for anchor markers")
    return parser


_CONFIG_FLAG_KEYS = (
    "preset", "mode", "seed", "scene_seed", "out", "max_range", "mask",
    "imu_rate", "uwb_rate", "duration", "speed",
)


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    file_values = load_config_file(args.config) if getattr(args, "config", None) else None
    flag_values = {}
    for key in _CONFIG_FLAG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            flag_values[key] = value
    train_flags = {}
    for key in ("epochs", "pretrain_epochs", "anchor_dropout", "lr"):
        value = getattr(args, key, None)
        if value is not None:
            train_flags[key] = value
    if train_flags:
        flag_values["train"] = train_flags
    return build_config(file_values, flag_values)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _odometry_config(cfg: RunConfig) -> OdometryConfig:
    return OdometryConfig(nominal_radius=cfg.radius, rebase_hysteresis=cfg.hysteresis)


def _sanitize(value):
    """NaN/inf -> None so metric JSON stays strictly parseable."""
    if isinstance(value, dict):
        return {k: _sanitize(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_sanitize(v) for v in value]
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    out = _out_dir(cfg)
    scene, profile = scene_preset(cfg.preset)
    profile = profile_with(profile, speed=cfg.speed, duration=cfg.duration)
    noise_values = cfg.noise_values()
    scene = assign_pair_biases(scene, noise_values["bias_range"], cfg.scene_seed)
    noise = NoiseModel(seed=cfg.seed, **noise_values)
    traj = generate_trajectory(profile, 1.0 / cfg.imu_rate)
    max_range = cfg.max_range if cfg.max_range is not None else math.inf
    records = simulate_sensors(traj, scene, noise, cfg.imu_rate, cfg.uwb_rate, max_range)
    if cfg.mask:
        records = mask_anchors(records, list(cfg.mask), cfg.seed)

    save_scene(out / "scene.json", scene)
    save_dataset(out / "dataset.jsonl", records)
    save_config(out / "config.json", cfg)
    epochs = sorted({r.t for r in records if isinstance(r, RangeMeasurement)})
    meta = {
        "preset": cfg.preset,
        "seed": cfg.seed,
        "scene_seed": cfg.scene_seed,
        "imu_rate": cfg.imu_rate,
        "uwb_rate": cfg.uwb_rate,
        "max_range": cfg.max_range,
        "mask_windows": [list(w) for w in cfg.mask],
        "duration": profile.duration,
        "speed": profile.speed,
        "n_records": len(records),
        "n_ranging_epochs": len(epochs),
        "n_anchors": len(scene.anchors),
        "n_tags": len(scene.tag_extrinsics),
        "noise": {k: noise_values[k] for k in sorted(noise_values)},
        "note": "synthetic noise/bias models are stand-ins for field radio behavior",
    }
    (out / "meta.json").write_text(canonical_json(meta) + "\n", encoding="utf-8")
    print(
        f"simulate: preset {cfg.preset!r}, {len(records)} records, "
        f"{len(epochs)} ranging epochs, {len(scene.anchors)} anchors, "
        f"{len(scene.tag_extrinsics)} tags -> {out}"
    )
    return 0


def cmd_solve_ls(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    out = _out_dir(cfg)
    records = load_dataset(args.dataset)
    scene = load_scene(args.scene)
    traj, diag = run_odometry(records, scene, "ls", None, _odometry_config(cfg))
    save_trajectory_csv(out / "trajectory_ls.csv", traj)
    save_diagnostics(out / "diagnostics_ls.jsonl", diag)
    gt = [(r.t, r.pose) for r in records if isinstance(r, GroundTruthPose)]
    if len(gt) > 1:
        result = ape(traj, gt, 0.5 / cfg.uwb_rate)
        print(f"solve-ls: {len(traj)} epochs, APE rmse_xy {result.rmse_xy:.4f} m, "
              f"rmse_xyz {result.rmse_xyz:.4f} m -> {out}")
    else:
        print(f"solve-ls: {len(traj)} epochs, no ground truth for APE -> {out}")
    return 0


def _train_config(cfg: RunConfig) -> TrainConfig:
    table = dict(cfg.train)
    loss_kwargs = {k: table.pop(k) for k in ("bptt_len", "teacher_forcing_end_epoch",
                                             "lambda_rel", "rotation_weight") if k in table}
    return TrainConfig(
        mode=cfg.mode,
        seed=cfg.seed,
        loss=LossConfig(**loss_kwargs),
        odometry=_odometry_config(cfg),
        **table,
    )


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    out = _out_dir(cfg)
    records = load_dataset(args.dataset)
    scene = load_scene(args.scene)
    result = train(records, scene, _train_config(cfg))
    save_checkpoint(result.store, out / "checkpoint.bin",
                    meta={"mode": cfg.mode, "seed": cfg.seed})
    save_training_log(out / "training_log.csv", result.log)
    gate = "passed" if result.gate_passed else "FAILED"
    print(f"train: mode {cfg.mode!r}, loss {result.first_loss:.6f} -> {result.final_loss:.6f}, "
          f"halving gate {gate} -> {out}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    out = _out_dir(cfg)
    records = load_dataset(args.dataset)
    scene = load_scene(args.scene)
    gt = [(r.t, r.pose) for r in records if isinstance(r, GroundTruthPose)]
    modes = [m.strip() for m in cfg.mode.split(",") if m.strip()]
    if not modes:
        raise ValueError("eval needs at least one mode")
    max_dt = 0.5 / cfg.uwb_rate
    odo = _odometry_config(cfg)

    store = None
    if any(estimator_mode(m).use_graph for m in modes):
        if not args.checkpoint:
            raise ValueError("graph modes need --checkpoint")
        store, _meta = load_checkpoint(args.checkpoint)

    metrics: dict = {}
    trajectories: dict = {}
    error_series: dict = {}
    rows = []
    for mode in modes:
        mode_store = store if estimator_mode(mode).use_graph else None
        traj, diag = run_odometry(records, scene, mode, mode_store, odo)
        save_trajectory_csv(out / f"trajectory_{mode}.csv", traj)
        save_diagnostics(out / f"diagnostics_{mode}.jsonl", diag)
        trajectories[mode] = traj
        entry: dict = {}
        if len(gt) > 1:
            result = ape(traj, gt, max_dt)
            entry.update(result.as_dict())
            error_series[mode] = (np.array(result.times), np.array(result.errors_xy))
            rows.append((mode, result.rmse_xy, result.rmse_xyz, result.n_matched))
            if args.challenge:
                windows = [(s, e) for s, e, _ in cfg.mask] if cfg.mask else None
                entry[args.challenge] = challenge_eval(args.challenge, traj, gt, scene,
                                                       windows, max_dt)
        metrics[mode] = entry

    (out / "metrics.json").write_text(canonical_json(_sanitize(metrics)) + "\n", encoding="utf-8")
    plot_trajectory_overlay(out / "trajectory_overlay.svg", trajectories,
                            gt if len(gt) > 1 else None, scene)
    plot_axis_series(out / "axis_series.svg", trajectories, gt if len(gt) > 1 else None)
    if error_series:
        plot_error_series(out / "error_series.svg", error_series)

    if rows:
        print(f"{'mode':<20} {'rmse_xy':>9} {'rmse_xyz':>9} {'matched':>8}")
        for mode, rmse_xy, rmse_xyz, n in rows:
            print(f"{mode:<20} {rmse_xy:>9.4f} {rmse_xyz:>9.4f} {n:>8d}")
    else:
        print(f"eval: no ground truth in dataset; wrote trajectories only -> {out}")
    return 0


def cmd_plot(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    out = _out_dir(cfg)
    if not args.traj:
        raise ValueError("plot needs at least one --traj NAME=FILE")
    trajectories = {}
    for spec in args.traj:
        name, sep, path = spec.partition("=")
        if not sep or not name or not path:
            raise ValueError(f"--traj must be NAME=FILE, got {spec!r}")
        trajectories[name] = load_trajectory_csv(path)
    gt = load_trajectory_csv(args.gt) if args.gt else None
    scene = load_scene(args.scene) if args.scene else None

    plot_trajectory_overlay(out / "trajectory_overlay.svg", trajectories, gt, scene)
    plot_axis_series(out / "axis_series.svg", trajectories, gt)
    made = ["trajectory_overlay.svg", "axis_series.svg"]
    if gt and len(gt) > 1:
        series = {}
        for name, traj in trajectories.items():
            result = ape(traj, gt, 0.5 / cfg.uwb_rate)
            series[name] = (np.array(result.times), np.array(result.errors_xy))
        plot_error_series(out / "error_series.svg", series)
        made.append("error_series.svg")
    print(f"plot: wrote {', '.join(made)} -> {out}")
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "solve-ls": cmd_solve_ls,
    "train": cmd_train,
    "eval": cmd_eval,
    "plot": cmd_plot,
}


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("RANGEFUSE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - single reporting point for the CLI
        log.debug("command failed", exc_info=True)
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
