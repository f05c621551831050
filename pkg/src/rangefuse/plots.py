"""Figure rendering: trajectory overlay, per-axis series, error-over-time.

All figures are written as SVG with a fixed hash salt and no embedded
timestamp, so reruns produce byte-identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .geometry import Pose
from .leastsq import PoseVector6
from .sensors import Scene

_AXIS_LABELS = ("x [m]", "y [m]", "z [m]", "roll [rad]", "pitch [rad]", "yaw [rad]")
_MODE_COLORS = {
    "ls": "tab:blue",
    "graph": "tab:orange",
    "ls_graph": "tab:green",
    "inertial_graph": "tab:purple",
    "inertial_ls_graph": "tab:red",
}


def _save(fig, path) -> None:
    fig.savefig(Path(path), format="svg", metadata={"Date": None})
    plt.close(fig)


def _style(name: str, i: int) -> dict:
    color = _MODE_COLORS.get(name, f"C{i % 10}")
    return {"color": color, "linewidth": 1.2}


def _as_xy(trajectory: list[tuple[float, Pose]]) -> np.ndarray:
    return np.array([[p.trans.x, p.trans.y] for _, p in trajectory])


def plot_trajectory_overlay(
    path,
    trajectories: dict[str, list[tuple[float, Pose]]],
    ground_truth: list[tuple[float, Pose]] | None = None,
    scene: Scene | None = None,
) -> None:
    """Top-down overlay of estimated paths, optional ground truth, and anchors."""
    with plt.rc_context({"svg.hashsalt": "rangefuse"}):
        fig, ax = plt.subplots(figsize=(7.0, 6.0))
        if ground_truth:
            xy = _as_xy(ground_truth)
            ax.plot(xy[:, 0], xy[:, 1], color="0.4", linestyle="--", linewidth=1.0, label="ground truth")
        for i, (name, traj) in enumerate(sorted(trajectories.items())):
            xy = _as_xy(traj)
            ax.plot(xy[:, 0], xy[:, 1], label=name, **_style(name, i))
        if scene is not None:
            for anchor_id in scene.anchor_ids():
                p = scene.anchors[anchor_id]
                ax.plot(p.x, p.y, marker="^", color="black", markersize=6, linestyle="none")
                ax.annotate(str(anchor_id), (p.x, p.y), textcoords="offset points", xytext=(4, 4), fontsize=7)
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        ax.set_aspect("equal", adjustable="datalim")
        ax.grid(True, linewidth=0.3, alpha=0.5)
        ax.legend(loc="best", fontsize=8)
        fig.tight_layout()
        _save(fig, path)


def plot_axis_series(
    path,
    trajectories: dict[str, list[tuple[float, Pose]]],
    ground_truth: list[tuple[float, Pose]] | None = None,
) -> None:
    """Six stacked panels: each pose component against time."""
    with plt.rc_context({"svg.hashsalt": "rangefuse"}):
        fig, axes = plt.subplots(6, 1, figsize=(7.0, 9.0), sharex=True)
        series = []
        if ground_truth:
            series.append(("ground truth", ground_truth, {"color": "0.4", "linestyle": "--", "linewidth": 1.0}))
        for i, (name, traj) in enumerate(sorted(trajectories.items())):
            series.append((name, traj, _style(name, i)))
        for label, traj, style in series:
            t = np.array([tt for tt, _ in traj])
            vals = np.array([PoseVector6.from_pose(p).as_array() for _, p in traj])
            for k, ax in enumerate(axes):
                ax.plot(t, vals[:, k], label=label, **style)
        for k, ax in enumerate(axes):
            ax.set_ylabel(_AXIS_LABELS[k], fontsize=8)
            ax.grid(True, linewidth=0.3, alpha=0.5)
        axes[-1].set_xlabel("t [s]")
        axes[0].legend(loc="best", fontsize=7)
        fig.tight_layout()
        _save(fig, path)


def plot_error_series(
    path,
    error_series: dict[str, tuple[np.ndarray, np.ndarray]],
) -> None:
    """Horizontal-position error against time, one curve per estimator."""
    with plt.rc_context({"svg.hashsalt": "rangefuse"}):
        fig, ax = plt.subplots(figsize=(7.0, 3.5))
        for i, (name, (t, err)) in enumerate(sorted(error_series.items())):
            ax.plot(np.asarray(t), np.asarray(err), label=name, **_style(name, i))
        ax.set_xlabel("t [s]")
        ax.set_ylabel("xy error [m]")
        ax.grid(True, linewidth=0.3, alpha=0.5)
        ax.legend(loc="best", fontsize=8)
        fig.tight_layout()
        _save(fig, path)
