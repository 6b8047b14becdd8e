"""Figures written next to CSV outputs. Uses the non-interactive Agg backend."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_loss_curve(losses, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    epochs = np.arange(1, len(losses) + 1)
    ax.plot(epochs, losses, lw=1.5)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean DSM loss")
    ax.set_yscale("log")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_benchmark(summaries: list[dict], path) -> Path:
    """Joint success and generation time against sample count, one line per method."""
    fig, (ax_s, ax_t) = plt.subplots(1, 2, figsize=(9, 3.4))
    for method, marker in (("two-stage", "o"), ("guided", "s")):
        rows = sorted((s for s in summaries if s["method"] == method), key=lambda s: s["n_samples"])
        if not rows:
            continue
        n = [r["n_samples"] for r in rows]
        ax_s.plot(n, [r["success_rate"] for r in rows], marker=marker, label=method)
        ax_t.errorbar(n, [r["time_mean_s"] for r in rows], yerr=[r["time_std_s"] for r in rows],
                      marker=marker, capsize=3, label=method)
    for ax in (ax_s, ax_t):
        ax.set_xscale("log")
        ax.set_xlabel("samples per attempt")
        ax.grid(alpha=0.3)
        ax.legend()
    ax_s.set_ylabel("joint success (%)")
    ax_s.set_ylim(0, 100)
    ax_t.set_ylabel("generation time (s)")
    ax_t.set_yscale("log")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_grasps(cloud_points, gripper_points_list, path, colors=None) -> Path:
    """3-D scatter of a cloud with gripper control points drawn as polylines."""
    fig = plt.figure(figsize=(5, 5))
    ax = fig.add_subplot(projection="3d")
    pts = np.asarray(cloud_points)
    ax.scatter(pts[:, 0], pts[:, 1], pts[:, 2], s=2, c="0.6")
    for i, xg in enumerate(gripper_points_list):
        # default role order: wrist, base_left, base_right, tip_left, tip_right, center
        xg = np.asarray(xg)
        c = None if colors is None else colors[i]
        fork = xg[[3, 1, 2, 4]]
        line = ax.plot(fork[:, 0], fork[:, 1], fork[:, 2], lw=1, color=c)[0]
        stem = np.stack([xg[[1, 2]].mean(axis=0), xg[0]])
        ax.plot(stem[:, 0], stem[:, 1], stem[:, 2], lw=1, color=line.get_color())
    ax.set_box_aspect((1, 1, 1))
    lim = 1.3
    ax.set_xlim(-lim, lim)
    ax.set_ylim(-lim, lim)
    ax.set_zlim(-lim, lim)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
