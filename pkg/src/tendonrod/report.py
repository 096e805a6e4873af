"""Figure rendering for the report paths: saved PNGs next to the CSV outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_COLORS = {"truth": "k", "baseline": "tab:orange", "hybrid": "tab:blue"}


def _style(ax, xlabel, ylabel, title=None):
    ax.grid(True, alpha=0.3)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)


def save_tip_paths(path, labeled_trajectories, title=None) -> None:
    """Tip x-y loops and tip x over time for named trajectories."""
    fig, (ax_xy, ax_xt) = plt.subplots(1, 2, figsize=(10, 4))
    for label, traj in labeled_trajectories.items():
        tips = traj.tip_positions()
        color = _COLORS.get(label)
        ax_xy.plot(tips[:, 0], tips[:, 1], label=label, color=color)
        ax_xt.plot(traj.times, tips[:, 0], label=label, color=color)
    _style(ax_xy, "tip x (m)", "tip y (m)", title)
    ax_xy.axis("equal")
    _style(ax_xt, "time (s)", "tip x (m)")
    ax_xy.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_controls(path, schedule, title=None) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    t = schedule.times()
    for i in range(schedule.tendon_count):
        ax.plot(t, schedule.tensions[:, i], label=f"tendon {i + 1}")
    _style(ax, "time (s)", "tension (N)", title or f"{schedule.kind} controls")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_loss_curves(path, histories, title=None) -> None:
    """Training loss vs epoch, one curve per seed, log scale when possible."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    log_ok = any(np.any(np.asarray(h) > 0.0) for h in histories.values())
    plot = ax.semilogy if log_ok else ax.plot
    for label, hist in histories.items():
        plot(np.arange(len(hist)), hist, label=str(label))
    _style(ax, "epoch", "loss", title or "training loss")
    if len(histories) > 1:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_tip_error(path, times, per_step_error, title=None) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(times[: len(per_step_error)], per_step_error, color="tab:red")
    _style(ax, "time (s)", "tip error (m)", title or "per-step tip error")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_rod_snapshots(path, traj, count: int = 8, title=None) -> None:
    """Rod centerline (x-z plane) at evenly spaced times."""
    fig, ax = plt.subplots(figsize=(5, 5))
    idx = np.linspace(0, traj.steps, count, dtype=int)
    cmap = plt.get_cmap("viridis")
    for rank, i in enumerate(idx):
        p = traj.positions()[i]
        ax.plot(p[:, 0], p[:, 2], color=cmap(rank / max(1, count - 1)),
                label=f"t={traj.times[i]:.2f}s" if count <= 8 else None)
    _style(ax, "x (m)", "z (m)", title or "rod shape over time")
    ax.axis("equal")
    if count <= 8:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
