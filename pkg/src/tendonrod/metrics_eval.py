"""Trajectory comparison metrics: tip-position DTW and pose MSE."""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .rod_model import SL_H, SL_P, quat_to_rot


@dataclass
class MetricReport:
    tip_dtw: float
    pose_mse: float                 # reported x1e3 in tables
    per_step_tip_error: np.ndarray  # Euclidean tip distance per time index


def dtw_tip(a: np.ndarray, b: np.ndarray) -> float:
    """Dynamic time warping distance between two tip-position sequences.

    Classic dynamic program with Euclidean local cost and match/insert/delete
    steps; returns the unnormalized cumulative cost of the optimal warp path.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or b.ndim != 2 or len(a) == 0 or len(b) == 0:
        raise ValueError("dtw_tip needs two non-empty (T, d) sequences")

    n, m = len(a), len(b)
    # local cost matrix, vectorized over b
    diff = a[:, None, :] - b[None, :, :]
    cost = np.sqrt(np.sum(diff * diff, axis=2))

    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        row = acc[i]
        prev = acc[i - 1]
        ci = cost[i - 1]
        for j in range(1, m + 1):
            row[j] = ci[j - 1] + min(prev[j], row[j - 1], prev[j - 1])
    return float(acc[n, m])


def rot_to_euler(R: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """(roll, pitch, yaw) for R = Rz(yaw) Ry(pitch) Rx(roll), ZYX intrinsic.

    At the gimbal singularity |pitch| = pi/2 the roll is set to zero and the
    remaining freedom folded into yaw.
    """
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or np.max(np.abs(R.T @ R - np.eye(3))) > tol:
        raise ValueError("input is not orthonormal within tolerance")

    sp = -R[2, 0]
    sp = min(1.0, max(-1.0, sp))
    pitch = math.asin(sp)
    if abs(sp) > 1.0 - 1e-12:
        roll = 0.0
        yaw = math.atan2(-R[0, 1], R[1, 1])
    else:
        roll = math.atan2(R[2, 1], R[2, 2])
        yaw = math.atan2(R[1, 0], R[0, 0])
    return np.array([roll, pitch, yaw])


def euler_to_rot(roll: float, pitch: float, yaw: float) -> np.ndarray:
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    Rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    Ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    Rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return Rz @ Ry @ Rx


def _pose_channels(y: np.ndarray) -> np.ndarray:
    """(T, nodes, 6) array of positions and Euler angles from snapshots."""
    T, nodes, _ = y.shape
    out = np.empty((T, nodes, 6))
    out[:, :, 0:3] = y[:, :, SL_P]
    for t in range(T):
        for j in range(nodes):
            out[t, j, 3:6] = rot_to_euler(quat_to_rot(y[t, j, SL_H]))
    return out


def pose_mse(traj_a, traj_b) -> float:
    """Mean squared error over time steps, nodes, and 6 pose channels.

    Channels are 3 positions (m) and 3 ZYX Euler angles (rad), mixed in a
    single mean; trajectories must share time length and node count.
    """
    ya = traj_a.y if hasattr(traj_a, "y") else np.asarray(traj_a)
    yb = traj_b.y if hasattr(traj_b, "y") else np.asarray(traj_b)
    if ya.shape != yb.shape:
        raise ValueError(f"trajectory shapes differ: {ya.shape} vs {yb.shape}")
    diff = _pose_channels(ya) - _pose_channels(yb)
    return float(np.mean(diff * diff))


def compare(truth, candidate) -> MetricReport:
    """Tip DTW plus pose MSE for a candidate trajectory against the truth."""
    tip_t = truth.tip_positions()
    tip_c = candidate.tip_positions()
    per_step = np.linalg.norm(tip_t - tip_c, axis=1) if len(tip_t) == len(tip_c) \
        else np.array([])
    return MetricReport(
        tip_dtw=dtw_tip(tip_t, tip_c),
        pose_mse=pose_mse(truth, candidate),
        per_step_tip_error=per_step,
    )
