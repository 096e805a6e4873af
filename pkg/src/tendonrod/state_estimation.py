"""Full-state reconstruction from sparse pose observations.

Mirrors the mocap pipeline: cubic-spline interpolation of a few tracked poses
onto the simulation grid, numerical differentiation for the local velocities,
backward spatial integration from the free tip for the internal force and
moment, and constitutive recovery of stretch and curvature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from . import rod_model
from .bvp_shooting import Trajectory
from .rod_model import SL_H, SL_M, SL_N, SL_P, SL_Q, SL_W, Y_DIM, Z_DIM, RodParams
from .timestepper import scheme_for_step, update_history, zero_history


@dataclass
class MarkerSeries:
    """Tracked poses at a few arclengths over time."""

    times: np.ndarray          # (T,) strictly increasing, s
    arclengths: np.ndarray     # (M,) sorted, within [0, L]
    positions: np.ndarray      # (T, M, 3)
    quaternions: np.ndarray    # (T, M, 4) scalar first

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.arclengths = np.asarray(self.arclengths, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float)
        self.quaternions = np.asarray(self.quaternions, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("marker times must be strictly increasing")
        if np.any(np.diff(self.arclengths) <= 0):
            raise ValueError("marker arclengths must be sorted and distinct")

    @property
    def n_times(self) -> int:
        return len(self.times)

    @property
    def n_markers(self) -> int:
        return len(self.arclengths)


def _continuous_quats(quats: np.ndarray, axis: int) -> np.ndarray:
    """Flip quaternion signs along one axis so neighbors have positive dot."""
    out = np.moveaxis(quats.copy(), axis, 0)
    for i in range(1, out.shape[0]):
        dots = np.sum(out[i] * out[i - 1], axis=-1)
        out[i][dots < 0.0] *= -1.0
    return np.moveaxis(out, 0, axis)


def interpolate_poses(series: MarkerSeries, node_arclengths, query_times):
    """Natural cubic splines in arclength and time for the tracked poses.

    Positions are splined componentwise in s then in t; quaternions likewise,
    with sign continuity enforced first and renormalization after.  Returns
    (positions (T, N, 3), quaternions (T, N, 4)).
    """
    if series.n_markers < 4 or series.n_times < 4:
        raise ValueError("need at least 4 markers and 4 time samples for cubic splines")
    node_arclengths = np.asarray(node_arclengths, dtype=float)
    query_times = np.asarray(query_times, dtype=float)

    quats = _continuous_quats(_continuous_quats(series.quaternions, 0), 1)

    # arclength pass: (T, M, c) -> (T, N, c)
    pos_s = CubicSpline(series.arclengths, series.positions, axis=1,
                        bc_type="natural")(node_arclengths)
    quat_s = CubicSpline(series.arclengths, quats, axis=1,
                         bc_type="natural")(node_arclengths)
    # time pass
    pos = CubicSpline(series.times, pos_s, axis=0, bc_type="natural")(query_times)
    quat = CubicSpline(series.times, quat_s, axis=0, bc_type="natural")(query_times)
    quat = quat / np.linalg.norm(quat, axis=-1, keepdims=True)
    return pos, quat


def _rotations(quat: np.ndarray) -> np.ndarray:
    """(T, N, 3, 3) rotation matrices from (T, N, 4) unit quaternions."""
    T, N, _ = quat.shape
    out = np.empty((T, N, 3, 3))
    for t in range(T):
        for j in range(N):
            out[t, j] = rod_model.quat_to_rot(quat[t, j])
    return out


def _vee(mat: np.ndarray) -> np.ndarray:
    skew = 0.5 * (mat - mat.T)
    return np.array([skew[2, 1], skew[0, 2], skew[1, 0]])


def estimate_velocities(positions: np.ndarray, quaternions: np.ndarray,
                        times: np.ndarray):
    """Local-frame linear and angular velocities by numerical differentiation.

    Central differences in the interior, one-sided at the ends; world rates
    are mapped into the material frame (q = R^T p_dot, w from the vee of
    R^T R_dot, skew-symmetrized against roundoff).
    """
    if len(times) < 3:
        raise ValueError("need at least 3 time samples to differentiate")
    p_dot = np.gradient(positions, times, axis=0)
    R = _rotations(quaternions)
    R_dot = np.gradient(R, times, axis=0)

    T, N = positions.shape[:2]
    q = np.empty((T, N, 3))
    w = np.empty((T, N, 3))
    for t in range(T):
        for j in range(N):
            Rt = R[t, j]
            q[t, j] = Rt.T @ p_dot[t, j]
            w[t, j] = _vee(Rt.T @ R_dot[t, j])
    return q, w


def _history_for_step(t: int, y_seq, z_seq, dt: float):
    """Histories per the rollout startup rule; statics at the first sample."""
    if t == 0:
        return zero_history(y_seq[0].shape[0]), 0.0
    scheme = scheme_for_step(t, dt)
    lag2 = (y_seq[t - 2], z_seq[t - 2]) if t >= 2 else None
    hist = update_history((y_seq[t - 1], z_seq[t - 1]), lag2, scheme)
    return hist, scheme.c0


def backward_force_integration(positions, quaternions, q, w, times, tensions,
                               params: RodParams):
    """Internal force and moment fields by integrating tipward states backward.

    With the free-tip conditions n(L) = m(L) = 0, steps inward node by node
    using n(s-1) = n(s) - ds * n_s (same for m), evaluating the spatial
    derivatives from the estimated pose/velocity fields.  ``tensions`` has one
    row per time sample.  Position derivatives p_s come from a spline through
    the dense node positions.
    """
    T, N = positions.shape[:2]
    ds = params.ds
    s_nodes = params.node_arclengths()
    tensions = np.atleast_2d(np.asarray(tensions, dtype=float))

    n_out = np.zeros((T, N, 3))
    m_out = np.zeros((T, N, 3))

    # q, w histories from the estimated sequence itself
    y_seq = np.zeros((T, N, Y_DIM))
    y_seq[:, :, SL_P] = positions
    y_seq[:, :, SL_H] = quaternions
    y_seq[:, :, SL_Q] = q
    y_seq[:, :, SL_W] = w
    z_seq = np.zeros((T, N, Z_DIM))

    for t in range(T):
        hist, c0 = _history_for_step(t, y_seq, z_seq, params.dt)
        p_s = CubicSpline(s_nodes, positions[t], axis=0, bc_type="natural")(
            s_nodes, 1)
        tau_t = tensions[min(t, len(tensions) - 1)]
        for j in range(N - 1, 0, -1):
            R = rod_model.quat_to_rot(quaternions[t, j])
            q_t = c0 * q[t, j] + hist.hq[j]
            w_t = c0 * w[t, j] + hist.hw[j]
            f_t, l_t = rod_model.tendon_loads(tau_t, params, R)
            n_s = R @ (params.rho * params.A * (np.cross(w[t, j], q[t, j]) + q_t)
                       + params.Cdrag @ (q[t, j] * np.abs(q[t, j])))
            if params.include_self_weight:
                n_s = n_s - params.rho * params.A * params.g
            n_s = n_s - f_t
            m_s = (params.rho * (R @ (np.cross(w[t, j], params.J @ w[t, j])
                                      + params.J @ w_t))
                   - np.cross(p_s[j], n_out[t, j]) - l_t)
            n_out[t, j - 1] = n_out[t, j] - ds * n_s
            m_out[t, j - 1] = m_out[t, j] - ds * m_s
    return n_out, m_out


def estimate_strains(quaternions, n, m, times, params: RodParams):
    """Stretch and curvature through the constitutive relation, with histories
    bootstrapped from the estimates themselves (statics at the first sample,
    then the usual order-1/order-2 startup)."""
    T, N = n.shape[:2]
    v_out = np.zeros((T, N, 3))
    u_out = np.zeros((T, N, 3))
    for t in range(T):
        if t == 0:
            c0 = 0.0
            hv = np.zeros((N, 3))
            hu = np.zeros((N, 3))
        else:
            scheme = scheme_for_step(t, params.dt)
            if scheme.order == 2:
                hv = scheme.c1 * v_out[t - 1] + scheme.c2 * v_out[t - 2]
                hu = scheme.c1 * u_out[t - 1] + scheme.c2 * u_out[t - 2]
            else:
                hv = scheme.c1 * v_out[t - 1]
                hu = scheme.c1 * u_out[t - 1]
            c0 = scheme.c0
        for j in range(N):
            v_out[t, j], u_out[t, j] = rod_model.constitutive_vu(
                quaternions[t, j], n[t, j], m[t, j], hv[j], hu[j], params, c0)
    return v_out, u_out


def reconstruct_trajectory(series: MarkerSeries, params: RodParams,
                           tensions) -> Trajectory:
    """Whole pipeline: markers -> dense poses -> velocities -> forces -> strains."""
    nodes = params.node_arclengths()
    pos, quat = interpolate_poses(series, nodes, series.times)
    q, w = estimate_velocities(pos, quat, series.times)
    n, m = backward_force_integration(pos, quat, q, w, series.times, tensions, params)
    v, u = estimate_strains(quat, n, m, series.times, params)

    T = series.n_times
    y = np.zeros((T, params.nodes, Y_DIM))
    y[:, :, SL_P] = pos
    y[:, :, SL_H] = quat
    y[:, :, SL_N] = n
    y[:, :, SL_M] = m
    y[:, :, SL_Q] = q
    y[:, :, SL_W] = w
    z = np.zeros((T, params.nodes, Z_DIM))
    z[:, :, rod_model.SL_V] = v
    z[:, :, rod_model.SL_U] = u
    tau = np.atleast_2d(np.asarray(tensions, dtype=float))
    if tau.shape[0] < T:
        tau = np.vstack([tau, np.repeat(tau[-1:], T - tau.shape[0], axis=0)])
    return Trajectory(times=series.times, y=y, z=z, tau=tau[:T])
