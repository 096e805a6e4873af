"""Per-step boundary-value solve by shooting, and full trajectory rollouts.

Each time step leaves a spatial ODE in y = [p, h, n, m, q, w] with the base
clamped (p, h, q, w known at s = 0) and a free tip (n = m = 0 at s = L).  The
unknown root internal force/moment (n0, m0) is found with a damped Newton
iteration on the distal residual, using a forward-difference Jacobian.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import rod_model
from .rod_model import SL_H, SL_M, SL_N, Y_DIM, Z_DIM, RodParams, quat_normalize
from .timestepper import (
    BdfScheme,
    HistoryBuffer,
    STATIC_SCHEME,
    scheme_for_step,
    update_history,
    zero_history,
)


class IntegrationDivergedError(RuntimeError):
    """Non-finite state encountered while integrating the spatial ODE."""


class ConvergenceError(RuntimeError):
    """Newton iteration exhausted max_iters above the residual tolerance."""

    def __init__(self, message: str, best_residual: float, iterations: int,
                 step_index: Optional[int] = None):
        super().__init__(message)
        self.best_residual = best_residual
        self.iterations = iterations
        self.step_index = step_index


@dataclass
class ShootingGuess:
    """Unknown internal force (N) and moment (N m) at the rod base."""

    n0: np.ndarray
    m0: np.ndarray

    @classmethod
    def zero(cls) -> "ShootingGuess":
        return cls(n0=np.zeros(3), m0=np.zeros(3))

    @classmethod
    def from_vector(cls, x: np.ndarray) -> "ShootingGuess":
        x = np.asarray(x, dtype=float)
        return cls(n0=x[0:3].copy(), m0=x[3:6].copy())

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.n0, self.m0])


@dataclass
class SolverConfig:
    residual_tol: float = 1e-6    # mixed N / N m norm on [n(L); m(L)]
    max_iters: int = 50
    fd_epsilon: float = 1e-6      # relative forward-difference perturbation
    integrator: str = "rk4"       # "rk4" or "euler"
    damping: float = 0.5          # backtracking factor for the line search
    max_backtracks: int = 25

    def __post_init__(self):
        if self.residual_tol <= 0:
            raise ValueError("residual_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.integrator not in ("rk4", "euler"):
            raise ValueError("integrator must be 'rk4' or 'euler'")


@dataclass
class Trajectory:
    """Time-indexed rod snapshots plus the tension commands that produced them.

    ``tau[i]`` is the command active during the step that produced snapshot i
    (``tau[0]`` repeats the first command).
    """

    times: np.ndarray            # (T+1,)
    y: np.ndarray                # (T+1, nodes, 19)
    z: np.ndarray                # (T+1, nodes, 6)
    tau: np.ndarray              # (T+1, tendon_count)
    solver_iters: list = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.times) - 1

    @property
    def nodes(self) -> int:
        return self.y.shape[1]

    def tip_positions(self) -> np.ndarray:
        return self.y[:, -1, rod_model.SL_P]

    def positions(self) -> np.ndarray:
        return self.y[:, :, rod_model.SL_P]

    def quaternions(self) -> np.ndarray:
        return self.y[:, :, rod_model.SL_H]


def initial_state(params: RodParams):
    """Straight stationary rod along v*: the upright rest configuration."""
    nodes = params.nodes
    y = np.zeros((nodes, Y_DIM))
    s = params.node_arclengths()
    y[:, rod_model.SL_P] = s[:, None] * params.vstar[None, :]
    y[:, SL_H.start] = 1.0
    z = np.zeros((nodes, Z_DIM))
    z[:, rod_model.SL_V] = params.vstar
    z[:, rod_model.SL_U] = params.ustar
    return y, z


def node_derivative(
    y_node: np.ndarray,
    hist_node: np.ndarray,
    tau: np.ndarray,
    params: RodParams,
    c0: float,
    residual_model=None,
):
    """(y_s, z) at one node: knowledge model plus optional learned residual.

    ``residual_model`` must provide ``correct(y, z_k, hist, tau, c0) ->
    (z, res_y)``; with ``None`` this is exactly the knowledge model.
    """
    v, u = rod_model.constitutive_vu(
        y_node[SL_H], y_node[SL_N], y_node[SL_M],
        hist_node[0:3], hist_node[3:6], params, c0,
    )
    if residual_model is None:
        z = np.concatenate([v, u])
        ys = rod_model.cosserat_rhs(y_node, (v, u), hist_node, tau, params, c0)
    else:
        z, res_y = residual_model.correct(
            y_node, np.concatenate([v, u]), hist_node, tau, c0
        )
        ys = rod_model.cosserat_rhs(y_node, (z[0:3], z[3:6]), hist_node, tau, params, c0)
        ys = ys + res_y
    return ys, z


def _normalized(y_node: np.ndarray) -> np.ndarray:
    out = y_node.copy()
    out[SL_H] = quat_normalize(out[SL_H])
    return out


def integrate_spatial(
    guess: ShootingGuess,
    hist: HistoryBuffer,
    tau: np.ndarray,
    params: RodParams,
    scheme: BdfScheme,
    cfg: Optional[SolverConfig] = None,
    residual_model=None,
):
    """Fixed-step integration of the spatial ODE from the clamped base.

    Returns (y, z) arrays over the N_seg+1 nodes.  The quaternion is
    renormalized after every step; v, u are recomputed at every node (and every
    RK stage) through the constitutive relation plus the optional residual.
    """
    cfg = cfg or SolverConfig()
    nodes = params.nodes
    ds = params.ds
    c0 = scheme.c0
    hmat = hist.as_matrix()
    if hmat.shape[0] != nodes:
        raise ValueError("history buffer node count does not match params")

    y = np.zeros((nodes, Y_DIM))
    z = np.zeros((nodes, Z_DIM))
    y0, _ = initial_state(params)
    y[0] = y0[0]
    y[0, SL_N] = guess.n0
    y[0, SL_M] = guess.m0

    for j in range(params.N_seg):
        k1, z[j] = node_derivative(y[j], hmat[j], tau, params, c0, residual_model)
        if cfg.integrator == "euler":
            y_next = y[j] + ds * k1
        else:
            h_mid = 0.5 * (hmat[j] + hmat[j + 1])
            k2, _ = node_derivative(_normalized(y[j] + 0.5 * ds * k1), h_mid, tau,
                                    params, c0, residual_model)
            k3, _ = node_derivative(_normalized(y[j] + 0.5 * ds * k2), h_mid, tau,
                                    params, c0, residual_model)
            k4, _ = node_derivative(_normalized(y[j] + ds * k3), hmat[j + 1], tau,
                                    params, c0, residual_model)
            y_next = y[j] + (ds / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        y_next[SL_H] = quat_normalize(y_next[SL_H])
        if not np.all(np.isfinite(y_next)):
            raise IntegrationDivergedError(f"non-finite state at node {j + 1}")
        y[j + 1] = y_next

    _, z[-1] = node_derivative(y[-1], hmat[-1], tau, params, c0, residual_model)
    return y, z


def distal_residual(
    guess: ShootingGuess,
    hist: HistoryBuffer,
    tau: np.ndarray,
    params: RodParams,
    scheme: BdfScheme,
    cfg: Optional[SolverConfig] = None,
    residual_model=None,
) -> np.ndarray:
    """[n(L); m(L)]: zero at a solution (free tip carries no force or moment)."""
    y, _ = integrate_spatial(guess, hist, tau, params, scheme, cfg, residual_model)
    return np.concatenate([y[-1, SL_N], y[-1, SL_M]])


def solve_step(
    prev_guess: ShootingGuess,
    hist: HistoryBuffer,
    tau: np.ndarray,
    params: RodParams,
    scheme: BdfScheme,
    cfg: Optional[SolverConfig] = None,
    residual_model=None,
):
    """Damped Newton on the distal residual, warm-started from ``prev_guess``.

    Returns (y, z, guess, trace) where trace is the residual norm before each
    accepted iterate (trace[0] is the warm-start residual).  Raises
    ConvergenceError with the best norm reached if max_iters is exhausted.
    """
    cfg = cfg or SolverConfig()

    def evaluate(x):
        y, z = integrate_spatial(ShootingGuess.from_vector(x), hist, tau, params,
                                 scheme, cfg, residual_model)
        r = np.concatenate([y[-1, SL_N], y[-1, SL_M]])
        return y, z, r

    x = prev_guess.as_vector()
    y, z, r = evaluate(x)
    rnorm = float(np.linalg.norm(r))
    trace = [rnorm]

    for _ in range(cfg.max_iters):
        if rnorm <= cfg.residual_tol:
            return y, z, ShootingGuess.from_vector(x), trace

        jac = np.empty((6, 6))
        for k in range(6):
            eps = cfg.fd_epsilon * (1.0 + abs(x[k]))
            xp = x.copy()
            xp[k] += eps
            _, _, rp = evaluate(xp)
            jac[:, k] = (rp - r) / eps
        try:
            dx = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError:
            dx = np.linalg.lstsq(jac, -r, rcond=None)[0]

        alpha = 1.0
        best = None
        for _ in range(cfg.max_backtracks):
            try:
                cand = evaluate(x + alpha * dx)
            except IntegrationDivergedError:
                alpha *= cfg.damping
                continue
            cnorm = float(np.linalg.norm(cand[2]))
            if best is None or cnorm < best[0]:
                best = (cnorm, x + alpha * dx, cand)
            if cnorm < rnorm:
                break
            alpha *= cfg.damping
        if best is None:
            raise ConvergenceError(
                "spatial integration diverged for every damped step",
                best_residual=rnorm, iterations=len(trace) - 1,
            )
        rnorm, x, (y, z, r) = best
        trace.append(rnorm)

    if rnorm <= cfg.residual_tol:
        return y, z, ShootingGuess.from_vector(x), trace
    raise ConvergenceError(
        f"no convergence after {cfg.max_iters} iterations "
        f"(best residual {rnorm:.3e} > tol {cfg.residual_tol:.1e})",
        best_residual=rnorm, iterations=cfg.max_iters,
    )


def solve_static(
    params: RodParams,
    tau: np.ndarray,
    cfg: Optional[SolverConfig] = None,
    guess: Optional[ShootingGuess] = None,
    residual_model=None,
):
    """Statics solve: all temporal derivatives and histories set to zero."""
    hist = zero_history(params.nodes)
    return solve_step(guess or ShootingGuess.zero(), hist, tau, params,
                      STATIC_SCHEME, cfg, residual_model)


def rollout(
    params: RodParams,
    tensions: np.ndarray,
    T_steps: Optional[int] = None,
    cfg: Optional[SolverConfig] = None,
    residual_model=None,
    warm_start: bool = True,
) -> Trajectory:
    """Roll the rod forward from rest through a tension schedule.

    ``tensions`` is a (steps, tendon_count) command array; row k drives the
    step from t = k dt to (k+1) dt.  The first step uses the order-1 scheme,
    later steps order 2, and each step is solved to the residual tolerance.
    """
    cfg = cfg or SolverConfig()
    tensions = np.atleast_2d(np.asarray(tensions, dtype=float))
    if T_steps is None:
        T_steps = tensions.shape[0]
    if T_steps > tensions.shape[0]:
        raise ValueError("tension schedule shorter than requested horizon")

    nodes = params.nodes
    y = np.zeros((T_steps + 1, nodes, Y_DIM))
    z = np.zeros((T_steps + 1, nodes, Z_DIM))
    tau = np.zeros((T_steps + 1, params.tendon_count))
    y[0], z[0] = initial_state(params)
    tau[0] = tensions[0] if tensions.size else 0.0

    guess = ShootingGuess.zero()
    lag1 = (y[0], z[0])
    lag2 = None
    iters = []
    for i in range(1, T_steps + 1):
        scheme = scheme_for_step(i, params.dt)
        hist = update_history(lag1, lag2, scheme)
        tau_i = tensions[i - 1]
        start = guess if warm_start else ShootingGuess.zero()
        try:
            y[i], z[i], guess, trace = solve_step(start, hist, tau_i, params,
                                                  scheme, cfg, residual_model)
        except ConvergenceError as exc:
            raise ConvergenceError(
                f"step {i}: {exc}", best_residual=exc.best_residual,
                iterations=exc.iterations, step_index=i,
            ) from exc
        tau[i] = tau_i
        iters.append(len(trace) - 1)
        lag2 = lag1
        lag1 = (y[i], z[i])

    times = params.dt * np.arange(T_steps + 1)
    return Trajectory(times=times, y=y, z=z, tau=tau, solver_iters=iters)
