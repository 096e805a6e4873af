"""Tendon-driven continuum robot simulation and hybrid model learning.

Subsystems:

- ``rod_model``: rod state/parameters and the spatial derivative of the
  semi-discretized dynamics
- ``timestepper``: backward-differentiation coefficients and history terms
- ``bvp_shooting``: per-step shooting solve and trajectory rollouts
- ``knode``: residual network, training loop, and hybrid dynamics
- ``controls_experiments``: tension schedules, model imperfections, and the
  train/evaluate experiment matrix
- ``metrics_eval``: tip DTW and pose MSE trajectory metrics
- ``state_estimation``: full-state reconstruction from sparse marker poses
- ``cli``: command-line interface and CSV persistence
"""

from .rod_model import RodParams, SectionState, make_params
from .bvp_shooting import SolverConfig, Trajectory, rollout

__all__ = [
    "RodParams",
    "SectionState",
    "SolverConfig",
    "Trajectory",
    "make_params",
    "rollout",
]
