"""Tension schedules, knowledge-model imperfections, and the experiment matrix.

An experiment cell takes one imperfection variant: truth data is generated
with the true parameters, the hybrid model is trained on two short sine
trajectories, and both the imperfect baseline and the trained hybrid are
rolled out against the truth on held-out controls (sine or step), scored by
tip DTW and pose MSE.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import metrics_eval
from .bvp_shooting import SolverConfig, Trajectory, rollout
from .knode import MlpModel, TrainConfig, train
from .rod_model import RodParams, Y_DIM, Z_DIM, make_params, with_changes

IMPERFECTION_VARIANTS = ("none", "no_self_weight", "short_length", "stiff",
                         "stiff_and_short")

SHORT_LENGTH = 0.4     # m
STIFF_E = 10.0e9       # Pa


@dataclass(frozen=True)
class ImperfectionSpec:
    """One of the knowledge-model imperfection variants."""

    variant: str

    def __post_init__(self):
        if self.variant not in IMPERFECTION_VARIANTS:
            raise ValueError(f"unknown imperfection variant {self.variant!r}; "
                             f"expected one of {IMPERFECTION_VARIANTS}")


@dataclass
class ControlSchedule:
    """Tension commands, one row per time step."""

    tensions: np.ndarray   # (T_steps, tendon_count), N
    dt: float
    kind: str              # sine | step | random | constant

    def __post_init__(self):
        self.tensions = np.atleast_2d(np.asarray(self.tensions, dtype=float))
        if np.any(self.tensions < 0.0):
            raise ValueError("tendon tensions must be non-negative")

    @property
    def steps(self) -> int:
        return self.tensions.shape[0]

    @property
    def tendon_count(self) -> int:
        return self.tensions.shape[1]

    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.steps)


def sine_controls(base: float, amplitude: float, period: float, T_steps: int,
                  dt: float, tendon_count: int = 4) -> ControlSchedule:
    """tau_i(t) = base + amplitude * sin(2 pi t / period + 2 pi i / count)."""
    if base < amplitude:
        raise ValueError("base tension below amplitude gives negative tensions")
    if amplitude < 0:
        raise ValueError("amplitude must be non-negative")
    t = dt * np.arange(T_steps)
    phases = 2.0 * math.pi * np.arange(tendon_count) / tendon_count
    tensions = base + amplitude * np.sin(
        2.0 * math.pi * t[:, None] / period + phases[None, :])
    return ControlSchedule(tensions=tensions, dt=dt, kind="sine")


def step_controls(base: float, stepped: float, t_step: float,
                  stepped_tendons: Sequence[int], T_steps: int, dt: float,
                  tendon_count: int = 4) -> ControlSchedule:
    """Constant base tension, stepped tendons jump to ``stepped`` at the first
    time index with t >= t_step."""
    stepped_tendons = list(stepped_tendons)
    if any(i < 0 or i >= tendon_count for i in stepped_tendons):
        raise ValueError("stepped tendon index out of range")
    if not 0.0 <= t_step <= T_steps * dt:
        raise ValueError("step time outside the schedule horizon")
    tensions = np.full((T_steps, tendon_count), float(base))
    k0 = int(math.ceil(t_step / dt - 1e-12))
    tensions[k0:, stepped_tendons] = float(stepped)
    return ControlSchedule(tensions=tensions, dt=dt, kind="step")


def random_controls(lo: float, hi: float, T_steps: int, dt: float,
                    tendon_count: int = 4, seed: int = 0) -> ControlSchedule:
    """IID uniform [lo, hi] tension per tendon per step, reproducible by seed."""
    if lo > hi:
        raise ValueError("lo must not exceed hi")
    rng = np.random.default_rng(seed)
    tensions = rng.uniform(lo, hi, size=(T_steps, tendon_count))
    return ControlSchedule(tensions=tensions, dt=dt, kind="random")


def constant_controls(value: float, T_steps: int, dt: float,
                      tendon_count: int = 4) -> ControlSchedule:
    return ControlSchedule(tensions=np.full((T_steps, tendon_count), float(value)),
                           dt=dt, kind="constant")


def make_imperfect(true_params: RodParams, variant) -> RodParams:
    """Knowledge-model parameters for one imperfection variant (a variant
    name or an ImperfectionSpec)."""
    if isinstance(variant, ImperfectionSpec):
        variant = variant.variant
    if variant not in IMPERFECTION_VARIANTS:
        raise ValueError(f"unknown imperfection variant {variant!r}; "
                         f"expected one of {IMPERFECTION_VARIANTS}")
    if variant == "none":
        return with_changes(true_params)
    if variant == "no_self_weight":
        return with_changes(true_params, include_self_weight=False)
    if variant == "short_length":
        return with_changes(true_params, L=SHORT_LENGTH)
    if variant == "stiff":
        return with_changes(true_params, E=STIFF_E)
    return with_changes(true_params, L=SHORT_LENGTH, E=STIFF_E)


def default_training_schedules(dt: float = 0.05, steps: int = 30,
                               tendon_count: int = 4):
    """Two short sine schedules (0.5 s and 1 s periods) used as training data."""
    return [
        sine_controls(6.0, 1.0, 0.5, steps, dt, tendon_count),
        sine_controls(6.0, 1.0, 1.0, steps, dt, tendon_count),
    ]


def default_eval_schedule(kind: str, dt: float = 0.05, steps: int = 100,
                          tendon_count: int = 4) -> ControlSchedule:
    """Held-out evaluation controls: the 1.5 s sine or the 5 -> 6.5 N step."""
    if kind == "sine":
        return sine_controls(6.0, 1.0, 1.5, steps, dt, tendon_count)
    if kind == "step":
        return step_controls(5.0, 6.5, 1.5, (0, 1), steps, dt, tendon_count)
    raise ValueError(f"unknown evaluation kind {kind!r}")


@dataclass
class SeedResult:
    seed: int
    knode_dtw: float
    knode_mse: float
    final_loss: float
    loss_history: list = field(default_factory=list, repr=False)


@dataclass
class ExperimentResult:
    variant: str
    control: str
    baseline_dtw: float
    baseline_mse: float
    per_seed: list
    eval_truth: Optional[Trajectory] = None
    eval_baseline: Optional[Trajectory] = None
    eval_knode: Optional[Trajectory] = None   # rollout for the first seed

    @property
    def knode_dtw(self) -> float:
        return float(np.mean([s.knode_dtw for s in self.per_seed]))

    @property
    def knode_mse(self) -> float:
        return float(np.mean([s.knode_mse for s in self.per_seed]))

    @staticmethod
    def _percent(baseline: float, value: float) -> float:
        if baseline == 0.0:
            return 0.0 if value == 0.0 else math.inf
        return 100.0 * (value - baseline) / baseline

    @property
    def dtw_percent_change(self) -> float:
        return self._percent(self.baseline_dtw, self.knode_dtw)

    @property
    def mse_percent_change(self) -> float:
        return self._percent(self.baseline_mse, self.knode_mse)

    def csv_row(self):
        return [self.variant, self.control,
                f"{self.baseline_dtw:.6g}", f"{self.knode_dtw:.6g}",
                f"{self.baseline_mse:.6g}", f"{self.knode_mse:.6g}",
                f"{self.dtw_percent_change:.2f}"]


REPORT_COLUMNS = ["variant", "control", "baseline_dtw", "knode_dtw",
                  "baseline_mse", "knode_mse", "percent_change"]


def write_report_csv(path, results) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(REPORT_COLUMNS)
        for res in results:
            writer.writerow(res.csv_row())


def train_model_for(variant_params: RodParams, truth_train, seed: int = 0,
                    train_cfg: Optional[TrainConfig] = None):
    """Initialize and train a residual model against truth trajectories."""
    cfg = train_cfg or TrainConfig()
    cfg = TrainConfig(**{**cfg.__dict__, "seed": seed})
    d_in = Y_DIM + Z_DIM + variant_params.tendon_count
    model = MlpModel.initialize(d_in, rng=np.random.default_rng(seed),
                                control_count=variant_params.tendon_count)
    return train(model, truth_train, variant_params, cfg)


def run_experiment(
    variant: str,
    eval_kind: str = "sine",
    seeds: Sequence[int] = (0,),
    true_params: Optional[RodParams] = None,
    solver_cfg: Optional[SolverConfig] = None,
    train_cfg: Optional[TrainConfig] = None,
    eval_steps: int = 100,
    train_steps: int = 30,
    truth_train: Optional[list] = None,
    truth_eval: Optional[Trajectory] = None,
) -> ExperimentResult:
    """One experiment cell: generate truth, train per seed, evaluate rollouts.

    The spatial integrator defaults to explicit Euler end-to-end so the
    one-step training targets carry pure model mismatch rather than
    integration truncation.  Precomputed ``truth_train`` / ``truth_eval``
    trajectories may be passed in to share them across variants.
    """
    true_params = true_params or make_params()
    cfg = solver_cfg or SolverConfig(integrator="euler")
    imperfect = make_imperfect(true_params, variant)

    if truth_train is None:
        truth_train = [rollout(true_params, s.tensions, cfg=cfg)
                       for s in default_training_schedules(
                           true_params.dt, train_steps, true_params.tendon_count)]
    eval_sched = default_eval_schedule(eval_kind, true_params.dt, eval_steps,
                                       true_params.tendon_count)
    if truth_eval is None:
        truth_eval = rollout(true_params, eval_sched.tensions, cfg=cfg)

    baseline = rollout(imperfect, eval_sched.tensions, cfg=cfg)
    base_metrics = metrics_eval.compare(truth_eval, baseline)

    per_seed = []
    knode_eval_first = None
    for seed in seeds:
        model, history = train_model_for(imperfect, truth_train, seed, train_cfg)
        knode_traj = rollout(imperfect, eval_sched.tensions, cfg=cfg,
                             residual_model=model)
        rep = metrics_eval.compare(truth_eval, knode_traj)
        per_seed.append(SeedResult(seed=seed, knode_dtw=rep.tip_dtw,
                                   knode_mse=rep.pose_mse,
                                   final_loss=history[-1],
                                   loss_history=history))
        if knode_eval_first is None:
            knode_eval_first = knode_traj

    return ExperimentResult(
        variant=variant, control=eval_kind,
        baseline_dtw=base_metrics.tip_dtw, baseline_mse=base_metrics.pose_mse,
        per_seed=per_seed,
        eval_truth=truth_eval, eval_baseline=baseline,
        eval_knode=knode_eval_first,
    )
