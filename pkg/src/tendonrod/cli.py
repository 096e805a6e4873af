"""Command-line interface.

Subcommands: simulate, train, evaluate, estimate-state, experiment,
write-config.  Report-producing commands (evaluate, experiment) render figures
next to their CSV outputs.  Exit codes: 0 success, 1 usage or I/O error,
2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from . import config as cfgmod
from . import controls_experiments as ce
from . import knode, metrics_eval, report
from .bvp_shooting import ConvergenceError, IntegrationDivergedError, rollout
from .rod_model import Y_DIM, Z_DIM

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit_usage(message)


class SystemExit_usage(Exception):
    pass


def _build_parser() -> _Parser:
    parser = _Parser(prog="tendonrod",
                     description="Tendon-driven continuum rod simulation and "
                                 "hybrid model learning")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="roll out a trajectory to CSV")
    p.add_argument("config", help="configuration file (INI)")
    p.add_argument("--out", required=True, help="output trajectory CSV")
    p.add_argument("--seed", type=int, default=None,
                   help="seed for random control schedules")
    p.add_argument("--model", default=None,
                   help="optional residual-model checkpoint for hybrid rollout")
    p.add_argument("--steps", type=int, default=None, help="override step count")
    p.add_argument("--plot", action="store_true",
                   help="save a rod-shape figure next to the CSV")

    p = sub.add_parser("train", help="train the residual network")
    p.add_argument("config")
    p.add_argument("--data", nargs="+", required=True, help="trajectory CSV files")
    p.add_argument("--out", required=True, help="model checkpoint path")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("evaluate", help="compare two trajectories")
    p.add_argument("--truth", required=True)
    p.add_argument("--candidate", required=True)
    p.add_argument("--out", required=True, help="metrics CSV")

    p = sub.add_parser("estimate-state", help="reconstruct full state from markers")
    p.add_argument("config")
    p.add_argument("--markers", required=True, help="marker CSV")
    p.add_argument("--out", required=True, help="output trajectory CSV")

    p = sub.add_parser("experiment", help="run the imperfection experiment matrix")
    p.add_argument("config")
    p.add_argument("--outdir", required=True)
    p.add_argument("--variants", nargs="+", default=list(ce.IMPERFECTION_VARIANTS))
    p.add_argument("--controls", nargs="+", default=["sine", "step"],
                   choices=["sine", "step"])
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--eval-steps", type=int, default=100)
    p.add_argument("--train-steps", type=int, default=30)

    p = sub.add_parser("write-config", help="write the default configuration file")
    p.add_argument("path")
    return parser


def _load(path_loader, path, what):
    if not os.path.exists(path):
        raise FileNotFoundError(f"{what} file not found: {path}")
    return path_loader(path)


def cmd_simulate(args) -> int:
    cfg = cfgmod.load_config(args.config)
    if args.seed is not None:
        cfg["controls"]["seed"] = str(args.seed)
    params = cfgmod.rod_params_from(cfg)
    variant = cfg["imperfection"].get("variant")
    params = ce.make_imperfect(params, variant)
    solver = cfgmod.solver_config_from(cfg)
    schedule = cfgmod.schedule_from(cfg, params.tendon_count, params.dt)
    steps = args.steps if args.steps is not None else schedule.steps
    model = knode.load_model(args.model) if args.model else None

    traj = rollout(params, schedule.tensions, T_steps=steps, cfg=solver,
                   residual_model=model)
    cfgmod.write_trajectory_csv(args.out, traj)
    if args.plot:
        report.save_rod_snapshots(_sibling(args.out, "_shape.png"), traj)
    print(f"wrote {traj.steps + 1} snapshots x {traj.nodes} nodes to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = cfgmod.load_config(args.config)
    params = cfgmod.rod_params_from(cfg)
    variant = cfg["imperfection"].get("variant")
    params = ce.make_imperfect(params, variant)
    train_cfg = cfgmod.train_config_from(cfg, seed=args.seed)
    dataset = [_load(cfgmod.read_trajectory_csv, p, "data") for p in args.data]

    tr = cfg["training"]
    d_in = Y_DIM + Z_DIM + params.tendon_count
    if tr.getboolean("include_history"):
        d_in += knode.HIST_DIM
    model = knode.MlpModel.initialize(
        d_in, d_hidden=tr.getint("hidden"),
        convexity_clamp=tr.getboolean("clamp"),
        rng=np.random.default_rng(train_cfg.seed),
        control_count=params.tendon_count)

    trained, history = knode.train(model, dataset, params, train_cfg)
    knode.save_model(args.out, trained)
    loss_path = _sibling(args.out, "_loss.csv")
    with open(loss_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "loss"])
        for i, v in enumerate(history):
            writer.writerow([i, f"{v:.17g}"])
    print(f"trained {train_cfg.epochs} epochs: loss {history[0]:.3e} -> "
          f"{history[-1]:.3e}; checkpoint {args.out}, curve {loss_path}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    truth = _load(cfgmod.read_trajectory_csv, args.truth, "truth")
    cand = _load(cfgmod.read_trajectory_csv, args.candidate, "candidate")
    rep = metrics_eval.compare(truth, cand)
    with open(args.out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["tip_dtw", "pose_mse"])
        writer.writerow([f"{rep.tip_dtw:.17g}", f"{rep.pose_mse:.17g}"])
    if len(rep.per_step_tip_error):
        per_step = _sibling(args.out, "_per_step.csv")
        with open(per_step, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["t", "tip_error"])
            for t, e in zip(truth.times, rep.per_step_tip_error):
                writer.writerow([f"{t:.17g}", f"{e:.17g}"])
        report.save_tip_error(_sibling(args.out, "_tip_error.png"),
                              truth.times, rep.per_step_tip_error)
        report.save_tip_paths(_sibling(args.out, "_tip_paths.png"),
                              {"truth": truth, "candidate": cand})
    print(f"tip_dtw {rep.tip_dtw:.6g}  pose_mse {rep.pose_mse:.6g}")
    return EXIT_OK


def cmd_estimate_state(args) -> int:
    from . import state_estimation

    cfg = cfgmod.load_config(args.config)
    params = cfgmod.rod_params_from(cfg)
    series = _load(cfgmod.read_markers_csv, args.markers, "marker")
    schedule = cfgmod.schedule_from(cfg, params.tendon_count, params.dt)
    tensions = np.vstack([schedule.tensions[:1], schedule.tensions])
    traj = state_estimation.reconstruct_trajectory(series, params, tensions)
    cfgmod.write_trajectory_csv(args.out, traj)
    print(f"estimated {traj.steps + 1} snapshots x {traj.nodes} nodes "
          f"from {series.n_markers} markers -> {args.out}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = cfgmod.load_config(args.config)
    params = cfgmod.rod_params_from(cfg)
    solver = cfgmod.solver_config_from(cfg)
    train_cfg = cfgmod.train_config_from(cfg)
    os.makedirs(args.outdir, exist_ok=True)

    sched_cache = {}
    truth_train = [rollout(params, s.tensions, cfg=solver)
                   for s in ce.default_training_schedules(
                       params.dt, args.train_steps, params.tendon_count)]
    results = []
    for control in args.controls:
        sched = ce.default_eval_schedule(control, params.dt, args.eval_steps,
                                         params.tendon_count)
        sched_cache[control] = sched
        truth_eval = rollout(params, sched.tensions, cfg=solver)
        for variant in args.variants:
            res = ce.run_experiment(
                variant, control, seeds=tuple(args.seeds), true_params=params,
                solver_cfg=solver, train_cfg=train_cfg,
                truth_train=truth_train, truth_eval=truth_eval,
                eval_steps=args.eval_steps)
            results.append(res)
            tag = f"{variant}_{control}"
            report.save_tip_paths(
                os.path.join(args.outdir, f"tip_paths_{tag}.png"),
                {"truth": res.eval_truth, "baseline": res.eval_baseline,
                 "hybrid": res.eval_knode},
                title=(f"{tag}: DTW {res.baseline_dtw:.3g} -> {res.knode_dtw:.3g}, "
                       f"MSE {res.baseline_mse:.3g} -> {res.knode_mse:.3g}"))
            report.save_loss_curves(
                os.path.join(args.outdir, f"loss_{tag}.png"),
                {f"seed {s.seed}": s.loss_history for s in res.per_seed})
            print(f"{variant:>15s} {control}: dtw {res.baseline_dtw:.4g} -> "
                  f"{res.knode_dtw:.4g} ({res.dtw_percent_change:+.1f}%), "
                  f"mse {res.baseline_mse:.4g} -> {res.knode_mse:.4g} "
                  f"({res.mse_percent_change:+.1f}%)")
    for control, sched in sched_cache.items():
        report.save_controls(os.path.join(args.outdir, f"controls_{control}.png"),
                             sched)
    ce.write_report_csv(os.path.join(args.outdir, "report.csv"), results)
    print(f"report written to {os.path.join(args.outdir, 'report.csv')}")
    return EXIT_OK


def cmd_write_config(args) -> int:
    cfgmod.write_default_config(args.path)
    print(f"default configuration written to {args.path}")
    return EXIT_OK


def _sibling(path, suffix):
    stem, _ = os.path.splitext(path)
    return stem + suffix


_COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "estimate-state": cmd_estimate_state,
    "experiment": cmd_experiment,
    "write-config": cmd_write_config,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit_usage as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except (ConvergenceError, IntegrationDivergedError, knode.TrainingDivergedError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, ValueError, cfgmod.ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
