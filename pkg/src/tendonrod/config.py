"""Flat key-value configuration files (INI sections) mirroring the default
simulation setup, plus CSV persistence for trajectories and marker series."""

from __future__ import annotations

import configparser
import csv
import io

import numpy as np

from .bvp_shooting import SolverConfig, Trajectory
from .knode import TrainConfig
from .rod_model import RodParams, Y_DIM, Z_DIM, make_params
from .state_estimation import MarkerSeries

DEFAULT_CONFIG = """\
[rod]
length = 0.635
radius = 0.003175
density = 1411.6751
youngs_modulus = 2.757903e9
poisson = 0.30
bbt = 0.03
bse = 0.0
cdrag = 0.0001
gravity = 0, 0, -9.81
tendon_count = 4
tendon_offset = 0.04
routing_slope = 0.0
self_weight = true
segments = 10
dt = 0.05

[controls]
kind = sine
steps = 100
base = 6.0
amplitude = 1.0
period = 1.5
# step controls
stepped = 6.5
step_time = 1.5
stepped_tendons = 0, 1
# random controls
lo = 4.9
hi = 11.8
seed = 0

[solver]
residual_tol = 1e-6
max_iters = 50
fd_epsilon = 1e-6
integrator = rk4

[training]
lr = 0.01
beta1 = 0.9
beta2 = 0.999
weight_decay = 0.0
plateau_patience = 80
plateau_factor = 0.5
epochs = 500
noise_sigma = 0.0
hidden = 512
clamp = true
include_history = false
seed = 0

[imperfection]
variant = none
"""


class ConfigError(ValueError):
    pass


def _vector(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.replace(",", " ").split()])


def load_config(path=None) -> configparser.ConfigParser:
    """Defaults overlaid with the user's file (every key optional)."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.read_string(DEFAULT_CONFIG)
    if path is not None:
        with open(path) as f:
            parser.read_file(f)
    return parser


def write_default_config(path) -> None:
    with open(path, "w") as f:
        f.write(DEFAULT_CONFIG)


def rod_params_from(config) -> RodParams:
    rod = config["rod"]
    try:
        return make_params(
            L=rod.getfloat("length"),
            r=rod.getfloat("radius"),
            rho=rod.getfloat("density"),
            E=rod.getfloat("youngs_modulus"),
            nu=rod.getfloat("poisson"),
            bbt=rod.getfloat("bbt"),
            bse=rod.getfloat("bse"),
            cdrag=rod.getfloat("cdrag"),
            g=_vector(rod.get("gravity")),
            tendon_count=rod.getint("tendon_count"),
            tendon_offset=rod.getfloat("tendon_offset"),
            routing_slope=rod.getfloat("routing_slope"),
            include_self_weight=rod.getboolean("self_weight"),
            N_seg=rod.getint("segments"),
            dt=rod.getfloat("dt"),
        )
    except ValueError as exc:
        raise ConfigError(f"bad [rod] section: {exc}") from exc


def solver_config_from(config) -> SolverConfig:
    sol = config["solver"]
    try:
        return SolverConfig(
            residual_tol=sol.getfloat("residual_tol"),
            max_iters=sol.getint("max_iters"),
            fd_epsilon=sol.getfloat("fd_epsilon"),
            integrator=sol.get("integrator"),
        )
    except ValueError as exc:
        raise ConfigError(f"bad [solver] section: {exc}") from exc


def train_config_from(config, seed=None) -> TrainConfig:
    tr = config["training"]
    try:
        return TrainConfig(
            lr0=tr.getfloat("lr"),
            adam_beta1=tr.getfloat("beta1"),
            adam_beta2=tr.getfloat("beta2"),
            weight_decay=tr.getfloat("weight_decay"),
            plateau_patience=tr.getint("plateau_patience"),
            plateau_factor=tr.getfloat("plateau_factor"),
            epochs=tr.getint("epochs"),
            noise_sigma=tr.getfloat("noise_sigma"),
            seed=tr.getint("seed") if seed is None else seed,
        )
    except ValueError as exc:
        raise ConfigError(f"bad [training] section: {exc}") from exc


def schedule_from(config, tendon_count: int, dt: float):
    from . import controls_experiments as ce

    ctl = config["controls"]
    kind = ctl.get("kind")
    steps = ctl.getint("steps")
    try:
        if kind == "sine":
            return ce.sine_controls(ctl.getfloat("base"), ctl.getfloat("amplitude"),
                                    ctl.getfloat("period"), steps, dt, tendon_count)
        if kind == "step":
            tendons = [int(v) for v in ctl.get("stepped_tendons").replace(",", " ").split()]
            return ce.step_controls(ctl.getfloat("base"), ctl.getfloat("stepped"),
                                    ctl.getfloat("step_time"), tendons, steps, dt,
                                    tendon_count)
        if kind == "random":
            return ce.random_controls(ctl.getfloat("lo"), ctl.getfloat("hi"), steps,
                                      dt, tendon_count, ctl.getint("seed"))
        if kind == "constant":
            return ce.constant_controls(ctl.getfloat("base"), steps, dt, tendon_count)
    except ValueError as exc:
        raise ConfigError(f"bad [controls] section: {exc}") from exc
    raise ConfigError(f"unknown controls kind {kind!r}")


# --- trajectory CSV -----------------------------------------------------------

_STATE_COLUMNS = ["px", "py", "pz", "hw", "hx", "hy", "hz", "nx", "ny", "nz",
                  "mx", "my", "mz", "qx", "qy", "qz", "wx", "wy", "wz",
                  "vx", "vy", "vz", "ux", "uy", "uz"]


def trajectory_header(tendon_count: int):
    return ["t", "node"] + _STATE_COLUMNS + [f"tau_{i}" for i in range(tendon_count)]


def write_trajectory_csv(path, traj: Trajectory) -> None:
    """One row per (time, node); floats in round-trip precision."""
    k = traj.tau.shape[1]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(trajectory_header(k))
    for i, t in enumerate(traj.times):
        for j in range(traj.nodes):
            row = [f"{t:.17g}", str(j)]
            row += [f"{v:.17g}" for v in traj.y[i, j]]
            row += [f"{v:.17g}" for v in traj.z[i, j]]
            row += [f"{v:.17g}" for v in traj.tau[i]]
            writer.writerow(row)
    with open(path, "w", newline="") as f:
        f.write(buf.getvalue())


def read_trajectory_csv(path) -> Trajectory:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header[:2] != ["t", "node"] or header[2:27] != _STATE_COLUMNS:
            raise ValueError(f"{path}: not a trajectory CSV (bad header)")
        k = len(header) - 27
        rows = [(float(r[0]), int(r[1]), [float(v) for v in r[2:]]) for r in reader]
    if not rows:
        raise ValueError(f"{path}: empty trajectory file")
    times = sorted({t for t, _, _ in rows})
    nodes = max(j for _, j, _ in rows) + 1
    index = {t: i for i, t in enumerate(times)}
    y = np.full((len(times), nodes, Y_DIM), np.nan)
    z = np.full((len(times), nodes, Z_DIM), np.nan)
    tau = np.zeros((len(times), k))
    for t, j, vals in rows:
        i = index[t]
        y[i, j] = vals[0:Y_DIM]
        z[i, j] = vals[Y_DIM:Y_DIM + Z_DIM]
        tau[i] = vals[Y_DIM + Z_DIM:]
    if np.any(np.isnan(y)):
        raise ValueError(f"{path}: missing (t, node) rows")
    return Trajectory(times=np.array(times), y=y, z=z, tau=tau)


# --- marker CSV ---------------------------------------------------------------

MARKER_COLUMNS = ["time", "marker_index", "arclength", "px", "py", "pz",
                  "hw", "hx", "hy", "hz"]


def write_markers_csv(path, series: MarkerSeries) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(MARKER_COLUMNS)
        for i, t in enumerate(series.times):
            for mi, s in enumerate(series.arclengths):
                row = [f"{t:.17g}", str(mi), f"{s:.17g}"]
                row += [f"{v:.17g}" for v in series.positions[i, mi]]
                row += [f"{v:.17g}" for v in series.quaternions[i, mi]]
                writer.writerow(row)


def read_markers_csv(path) -> MarkerSeries:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != MARKER_COLUMNS:
            raise ValueError(f"{path}: not a marker CSV (bad header)")
        rows = [(float(r[0]), int(r[1]), [float(v) for v in r[2:]]) for r in reader]
    if not rows:
        raise ValueError(f"{path}: empty marker file")
    times = sorted({t for t, _, _ in rows})
    markers = sorted({mi for _, mi, _ in rows})
    t_index = {t: i for i, t in enumerate(times)}
    arcs = np.full(len(markers), np.nan)
    pos = np.full((len(times), len(markers), 3), np.nan)
    quat = np.full((len(times), len(markers), 4), np.nan)
    for t, mi, vals in rows:
        arcs[mi] = vals[0]
        pos[t_index[t], mi] = vals[1:4]
        quat[t_index[t], mi] = vals[4:8]
    if np.any(np.isnan(pos)):
        raise ValueError(f"{path}: missing (time, marker) rows")
    return MarkerSeries(times=np.array(times), arclengths=arcs,
                        positions=pos, quaternions=quat)
