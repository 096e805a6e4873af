"""Hybrid dynamics: a residual network on the spatial derivative, plus training.

The learned model adds a two-layer ELU network to the knowledge model's output
channels [p_s, h_s, n_s, m_s, q_s, w_s, v, u] (25 values).  Inputs are the node
state y (19), z (6), and the tensions (and optionally the four history terms,
12 more).  Training fits one-step spatial predictions: from each observed node
state, a single explicit Euler step of the hybrid derivative is compared
against the observed next node, and the corrected constitutive output against
the observed z.  The prediction is affine in the network output except for the
quaternion renormalization, which the gradient treats exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import bvp_shooting, rod_model
from .rod_model import SL_H, SL_M, SL_N, Y_DIM, Z_DIM, RodParams
from .timestepper import scheme_for_step, update_history

D_OUT = 25                      # p_s 3, h_s 4, n_s 3, m_s 3, q_s 3, w_s 3, v 3, u 3
HIST_DIM = 12                   # hv, hu, hq, hw
CHECKPOINT_MAGIC = "KNODE-MLP v1"


class TrainingDivergedError(RuntimeError):
    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch


@dataclass
class TrainConfig:
    lr0: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0       # 0.1 in real-data mode
    plateau_patience: int = 80
    plateau_factor: float = 0.5
    plateau_threshold: float = 1e-4   # relative improvement below this is a plateau
    epochs: int = 500
    noise_sigma: float = 0.0        # 0.01 in real-data mode (stabilization noise)
    seed: int = 0
    spatial_subset: Optional[Sequence[int]] = None  # default: all interior nodes

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if not 0.0 <= self.plateau_factor < 1.0:
            raise ValueError("plateau_factor must be in [0, 1)")


def elu(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0.0, x, np.expm1(x))


def elu_prime(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0.0, 1.0, np.exp(np.minimum(x, 0.0)))


@dataclass
class MlpModel:
    """Two-layer residual network W2 elu(W1 x + b1) + b2 with optional clamp.

    With ``convexity_clamp`` on, both weight matrices are projected to be
    entrywise non-negative after every training epoch (biases are free), which
    together with the convex non-decreasing ELU keeps the network convex.
    """

    w1: np.ndarray   # (d_hidden, d_in)
    b1: np.ndarray   # (d_hidden,)
    w2: np.ndarray   # (d_out, d_hidden)
    b2: np.ndarray   # (d_out,)
    convexity_clamp: bool = True

    @property
    def d_in(self) -> int:
        return self.w1.shape[1]

    @property
    def d_hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def d_out(self) -> int:
        return self.w2.shape[0]

    @classmethod
    def initialize(
        cls,
        d_in: int,
        d_hidden: int = 512,
        d_out: int = D_OUT,
        convexity_clamp: bool = True,
        rng: Optional[np.random.Generator] = None,
        control_count: Optional[int] = None,
    ) -> "MlpModel":
        """Uniform [0, 1/sqrt(d_in)] hidden weights when clamped (so the
        constraint holds from the start), symmetric uniform otherwise.  The
        output layer and biases start at zero, so the untrained hybrid model
        coincides with the knowledge model.

        With ``control_count`` given, the hidden weights on the tension
        inputs also start at zero: the quarter-phase training sines keep the
        tension sum constant, so that direction is unidentifiable from data,
        and a nonzero start there is never corrected and bleeds into
        evaluations at other tension levels.  Gradients regrow control
        weights wherever the data does identify them."""
        rng = rng or np.random.default_rng()
        s1 = 1.0 / np.sqrt(d_in)
        if convexity_clamp:
            w1 = rng.uniform(0.0, s1, size=(d_hidden, d_in))
        else:
            w1 = rng.uniform(-s1, s1, size=(d_hidden, d_in))
        if control_count is not None:
            w1[:, Y_DIM + Z_DIM:Y_DIM + Z_DIM + control_count] = 0.0
        return cls(w1=w1, b1=np.zeros(d_hidden),
                   w2=np.zeros((d_out, d_hidden)), b2=np.zeros(d_out),
                   convexity_clamp=convexity_clamp)

    @classmethod
    def zero(cls, d_in: int, d_hidden: int = 512, d_out: int = D_OUT,
             convexity_clamp: bool = True) -> "MlpModel":
        return cls(w1=np.zeros((d_hidden, d_in)), b1=np.zeros(d_hidden),
                   w2=np.zeros((d_out, d_hidden)), b2=np.zeros(d_out),
                   convexity_clamp=convexity_clamp)

    def copy(self) -> "MlpModel":
        return MlpModel(w1=self.w1.copy(), b1=self.b1.copy(),
                        w2=self.w2.copy(), b2=self.b2.copy(),
                        convexity_clamp=self.convexity_clamp)

    def uses_history(self, tendon_count: int) -> bool:
        base = Y_DIM + Z_DIM + tendon_count
        if self.d_in == base:
            return False
        if self.d_in == base + HIST_DIM:
            return True
        raise ValueError(
            f"model d_in {self.d_in} matches neither {base} (state inputs) nor "
            f"{base + HIST_DIM} (state plus history inputs)"
        )

    def features(self, y_node: np.ndarray, z_node: np.ndarray,
                 tau: np.ndarray, hist_node: np.ndarray) -> np.ndarray:
        if self.uses_history(len(tau)):
            return np.concatenate([y_node, z_node, tau, hist_node])
        return np.concatenate([y_node, z_node, tau])

    def forward(self, x: np.ndarray) -> np.ndarray:
        return mlp_forward(x, self)

    correction_passes: int = 12

    def correct(self, y_node, z_knowledge, hist_node, tau, c0):
        """Residual correction for one node during rollout.

        Training fits the residual at inputs whose z slot holds the observed
        (true) z, so evaluation solves the fixed point z = z_k + f_z(y, z, ...)
        by iteration; the fixed point reproduces the training relation.  A
        zero model exits after one pass with z unchanged.  Returns
        (corrected z, y_s residual at the converged features).
        """
        z = z_knowledge
        res = self.forward(self.features(y_node, z, tau, hist_node))
        for _ in range(self.correction_passes):
            z_new = z_knowledge + res[Y_DIM:]
            if np.max(np.abs(z_new - z)) <= 1e-12:
                z = z_new
                break
            z = z_new
            res = self.forward(self.features(y_node, z, tau, hist_node))
        return z, res[:Y_DIM]


def mlp_forward(x: np.ndarray, model: MlpModel) -> np.ndarray:
    """W2 elu(W1 x + b1) + b2 for a single input or a (B, d_in) batch."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.d_in:
        raise ValueError(f"input dimension {x.shape[-1]} != model d_in {model.d_in}")
    if x.ndim == 1:
        return model.w2 @ elu(model.w1 @ x + model.b1) + model.b2
    return elu(x @ model.w1.T + model.b1) @ model.w2.T + model.b2


def hybrid_rhs(y_node, hist_node, tau, params: RodParams, scheme, model: MlpModel):
    """(y_s, z) of the knowledge model plus the learned residual at one node."""
    c0 = getattr(scheme, "c0", scheme)
    return bvp_shooting.node_derivative(y_node, hist_node, tau, params, c0,
                                        residual_model=model)


def _norm_h(y_pred: np.ndarray) -> np.ndarray:
    out = y_pred.copy()
    hq = out[..., SL_H]
    out[..., SL_H] = hq / np.linalg.norm(hq, axis=-1, keepdims=True)
    return out


def one_step_predict(y_obs, z_obs, hist, tau, params: RodParams, scheme,
                     model: Optional[MlpModel] = None):
    """Single-segment spatial predictions from observed node states.

    For n = 1..N_seg: y at node n is predicted by one explicit Euler step of
    the hybrid derivative evaluated at the observed state of node n-1 (with
    the quaternion renormalized, matching the integrator), and z at node n by
    the constitutive relation at the observed node n plus its residual
    channels.  Returns (y_pred, z_pred), each with N_seg rows for nodes 1..N.
    """
    c0 = getattr(scheme, "c0", scheme)
    ds = params.ds
    hmat = hist.as_matrix()
    n_seg = params.N_seg
    y_pred = np.empty((n_seg, Y_DIM))
    z_pred = np.empty((n_seg, Z_DIM))
    for n in range(1, n_seg + 1):
        j = n - 1
        ys = rod_model.cosserat_rhs(y_obs[j], (z_obs[j, 0:3], z_obs[j, 3:6]),
                                    hmat[j], tau, params, c0)
        v_k, u_k = rod_model.constitutive_vu(
            y_obs[n, SL_H], y_obs[n, SL_N], y_obs[n, SL_M],
            hmat[n, 0:3], hmat[n, 3:6], params, c0)
        z_k = np.concatenate([v_k, u_k])
        if model is not None:
            res_y = model.forward(model.features(y_obs[j], z_obs[j], tau, hmat[j]))[:Y_DIM]
            res_z = model.forward(model.features(y_obs[n], z_obs[n], tau, hmat[n]))[Y_DIM:]
            ys = ys + res_y
            z_k = z_k + res_z
        y_pred[j] = _norm_h(y_obs[j] + ds * ys)
        z_pred[j] = z_k
    return y_pred, z_pred


@dataclass
class _Batch:
    """Precomputed knowledge-model parts of the one-step training problem."""

    x_y: np.ndarray        # (K, d_in) inputs for the y-step residual
    base_y: np.ndarray     # (K, 19) observed node + ds * knowledge derivative
    target_y: np.ndarray   # (K, 19) observed next node
    x_z: np.ndarray        # (K, d_in) inputs for the z residual
    base_z: np.ndarray     # (K, 6) knowledge constitutive output
    target_z: np.ndarray   # (K, 6) observed z
    count: int


def _assemble_batch(dataset, params: RodParams, model: MlpModel,
                    spatial_subset=None) -> _Batch:
    if not dataset:
        raise ValueError("empty training dataset")
    subset = list(spatial_subset) if spatial_subset is not None \
        else list(range(1, params.N_seg + 1))
    ds = params.ds
    xs_y, bases_y, targets_y = [], [], []
    xs_z, bases_z, targets_z = [], [], []
    for traj in dataset:
        y, z, tau = traj.y, traj.z, traj.tau
        if y.shape[1] != params.nodes:
            raise ValueError("trajectory node count does not match parameters")
        for t in range(1, traj.steps + 1):
            scheme = scheme_for_step(t, params.dt)
            lag2 = (y[t - 2], z[t - 2]) if t >= 2 else None
            hist = update_history((y[t - 1], z[t - 1]), lag2, scheme)
            hmat = hist.as_matrix()
            for n in subset:
                j = n - 1
                ys_k = rod_model.cosserat_rhs(
                    y[t, j], (z[t, j, 0:3], z[t, j, 3:6]), hmat[j], tau[t],
                    params, scheme.c0)
                xs_y.append(model.features(y[t, j], z[t, j], tau[t], hmat[j]))
                bases_y.append(y[t, j] + ds * ys_k)
                targets_y.append(y[t, n])

                v_k, u_k = rod_model.constitutive_vu(
                    y[t, n, SL_H], y[t, n, SL_N], y[t, n, SL_M],
                    hmat[n, 0:3], hmat[n, 3:6], params, scheme.c0)
                xs_z.append(model.features(y[t, n], z[t, n], tau[t], hmat[n]))
                bases_z.append(np.concatenate([v_k, u_k]))
                targets_z.append(z[t, n])
    return _Batch(
        x_y=np.asarray(xs_y), base_y=np.asarray(bases_y),
        target_y=np.asarray(targets_y),
        x_z=np.asarray(xs_z), base_z=np.asarray(bases_z),
        target_z=np.asarray(targets_z),
        count=len(xs_y),
    )


def _forward_cached(model: MlpModel, x: np.ndarray):
    pre = x @ model.w1.T + model.b1
    act = elu(pre)
    return act @ model.w2.T + model.b2, pre, act


def _loss_and_grad_on_batch(model: MlpModel, batch: _Batch, cfg: TrainConfig,
                            params: RodParams, want_grad: bool):
    ds = params.ds
    k = batch.count

    out_y, pre_y, act_y = _forward_cached(model, batch.x_y)
    pred = batch.base_y + ds * out_y[:, :Y_DIM]
    hq = pred[:, SL_H]
    norms = np.linalg.norm(hq, axis=1, keepdims=True)
    unit = hq / norms
    pred_n = pred.copy()
    pred_n[:, SL_H] = unit
    err_y = pred_n - batch.target_y

    out_z, pre_z, act_z = _forward_cached(model, batch.x_z)
    err_z = batch.base_z + out_z[:, Y_DIM:] - batch.target_z

    loss = (np.sum(err_y * err_y) + np.sum(err_z * err_z)) / k
    loss += cfg.weight_decay * (np.sum(model.w1 * model.w1) + np.sum(model.w2 * model.w2))
    if not want_grad:
        return float(loss), None

    # d loss / d network output, with the exact quaternion-normalization
    # Jacobian (I - u u^T)/|hq| applied on the h block
    g_out_y = np.zeros_like(out_y)
    g_pred = (2.0 / k) * err_y
    g_hq = (g_pred[:, SL_H] - np.sum(g_pred[:, SL_H] * unit, axis=1, keepdims=True) * unit) / norms
    g_pred = g_pred.copy()
    g_pred[:, SL_H] = g_hq
    g_out_y[:, :Y_DIM] = ds * g_pred

    g_out_z = np.zeros_like(out_z)
    g_out_z[:, Y_DIM:] = (2.0 / k) * err_z

    def backward(g_out, x, pre, act):
        gw2 = g_out.T @ act
        gb2 = g_out.sum(axis=0)
        g_act = g_out @ model.w2
        g_pre = g_act * elu_prime(pre)
        gw1 = g_pre.T @ x
        gb1 = g_pre.sum(axis=0)
        return gw1, gb1, gw2, gb2

    gw1a, gb1a, gw2a, gb2a = backward(g_out_y, batch.x_y, pre_y, act_y)
    gw1b, gb1b, gw2b, gb2b = backward(g_out_z, batch.x_z, pre_z, act_z)
    grad = {
        "w1": gw1a + gw1b + 2.0 * cfg.weight_decay * model.w1,
        "b1": gb1a + gb1b,
        "w2": gw2a + gw2b + 2.0 * cfg.weight_decay * model.w2,
        "b2": gb2a + gb2b,
    }
    return float(loss), grad


def loss(model: MlpModel, dataset, params: RodParams, cfg: TrainConfig) -> float:
    """Mean one-step prediction error over nodes and times, plus weight decay."""
    batch = _assemble_batch(dataset, params, model, cfg.spatial_subset)
    value, _ = _loss_and_grad_on_batch(model, batch, cfg, params, want_grad=False)
    return value


def grad_loss(model: MlpModel, dataset, params: RodParams, cfg: TrainConfig) -> dict:
    """Exact reverse-mode gradient of :func:`loss` w.r.t. w1, b1, w2, b2."""
    batch = _assemble_batch(dataset, params, model, cfg.spatial_subset)
    _, grad = _loss_and_grad_on_batch(model, batch, cfg, params, want_grad=True)
    return grad


def _noisy_dataset(dataset, sigma: float, rng: np.random.Generator):
    """Fresh stabilization noise on the trajectory states (quaternions are
    renormalized so orientation stays valid)."""
    out = []
    for traj in dataset:
        y = traj.y + rng.normal(0.0, sigma, size=traj.y.shape)
        hq = y[:, :, SL_H]
        y[:, :, SL_H] = hq / np.linalg.norm(hq, axis=-1, keepdims=True)
        z = traj.z + rng.normal(0.0, sigma, size=traj.z.shape)
        out.append(bvp_shooting.Trajectory(times=traj.times, y=y, z=z, tau=traj.tau))
    return out


def train(model: MlpModel, dataset, params: RodParams, cfg: TrainConfig):
    """Adam training with per-epoch weight clamping and plateau LR scheduling.

    Returns (trained model, loss history of length cfg.epochs).  The input
    model is not modified.
    """
    model = model.copy()
    rng = np.random.default_rng(cfg.seed)
    clean_batch = None
    if cfg.noise_sigma == 0.0:
        clean_batch = _assemble_batch(dataset, params, model, cfg.spatial_subset)

    names = ("w1", "b1", "w2", "b2")
    adam_m = {k: np.zeros_like(getattr(model, k)) for k in names}
    adam_v = {k: np.zeros_like(getattr(model, k)) for k in names}
    lr = cfg.lr0
    best = np.inf
    bad_epochs = 0
    history = []

    for epoch in range(cfg.epochs):
        if clean_batch is not None:
            batch = clean_batch
        else:
            noisy = _noisy_dataset(dataset, cfg.noise_sigma, rng)
            batch = _assemble_batch(noisy, params, model, cfg.spatial_subset)

        value, grad = _loss_and_grad_on_batch(model, batch, cfg, params, want_grad=True)
        if not np.isfinite(value):
            raise TrainingDivergedError(f"non-finite loss at epoch {epoch}", epoch)
        history.append(value)

        t = epoch + 1
        corr1 = 1.0 - cfg.adam_beta1**t
        corr2 = 1.0 - cfg.adam_beta2**t
        for k in names:
            g = grad[k]
            adam_m[k] = cfg.adam_beta1 * adam_m[k] + (1.0 - cfg.adam_beta1) * g
            adam_v[k] = cfg.adam_beta2 * adam_v[k] + (1.0 - cfg.adam_beta2) * g * g
            step = lr * (adam_m[k] / corr1) / (np.sqrt(adam_v[k] / corr2) + cfg.adam_eps)
            setattr(model, k, getattr(model, k) - step)

        if model.convexity_clamp:
            np.maximum(model.w1, 0.0, out=model.w1)
            np.maximum(model.w2, 0.0, out=model.w2)

        if value < best * (1.0 - cfg.plateau_threshold):
            best = value
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > cfg.plateau_patience:
                lr *= cfg.plateau_factor
                bad_epochs = 0

    return model, history


def save_model(path, model: MlpModel) -> None:
    """Checkpoint: ASCII header line, then w1, w2, b1, b2 as little-endian
    float64, row-major."""
    header = (f"{CHECKPOINT_MAGIC} {model.d_in} {model.d_hidden} {model.d_out} "
              f"{int(model.convexity_clamp)}\n")
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        for arr in (model.w1, model.w2, model.b1, model.b2):
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path) -> MlpModel:
    with open(path, "rb") as f:
        header = f.readline().decode("ascii").strip()
        fields = header.split()
        if " ".join(fields[:2]) != CHECKPOINT_MAGIC or len(fields) != 6:
            raise ValueError(f"not a {CHECKPOINT_MAGIC} checkpoint: {header!r}")
        d_in, d_hidden, d_out, clamp = (int(v) for v in fields[2:])
        blob = np.frombuffer(f.read(), dtype="<f8")
    expected = d_hidden * d_in + d_out * d_hidden + d_hidden + d_out
    if blob.size != expected:
        raise ValueError(f"checkpoint payload has {blob.size} values, expected {expected}")
    ofs = 0

    def take(shape):
        nonlocal ofs
        size = int(np.prod(shape))
        arr = blob[ofs:ofs + size].reshape(shape).copy()
        ofs += size
        return arr

    return MlpModel(
        w1=take((d_hidden, d_in)),
        w2=take((d_out, d_hidden)),
        b1=take((d_hidden,)),
        b2=take((d_out,)),
        convexity_clamp=bool(clamp),
    )
