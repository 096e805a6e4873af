"""Cosserat rod state, parameters, and the semi-discretized spatial derivative.

The rod state at one spatial node splits into

    y = [p, h, n, m, q, w]   (19 values, has both spatial and temporal dynamics)
    z = [v, u]               (6 values, algebraic in y once histories are fixed)

where p is the world-frame position, h the unit material quaternion (scalar
first), n / m the world-frame internal force / moment, q / w the local linear /
angular velocity, v the local stretch/shear, and u the local curvature.
Temporal derivatives are replaced by ``x_t = c0 * x + hx`` with the history
term hx supplied per node by the time stepper.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
import math

import numpy as np

Y_DIM = 19
Z_DIM = 6

# slices into the 19-component y vector
SL_P = slice(0, 3)
SL_H = slice(3, 7)
SL_N = slice(7, 10)
SL_M = slice(10, 13)
SL_Q = slice(13, 16)
SL_W = slice(16, 19)
# slices into the 6-component z vector
SL_V = slice(0, 3)
SL_U = slice(3, 6)

GRAVITY_DEFAULT = (0.0, 0.0, -9.81)


def hat(vec: np.ndarray) -> np.ndarray:
    """Skew-symmetric cross-product matrix: hat(a) @ b == cross(a, b)."""
    x, y, z = vec
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def quat_normalize(h: np.ndarray) -> np.ndarray:
    return h / np.linalg.norm(h)


def quat_conj(h: np.ndarray) -> np.ndarray:
    return np.array([h[0], -h[1], -h[2], -h[3]])


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product, scalar-first convention."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_to_rot(h: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """Rotation matrix of a unit quaternion (local frame -> world frame).

    Raises ValueError if ``h`` deviates from unit norm by more than ``tol``.
    """
    norm = np.linalg.norm(h)
    if abs(norm - 1.0) > tol:
        raise ValueError(f"quaternion norm {norm:.3e} deviates from 1 beyond tol {tol:.1e}")
    w, x, y, z = h / norm
    return np.array(
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    )


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate(([math.cos(half)], math.sin(half) * axis))


@dataclass(frozen=True, eq=False)
class RodParams:
    """Geometric, material, and tendon parameters with derived matrices.

    Derived fields (A, I, J, Kse, Kbt, tendon geometry) are computed by
    :func:`make_params`; construct through it rather than directly unless all
    fields are supplied consistently.
    """

    L: float                      # rod length (m)
    r: float                      # centerbone radius (m)
    rho: float                    # density (kg/m^3)
    E: float                      # Young's modulus (Pa)
    nu: float                     # Poisson ratio
    A: float                      # cross-section area (m^2)
    I: float                      # area moment (m^4)
    J: np.ndarray                 # second-moment tensor diag(I, I, 2I) (m^4)
    Kse: np.ndarray               # shear/extension stiffness (N)
    Kbt: np.ndarray               # bend/twist stiffness (N m^2)
    Bse: np.ndarray               # shear/extension damping (N s)
    Bbt: np.ndarray               # bend/twist damping (N m^2 s)
    Cdrag: np.ndarray             # square-law drag (kg/m^2)
    g: np.ndarray                 # gravity vector (m/s^2)
    vstar: np.ndarray             # reference stretch, default [0, 0, 1]
    ustar: np.ndarray             # reference curvature, default [0, 0, 0]
    tendon_count: int
    tendon_angles: np.ndarray     # rad, one per tendon
    tendon_offset: float          # radial distance of tendons (m)
    routing_slope: float          # in-plane component of tendon pull direction
    include_self_weight: bool
    N_seg: int                    # spatial segments
    dt: float                     # time step (s)
    # tendon geometry derived from angles/offset/slope, in the local frame
    tendon_inplane: np.ndarray = field(repr=False, default=None)   # (k,3) in-plane pull dirs
    tendon_moment_arm: np.ndarray = field(repr=False, default=None)  # (k,3) r_i x d_i

    @property
    def ds(self) -> float:
        """Spatial step L / N_seg (m)."""
        return self.L / self.N_seg

    @property
    def nodes(self) -> int:
        return self.N_seg + 1

    def node_arclengths(self) -> np.ndarray:
        return np.linspace(0.0, self.L, self.nodes)


def _tendon_geometry(angles: np.ndarray, offset: float, slope: float):
    """In-plane pull directions and moment arms r_i x d_i, local frame.

    d_i = ([slope*cos, slope*sin, -1]) normalized; the distributed force uses
    only its in-plane part (slope 0 => no distributed force), the distributed
    moment uses the full direction.
    """
    denom = math.sqrt(1.0 + slope * slope)
    cos_a, sin_a = np.cos(angles), np.sin(angles)
    inplane = np.stack(
        [slope * cos_a / denom, slope * sin_a / denom, np.zeros_like(angles)], axis=1
    )
    dirs = np.stack(
        [slope * cos_a / denom, slope * sin_a / denom, -np.ones_like(angles) / denom], axis=1
    )
    radii = offset * np.stack([cos_a, sin_a, np.zeros_like(angles)], axis=1)
    arms = np.cross(radii, dirs)
    return inplane, arms


def make_params(
    L: float = 0.635,
    r: float = 0.003175,
    rho: float = 1411.6751,
    E: float = 2.757903e9,
    nu: float = 0.30,
    bbt: float = 0.03,
    bse: float = 0.0,
    cdrag: float = 1e-4,
    g=GRAVITY_DEFAULT,
    vstar=(0.0, 0.0, 1.0),
    ustar=(0.0, 0.0, 0.0),
    tendon_count: int = 4,
    tendon_angles=None,
    tendon_offset: float = 0.04,
    routing_slope: float = 0.0,
    include_self_weight: bool = True,
    N_seg: int = 10,
    dt: float = 0.05,
) -> RodParams:
    """Build RodParams, deriving section and stiffness matrices from (r, E, nu).

    Scalar ``bbt``/``bse``/``cdrag`` become isotropic 3x3 matrices; arrays are
    taken as-is.
    """
    if L <= 0 or r <= 0 or rho <= 0 or E <= 0:
        raise ValueError("L, r, rho, E must be positive")
    if N_seg < 2:
        raise ValueError("N_seg must be >= 2")
    if dt <= 0:
        raise ValueError("dt must be positive")

    A = math.pi * r**2
    I = math.pi * r**4 / 4.0
    G = E / (2.0 * (1.0 + nu))
    J = np.diag([I, I, 2.0 * I])
    Kse = np.diag([G * A, G * A, E * A])
    Kbt = np.diag([E * I, E * I, G * 2.0 * I])

    def _as_mat(val):
        arr = np.asarray(val, dtype=float)
        return arr if arr.ndim == 2 else float(arr) * np.eye(3)

    Bse = _as_mat(bse)
    Bbt = _as_mat(bbt)
    Cdrag = _as_mat(cdrag)
    for name, mat in (("Bse", Bse), ("Bbt", Bbt), ("Cdrag", Cdrag)):
        if np.any(np.linalg.eigvalsh(0.5 * (mat + mat.T)) < -1e-12):
            raise ValueError(f"{name} must be positive semi-definite")

    if tendon_angles is None:
        tendon_angles = 2.0 * math.pi * np.arange(tendon_count) / tendon_count
    tendon_angles = np.asarray(tendon_angles, dtype=float)
    if len(tendon_angles) != tendon_count:
        raise ValueError("tendon_angles must have length tendon_count")

    inplane, arms = _tendon_geometry(tendon_angles, tendon_offset, routing_slope)
    return RodParams(
        L=L, r=r, rho=rho, E=E, nu=nu, A=A, I=I, J=J,
        Kse=Kse, Kbt=Kbt, Bse=Bse, Bbt=Bbt, Cdrag=Cdrag,
        g=np.asarray(g, dtype=float),
        vstar=np.asarray(vstar, dtype=float),
        ustar=np.asarray(ustar, dtype=float),
        tendon_count=tendon_count,
        tendon_angles=tendon_angles,
        tendon_offset=tendon_offset,
        routing_slope=routing_slope,
        include_self_weight=include_self_weight,
        N_seg=N_seg,
        dt=dt,
        tendon_inplane=inplane,
        tendon_moment_arm=arms,
    )


def with_changes(params: RodParams, **changes) -> RodParams:
    """New RodParams with primitive fields changed and derived fields rebuilt."""
    base = dict(
        L=params.L, r=params.r, rho=params.rho, E=params.E, nu=params.nu,
        bbt=params.Bbt, bse=params.Bse, cdrag=params.Cdrag,
        g=params.g, vstar=params.vstar, ustar=params.ustar,
        tendon_count=params.tendon_count, tendon_angles=params.tendon_angles,
        tendon_offset=params.tendon_offset, routing_slope=params.routing_slope,
        include_self_weight=params.include_self_weight,
        N_seg=params.N_seg, dt=params.dt,
    )
    base.update(changes)
    return make_params(**base)


@dataclass
class SectionState:
    """Full state of one spatial node; view onto the (y, z) array layout."""

    p: np.ndarray
    h: np.ndarray
    n: np.ndarray
    m: np.ndarray
    q: np.ndarray
    w: np.ndarray
    v: np.ndarray
    u: np.ndarray

    @classmethod
    def from_arrays(cls, y: np.ndarray, z: np.ndarray) -> "SectionState":
        return cls(
            p=y[SL_P], h=y[SL_H], n=y[SL_N], m=y[SL_M], q=y[SL_Q], w=y[SL_W],
            v=z[SL_V], u=z[SL_U],
        )

    def as_y(self) -> np.ndarray:
        return np.concatenate([self.p, self.h, self.n, self.m, self.q, self.w])

    def as_z(self) -> np.ndarray:
        return np.concatenate([self.v, self.u])

    def validate(self, quat_tol: float = 1e-9) -> None:
        if abs(np.linalg.norm(self.h) - 1.0) > quat_tol:
            raise ValueError("quaternion drifted from unit norm")
        for name in ("p", "h", "n", "m", "q", "w", "v", "u"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite component in {name}")


@lru_cache(maxsize=64)
def _constitutive_inverses(params: RodParams, c0: float):
    try:
        inv_v = np.linalg.inv(params.Kse + c0 * params.Bse)
        inv_u = np.linalg.inv(params.Kbt + c0 * params.Bbt)
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular constitutive matrix (nonphysical parameters)") from exc
    return inv_v, inv_u


def constitutive_vu(
    h: np.ndarray,
    n: np.ndarray,
    m: np.ndarray,
    hv: np.ndarray,
    hu: np.ndarray,
    params: RodParams,
    c0: float,
):
    """Strain and curvature from internal force/moment and history terms.

        v = (Kse + c0 Bse)^-1 (R^T n + Kse v* - Bse hv)
        u = (Kbt + c0 Bbt)^-1 (R^T m + Kbt u* - Bbt hu)
    """
    R = quat_to_rot(h)
    inv_v, inv_u = _constitutive_inverses(params, float(c0))
    v = inv_v @ (R.T @ n + params.Kse @ params.vstar - params.Bse @ hv)
    u = inv_u @ (R.T @ m + params.Kbt @ params.ustar - params.Bbt @ hu)
    return v, u


def tendon_loads(tau: np.ndarray, params: RodParams, R: np.ndarray):
    """Distributed tendon force and moment in the world frame.

    Force uses only the in-plane routing component (zero for routing_slope 0);
    the moment uses the full pull direction, so symmetric tensions cancel.
    """
    scale = np.asarray(tau, dtype=float) / params.L
    f = -R @ (params.tendon_inplane.T @ scale)
    l = R @ (params.tendon_moment_arm.T @ scale)
    return f, l


def cosserat_rhs(
    y: np.ndarray,
    vu: tuple,
    hist: np.ndarray,
    tau: np.ndarray,
    params: RodParams,
    c0: float,
) -> np.ndarray:
    """Spatial derivative y_s of the semi-discretized tendon-robot dynamics.

    ``vu`` is the (v, u) pair already obtained from :func:`constitutive_vu`;
    ``hist`` is the node history vector [hv, hu, hq, hw] (12 values) so that
    x_t = c0 * x + hx for x in {v, u, q, w}.
    """
    h = y[SL_H]
    n = y[SL_N]
    m = y[SL_M]
    q = y[SL_Q]
    w = y[SL_W]
    v, u = vu
    hv, hu, hq, hw = hist[0:3], hist[3:6], hist[6:9], hist[9:12]

    R = quat_to_rot(h)
    v_t = c0 * v + hv
    u_t = c0 * u + hu
    q_t = c0 * q + hq
    w_t = c0 * w + hw

    f_t, l_t = tendon_loads(tau, params, R)

    p_s = R @ v
    h_s = 0.5 * quat_mul(h, np.concatenate(([0.0], u)))
    n_s = R @ (params.rho * params.A * (np.cross(w, q) + q_t) + params.Cdrag @ (q * np.abs(q)))
    if params.include_self_weight:
        n_s = n_s - params.rho * params.A * params.g
    n_s = n_s - f_t
    m_s = (
        params.rho * (R @ (np.cross(w, params.J @ w) + params.J @ w_t))
        - np.cross(p_s, n)
        - l_t
    )
    q_s = v_t - np.cross(u, q) + np.cross(w, v)
    w_s = u_t - np.cross(u, w)

    out = np.empty(Y_DIM)
    out[SL_P] = p_s
    out[SL_H] = h_s
    out[SL_N] = n_s
    out[SL_M] = m_s
    out[SL_Q] = q_s
    out[SL_W] = w_s
    return out
