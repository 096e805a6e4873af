"""Backward-differentiation time semi-discretization: coefficients and history terms.

Each time step replaces temporal derivatives with ``x_t = c0 * x + hx`` where
hx collects the lagged states.  Order 2 (the default after startup) uses

    c0 = 1.5 / dt,  c1 = -2 / dt,  c2 = 0.5 / dt

so hx = c1 * x(t-1) + c2 * x(t-2).  The first step of a rollout runs order 1
(implicit Euler) because only the initial state exists.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .rod_model import SL_Q, SL_U, SL_V, SL_W


def bdf2_coeffs(dt: float):
    """(c0, c1, c2) for the second-order scheme."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return 1.5 / dt, -2.0 / dt, 0.5 / dt


def bdf1_coeffs(dt: float):
    """(c0, c1) for the first-order (implicit Euler) scheme."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return 1.0 / dt, -1.0 / dt


@dataclass(frozen=True)
class BdfScheme:
    order: int
    dt: float
    c0: float
    c1: float
    c2: float

    def __post_init__(self):
        if self.order not in (1, 2):
            raise ValueError("only BDF orders 1 and 2 are supported")


def make_scheme(order: int, dt: float) -> BdfScheme:
    if order == 1:
        c0, c1 = bdf1_coeffs(dt)
        return BdfScheme(order=1, dt=dt, c0=c0, c1=c1, c2=0.0)
    c0, c1, c2 = bdf2_coeffs(dt)
    return BdfScheme(order=2, dt=dt, c0=c0, c1=c1, c2=c2)


def scheme_for_step(step_index: int, dt: float) -> BdfScheme:
    """Startup rule: step 1 runs order 1, steps >= 2 run order 2."""
    if step_index < 1:
        raise ValueError("step_index is 1-based")
    return make_scheme(1 if step_index == 1 else 2, dt)


STATIC_SCHEME = BdfScheme(order=1, dt=np.inf, c0=0.0, c1=0.0, c2=0.0)
"""Degenerate scheme for statics: all temporal derivatives vanish."""


@dataclass
class HistoryBuffer:
    """Per-node history terms hv, hu, hq, hw plus the lagged snapshots."""

    hv: np.ndarray  # (nodes, 3)
    hu: np.ndarray
    hq: np.ndarray
    hw: np.ndarray
    lag1: Optional[tuple] = None  # (y, z) arrays at t-1
    lag2: Optional[tuple] = None  # (y, z) arrays at t-2

    @property
    def nodes(self) -> int:
        return self.hv.shape[0]

    def node(self, j: int) -> np.ndarray:
        """History vector [hv, hu, hq, hw] (12,) for node j."""
        return np.concatenate([self.hv[j], self.hu[j], self.hq[j], self.hw[j]])

    def as_matrix(self) -> np.ndarray:
        """(nodes, 12) layout matching :meth:`node`."""
        return np.concatenate([self.hv, self.hu, self.hq, self.hw], axis=1)


def zero_history(nodes: int) -> HistoryBuffer:
    z = np.zeros((nodes, 3))
    return HistoryBuffer(hv=z.copy(), hu=z.copy(), hq=z.copy(), hw=z.copy())


def update_history(lag1, lag2, scheme: BdfScheme) -> HistoryBuffer:
    """Assemble history terms from the one- and two-step-lagged snapshots.

    ``lag1``/``lag2`` are (y, z) array pairs with y shaped (nodes, 19) and z
    (nodes, 6).  Order 1 ignores lag2; order 2 requires it.
    """
    y1, z1 = lag1
    if scheme.order == 2:
        if lag2 is None:
            raise ValueError("order-2 scheme requires the t-2 snapshot")
        y2, z2 = lag2
        hv = scheme.c1 * z1[:, SL_V] + scheme.c2 * z2[:, SL_V]
        hu = scheme.c1 * z1[:, SL_U] + scheme.c2 * z2[:, SL_U]
        hq = scheme.c1 * y1[:, SL_Q] + scheme.c2 * y2[:, SL_Q]
        hw = scheme.c1 * y1[:, SL_W] + scheme.c2 * y2[:, SL_W]
    else:
        hv = scheme.c1 * z1[:, SL_V]
        hu = scheme.c1 * z1[:, SL_U]
        hq = scheme.c1 * y1[:, SL_Q]
        hw = scheme.c1 * y1[:, SL_W]
    return HistoryBuffer(hv=hv, hu=hu, hq=hq, hw=hw, lag1=lag1, lag2=lag2)
