"""Reduced linear model of the rig for estimation and control.

The 25-state plant collapses to 13 states by lumping each supply line with
its chip channel (series resistances and inertias add), assuming the
reservoirs follow their regulators instantly, and dropping the sensor lag:

    index 0..2   q        flow in each merged line, m^3/s
    index 3      q_out    outlet flow
    index 4      p_m      junction pressure, Pa
    index 5..7   line-1 regulator chain (P, P', P'')
    index 8..9   line-2 regulator chain (P, P')
    index 10..12 line-3 regulator chain (P, P', P'')

Measured outputs are the three line flows.  The continuous model is
discretised exactly under a zero-order hold, and an extended form over
(state increment, output) embeds integral action for offset-free MPC.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .params import coefficients, Coefficients

NXM = 13
NU = 3
NY = 3

STATE_LABELS = (
    "q1",
    "q2",
    "q3",
    "q_out",
    "p_m",
    "p1_reg",
    "p1_reg_d",
    "p1_reg_dd",
    "p2_reg",
    "p2_reg_d",
    "p3_reg",
    "p3_reg_d",
    "p3_reg_dd",
)


@dataclass(frozen=True)
class ContinuousModel:
    """x' = A x + B u, y = H x."""

    A: np.ndarray
    B: np.ndarray
    H: np.ndarray

    def __post_init__(self):
        if self.A.shape != (NXM, NXM) or self.B.shape != (NXM, NU) or self.H.shape != (NY, NXM):
            raise ValueError("model matrices have the wrong shape")
        for m in (self.A, self.B, self.H):
            if not np.all(np.isfinite(m)):
                raise ValueError("model matrices must be finite")


@dataclass(frozen=True)
class DiscreteModel:
    """x(k+1) = F x(k) + G u(k), y = H x, at fixed sample period T."""

    F: np.ndarray
    G: np.ndarray
    H: np.ndarray
    T: float

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError("sample period must be positive")
        for m in (self.F, self.G, self.H):
            if not np.all(np.isfinite(m)):
                raise ValueError("model matrices must be finite")


@dataclass(frozen=True)
class ExtendedModel:
    """Incremental model over [delta x_m; y] used by the MPC.

    x_e(k+1) = F x_e(k) + G delta_u(k), y(k) = H x_e(k), with the output
    rows carried along as pure discrete integrators of the flow increments.
    """

    F: np.ndarray
    G: np.ndarray
    H: np.ndarray


def build_continuous(params):
    """Assemble the 13-state model from rig parameters.

    Each merged line uses the series totals R_i = r_chip_i + r_line_i and
    I_i = i_chip_i + i_line_i; the junction keeps the plant's chamber
    compressibility; the regulator chains carry over unchanged.
    """
    c = params if isinstance(params, Coefficients) else coefficients(params)
    a = np.zeros((NXM, NXM))
    b = np.zeros((NXM, NU))
    r_tot = c.r_chip + c.r_line
    i_tot = c.i_chip + c.i_line
    reg_p = (5, 8, 10)  # first index of each regulator chain
    for i in range(3):
        a[i, i] = -r_tot[i] / i_tot[i]
        a[i, 4] = -1.0 / i_tot[i]
        a[i, reg_p[i]] = 1.0 / i_tot[i]
    a[3, 4] = 1.0 / c.i_out
    a[3, 3] = -c.r_out / c.i_out
    a[4, 0:3] = 1.0 / c.c_chip
    a[4, 3] = -1.0 / c.c_chip
    # line 1 regulator: third order
    a[5, 6] = 1.0
    a[6, 7] = 1.0
    a[7, 5] = -1.0 / c.a3
    a[7, 6] = -c.a1 / c.a3
    a[7, 7] = -c.a2 / c.a3
    b[7, 0] = 1.0 / c.a3
    # line 2 regulator: second order
    a[8, 9] = 1.0
    a[9, 8] = -1.0 / c.b2
    a[9, 9] = -c.b1 / c.b2
    b[9, 1] = 1.0 / c.b2
    # line 3 regulator: third order
    a[10, 11] = 1.0
    a[11, 12] = 1.0
    a[12, 10] = -1.0 / c.c3
    a[12, 11] = -c.c1 / c.c3
    a[12, 12] = -c.c2 / c.c3
    b[12, 2] = 1.0 / c.c3
    h = np.zeros((NY, NXM))
    h[0, 0] = h[1, 1] = h[2, 2] = 1.0
    return ContinuousModel(A=a, B=b, H=h)


def dc_gain(model):
    """Steady-state flow response -H A^-1 B to constant setpoints."""
    return -model.H @ np.linalg.solve(model.A, model.B)


def discretize_zoh(model, T):
    """Exact zero-order-hold discretisation at sample period T.

    Embeds (A, B) in one augmented matrix and exponentiates:

        expm([[A, B], [0, 0]] * T) = [[F, G], [0, I]]
    """
    if T <= 0:
        raise ValueError("sample period must be positive")
    n, m = model.B.shape
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = model.A
    aug[:n, n:] = model.B
    phi = expm(aug * T)
    return DiscreteModel(F=phi[:n, :n], G=phi[:n, n:], H=model.H.copy(), T=T)


def build_extended(model):
    """Extended incremental model over [delta x_m; y].

    F = [[F_m, 0], [H F_m, I]],  G = [[G_m], [H G_m]],  H = [0, I].
    The output rows accumulate flow increments, so constant references are
    tracked without offset as long as the loop is stable.
    """
    fm, gm, hm = model.F, model.G, model.H
    n = fm.shape[0]
    p = hm.shape[0]
    m = gm.shape[1]
    f = np.zeros((n + p, n + p))
    f[:n, :n] = fm
    f[n:, :n] = hm @ fm
    f[n:, n:] = np.eye(p)
    g = np.vstack([gm, hm @ gm])
    h = np.hstack([np.zeros((p, n)), np.eye(p)])
    return ExtendedModel(F=f, G=g, H=h)
