"""Constrained receding-horizon controller on the extended model.

Each period the controller assembles the extended state from the estimate
increment and the latest measurement, predicts the next N outputs as an
affine map of the future input increments, and minimises

    J = (Y - Y_d)' W_y (Y - Y_d) + dU' W_u dU,   W_y = I,  W_u = alpha * I

subject to absolute-input, increment and output bounds, all expressed as a
polytope in the stacked increments dU.  Only the first increment is
applied.  Because the model is incremental, each output carries an
implicit integrator and constant references are tracked without offset.

Inside the cost the predicted flows are expressed in ul/s (``flow_scale``)
while inputs stay in Pa; with those units ``alpha`` around 1e-7 trades
response time against overshoot in the useful range.

The QP is handed to :mod:`.qpsolve`; an infeasible step falls back to
holding the previous action and flags it, and the applied action is always
re-clamped to the hard bounds so saturation survives solver trouble.
"""

from dataclasses import dataclass, field

import numpy as np

from .linmodel import DiscreteModel, build_extended
from .qpsolve import QpProblem, STATUS_OPTIMAL, solve

#: raised per-step instead of solving when the QP reports infeasibility
STATUS_HELD = "held"


@dataclass(frozen=True)
class MpcConfig:
    """Controller tuning and bounds.

    horizon          prediction/control horizon N, steps
    sample_period    controller period T, s
    alpha            weight on input increments (flows costed in ul/s)
    u_min, u_max     absolute setpoint bounds, Pa (scalar or per line)
    du_max_rate      slew bound, Pa/s; the per-step bound is rate * T
    y_min, y_max     predicted-flow bounds, m^3/s (scalar or per line)
    soft_outputs     turn output bounds into slack-penalised soft ones
    slack_weight     quadratic weight on those slacks
    flow_scale       predicted-flow scaling used inside the cost (per m^3/s)
    """

    horizon: int = 10
    sample_period: float = 0.1
    alpha: float = 1e-7
    u_min: float | np.ndarray = 0.0
    u_max: float | np.ndarray = 150_000.0
    du_max_rate: float | np.ndarray = 100_000.0
    y_min: float | np.ndarray = 0.0
    y_max: float | np.ndarray = np.inf
    soft_outputs: bool = False
    slack_weight: float = 1e6
    flow_scale: float = 1e9

    def __post_init__(self):
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ValueError("horizon must be an integer >= 1")
        if self.sample_period <= 0:
            raise ValueError("sample_period must be positive")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.slack_weight <= 0 or self.flow_scale <= 0:
            raise ValueError("slack_weight and flow_scale must be positive")
        if np.any(np.asarray(self.u_min) > np.asarray(self.u_max)):
            raise ValueError("u_min must not exceed u_max")
        if np.any(np.asarray(self.y_min) > np.asarray(self.y_max)):
            raise ValueError("y_min must not exceed y_max")
        if np.any(np.asarray(self.du_max_rate) <= 0):
            raise ValueError("du_max_rate must be positive")

    @property
    def du_bound(self):
        """Per-step increment bound, Pa."""
        return np.asarray(self.du_max_rate, dtype=float) * self.sample_period


@dataclass(frozen=True)
class PredictionMatrices:
    """Y = psi x + phi dU over the horizon (stacked in block rows)."""

    psi: np.ndarray
    phi: np.ndarray
    n_outputs: int
    n_inputs: int
    horizon: int


def build_prediction(ext, horizon):
    """Stack the horizon-step output predictor of the extended model.

    Row block k (k = 1..N) of psi is H F^k; block (i, j) of phi is
    H F^(i-j) G for i >= j, so the diagonal blocks are all H G and phi is
    block-Toeplitz lower triangular.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    f, g, h = ext.F, ext.G, ext.H
    p, n = h.shape
    m = g.shape[1]
    # h_pow[k] = H F^k
    h_pow = [h]
    for _ in range(horizon):
        h_pow.append(h_pow[-1] @ f)
    psi = np.vstack([h_pow[k] for k in range(1, horizon + 1)])
    # impulse blocks H F^k G, k = 0..N-1
    impulse = [h_pow[k] @ g for k in range(horizon)]
    phi = np.zeros((p * horizon, m * horizon))
    for i in range(horizon):
        for j in range(i + 1):
            phi[i * p:(i + 1) * p, j * m:(j + 1) * m] = impulse[i - j]
    return PredictionMatrices(psi=psi, phi=phi, n_outputs=p, n_inputs=m, horizon=horizon)


def build_cost(pred, x, y_ref, alpha):
    """Quadratic cost in the stacked increments.

    Returns (E, f) with E = 2 (phi' phi + alpha I) and
    f = 2 phi' (psi x - Y_d), so that 1/2 dU'E dU + f'dU equals the
    tracking-plus-increment cost up to a dU-independent constant.
    ``y_ref`` is the stacked reference in the same units as the
    prediction rows.
    """
    phi = pred.phi
    err = pred.psi @ np.asarray(x, dtype=float) - np.asarray(y_ref, dtype=float)
    e = 2.0 * (phi.T @ phi + alpha * np.eye(phi.shape[1]))
    f = 2.0 * (phi.T @ err)
    return e, f


def _stack(value, width, horizon):
    """Broadcast a scalar or per-line bound to the stacked horizon vector."""
    row = np.broadcast_to(np.asarray(value, dtype=float), (width,))
    return np.tile(row, horizon)


def build_constraints(u_prev, x, pred, cfg):
    """Polytope M dU <= gamma over the stacked increments.

    Six blocks, in order: lower/upper absolute-input bounds (through the
    prefix-sum matrices C1, C2 with U = C1 u_prev + C2 dU), lower/upper
    increment bounds, lower/upper predicted-output bounds:

        M = [-C2; C2; -I; I; -phi; phi]
        gamma = [-U_min + C1 u_prev;  U_max - C1 u_prev;
                 dU_bound;            dU_bound;
                 -Y_min + psi x;      Y_max - psi x]

    Output bounds follow the prediction's flow units (``cfg.flow_scale``
    times the m^3/s bounds).  Rows whose bound is infinite stay in place
    so the polytope shape is the same every step.
    """
    n = pred.horizon
    m = pred.n_inputs
    p = pred.n_outputs
    u_prev = np.broadcast_to(np.asarray(u_prev, dtype=float), (m,))
    eye_m = np.eye(m)
    c1 = np.tile(eye_m, (n, 1))
    c2 = np.kron(np.tril(np.ones((n, n))), eye_m)
    ident = np.eye(n * m)
    psi_x = pred.psi @ np.asarray(x, dtype=float)

    u_min = _stack(cfg.u_min, m, n)
    u_max = _stack(cfg.u_max, m, n)
    du = _stack(cfg.du_bound, m, n)
    y_min = _stack(cfg.y_min, p, n) * cfg.flow_scale
    y_max = _stack(cfg.y_max, p, n) * cfg.flow_scale
    c1u = c1 @ u_prev

    mat = np.vstack([-c2, c2, -ident, ident, -pred.phi, pred.phi])
    gamma = np.concatenate([
        -u_min + c1u,
        u_max - c1u,
        du,
        du,
        -y_min + psi_x,
        y_max - psi_x,
    ])
    return mat, gamma


@dataclass(frozen=True)
class MpcStep:
    """Applied action plus the solver bookkeeping for the trace."""

    u: np.ndarray
    du: np.ndarray
    status: str
    kkt_residual: float
    active_set_size: int
    iterations: int
    clamp_amount: float


@dataclass
class MpcController:
    """Stateful receding-horizon controller for the three-line rig.

    Feed it the posterior estimate and the raw measurement once per
    period; it assembles the extended state [x_hat - x_hat_prev; y], solves
    the constrained QP warm-started from the previous (shifted) solution,
    and returns the action to hold until the next period.
    """

    model: DiscreteModel
    cfg: MpcConfig = field(default_factory=MpcConfig)

    def __post_init__(self):
        if abs(self.model.T - self.cfg.sample_period) > 1e-12 * self.cfg.sample_period:
            raise ValueError("model discretisation and controller period disagree")
        scaled = DiscreteModel(
            F=self.model.F,
            G=self.model.G,
            H=self.model.H * self.cfg.flow_scale,
            T=self.model.T,
        )
        self.ext = build_extended(scaled)
        self.pred = build_prediction(self.ext, self.cfg.horizon)
        self._m = self.pred.n_inputs
        self._p = self.pred.n_outputs
        self.u_prev = np.clip(
            np.zeros(self._m),
            np.broadcast_to(np.asarray(self.cfg.u_min, float), (self._m,)),
            np.broadcast_to(np.asarray(self.cfg.u_max, float), (self._m,)),
        )
        self._x_hat_prev = None
        self._warm = None

    def _reference_stack(self, refs):
        """Stacked scaled reference: preview if given per step, else held."""
        refs = np.asarray(refs, dtype=float)
        n, p = self.cfg.horizon, self._p
        if refs.shape == (p,):
            y_d = np.tile(refs, n)
        elif refs.shape == (n, p):
            y_d = refs.ravel()
        else:
            raise ValueError(f"refs must have shape ({p},) or ({n}, {p})")
        if not np.all(np.isfinite(y_d)):
            raise ValueError("references must be finite")
        return y_d * self.cfg.flow_scale

    def _soften(self, e, f, mat, gamma):
        """Append slack variables that relax only the output rows."""
        nz = mat.shape[1]
        ns = self._p * self.cfg.horizon
        pad = np.zeros((4 * self._m * self.cfg.horizon, ns))
        slack_cols = np.vstack([pad, -np.eye(ns), -np.eye(ns)])
        mat = np.hstack([mat, slack_cols])
        mat = np.vstack([mat, np.hstack([np.zeros((ns, nz)), -np.eye(ns)])])
        gamma = np.concatenate([gamma, np.zeros(ns)])
        e = np.block([
            [e, np.zeros((nz, ns))],
            [np.zeros((ns, nz)), 2.0 * self.cfg.slack_weight * np.eye(ns)],
        ])
        f = np.concatenate([f, np.zeros(ns)])
        return e, f, mat, gamma

    def step(self, estimate, measured_y, refs):
        """One controller period; returns the applied action and flags."""
        estimate = np.asarray(estimate, dtype=float)
        measured_y = np.asarray(measured_y, dtype=float)
        if self._x_hat_prev is None:
            dx = np.zeros_like(estimate)
        else:
            dx = estimate - self._x_hat_prev
        # the extended model carries outputs in scaled flow units
        x_ext = np.concatenate([dx, measured_y * self.cfg.flow_scale])

        y_d = self._reference_stack(refs)
        e, f = build_cost(self.pred, x_ext, y_d, self.cfg.alpha)
        mat, gamma = build_constraints(self.u_prev, x_ext, self.pred, self.cfg)
        if self.cfg.soft_outputs:
            e, f, mat, gamma = self._soften(e, f, mat, gamma)
        problem = QpProblem(E=e, f=f, M=mat, gamma=gamma)
        sol = solve(problem, warm_start=self._warm)

        nu = self._m * self.cfg.horizon
        if sol.status == STATUS_OPTIMAL or sol.status == "max_iter":
            du_plan = sol.z[:nu]
            status = sol.status
        else:
            du_plan = np.zeros(nu)
            status = STATUS_HELD
        du_raw = du_plan[: self._m]

        # hard re-clamp: saturation must hold whatever the solver did
        bound = np.broadcast_to(np.asarray(self.cfg.du_bound, float), (self._m,))
        du = np.clip(du_raw, -bound, bound)
        lo = np.broadcast_to(np.asarray(self.cfg.u_min, float), (self._m,))
        hi = np.broadcast_to(np.asarray(self.cfg.u_max, float), (self._m,))
        u = np.clip(self.u_prev + du, lo, hi)
        du = u - self.u_prev
        clamp = float(np.max(np.abs(du - du_raw), initial=0.0))

        # receding-horizon bookkeeping: shift the plan one block for warm start
        warm = np.zeros(sol.z.size)
        warm[: nu - self._m] = sol.z[self._m: nu]
        self._warm = warm
        self.u_prev = u
        self._x_hat_prev = estimate.copy()
        return MpcStep(
            u=u.copy(),
            du=du.copy(),
            status=status,
            kkt_residual=float(sol.kkt_residual),
            active_set_size=len(sol.active_set),
            iterations=sol.iterations,
            clamp_amount=clamp,
        )
