"""Nonlinear lumped-parameter plant of the three-line rig.

State (25 variables):

    index  0..2   q_chip   flow in each chip inlet channel, m^3/s
    index  3      q_out    flow in the outlet channel
    index  4      p_m      pressure at the chip junction, Pa
    index  5..7   q_line   flow in each supply line
    index  8..10  p_chip   pressure at each chip inlet port
    index 11..13  p_res    liquid pressure in each reservoir
    index 14..16  line-1 regulator chain (P, P', P'')
    index 17..18  line-2 regulator chain (P, P')
    index 19..21  line-3 regulator chain (P, P', P'')
    index 22..24  q_meas   lagged flow-meter readings

Flows obey momentum balances across their resistive/inertial segments,
node pressures integrate net inflow over the local compressibility, the
reservoirs are pressurised through an isentropic air nozzle, and each
regulator is the unit-gain lag declared in ``RegulatorCoeffs``.  Inputs
are the three regulator commands in Pa; integration is fixed-step
classical RK4.
"""

from dataclasses import dataclass

import numpy as np

from ._jit import njit
from .params import Coefficients, PhysParams, coefficients
from .physchem import _nozzle_flow

NX = 25

IQ_CHIP = slice(0, 3)
IQ_OUT = 3
IP_M = 4
IQ_LINE = slice(5, 8)
IP_CHIP = slice(8, 11)
IP_RES = slice(11, 14)
IREG1 = slice(14, 17)
IREG2 = slice(17, 19)
IREG3 = slice(19, 22)
IQ_MEAS = slice(22, 25)


class IntegrationFault(RuntimeError):
    """A non-finite value appeared while integrating the plant.

    Carries the last finite state and the substep index at which the
    integration broke down.
    """

    def __init__(self, message, state=None, step=None):
        super().__init__(message)
        self.state = state
        self.step = step


@dataclass(frozen=True)
class PlantState:
    """Plant state split into named groups (see module docstring)."""

    q_chip: np.ndarray
    q_out: float
    p_m: float
    q_line: np.ndarray
    p_chip: np.ndarray
    p_res: np.ndarray
    reg1: np.ndarray
    reg2: np.ndarray
    reg3: np.ndarray
    q_meas: np.ndarray

    @classmethod
    def rest(cls):
        """Quiescent rig: no flow, all gauge pressures zero."""
        return cls.from_array(np.zeros(NX))

    @classmethod
    def from_array(cls, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (NX,):
            raise ValueError(f"state vector must have shape ({NX},)")
        return cls(
            q_chip=x[IQ_CHIP].copy(),
            q_out=float(x[IQ_OUT]),
            p_m=float(x[IP_M]),
            q_line=x[IQ_LINE].copy(),
            p_chip=x[IP_CHIP].copy(),
            p_res=x[IP_RES].copy(),
            reg1=x[IREG1].copy(),
            reg2=x[IREG2].copy(),
            reg3=x[IREG3].copy(),
            q_meas=x[IQ_MEAS].copy(),
        )

    def as_array(self):
        x = np.empty(NX)
        x[IQ_CHIP] = self.q_chip
        x[IQ_OUT] = self.q_out
        x[IP_M] = self.p_m
        x[IQ_LINE] = self.q_line
        x[IP_CHIP] = self.p_chip
        x[IP_RES] = self.p_res
        x[IREG1] = self.reg1
        x[IREG2] = self.reg2
        x[IREG3] = self.reg3
        x[IQ_MEAS] = self.q_meas
        return x

    def to_dict(self):
        """JSON-friendly dict; ``repr`` floats round-trip exactly."""
        return {
            "q_chip": list(self.q_chip),
            "q_out": self.q_out,
            "p_m": self.p_m,
            "q_line": list(self.q_line),
            "p_chip": list(self.p_chip),
            "p_res": list(self.p_res),
            "reg1": list(self.reg1),
            "reg2": list(self.reg2),
            "reg3": list(self.reg3),
            "q_meas": list(self.q_meas),
        }

    @classmethod
    def from_dict(cls, d):
        x = np.concatenate(
            [
                d["q_chip"],
                [d["q_out"], d["p_m"]],
                d["q_line"],
                d["p_chip"],
                d["p_res"],
                d["reg1"],
                d["reg2"],
                d["reg3"],
                d["q_meas"],
            ]
        )
        return cls.from_array(x)


@dataclass(frozen=True)
class Measurement:
    """One flow-meter sample set: lagged line flows plus sensor noise."""

    flows: np.ndarray
    timestamp: float


@njit(cache=True)
def _rhs(x, u, c: Coefficients, out):
    """Time derivative of the 25-state plant (writes into ``out``)."""
    # chip inlet channels: port pressure drives flow toward the junction
    for i in range(3):
        out[0 + i] = (x[8 + i] - x[4] - c.r_chip[i] * x[0 + i]) / c.i_chip[i]
    # outlet channel to atmosphere
    out[3] = (x[4] - c.p_atm - c.r_out * x[3]) / c.i_out
    # junction pressure: net inflow over chamber compressibility
    out[4] = (x[0] + x[1] + x[2] - x[3]) / c.c_chip
    for i in range(3):
        # supply line: reservoir pressure drives flow toward the chip port
        out[5 + i] = (x[11 + i] - x[8 + i] - c.r_line[i] * x[5 + i]) / c.i_line[i]
        # chip port pressure: line inflow minus channel outflow
        out[8 + i] = (x[5 + i] - x[0 + i]) / c.c_line[i]
    # reservoirs: air admitted through the nozzle raises liquid pressure
    for i in range(3):
        if i == 0:
            p_reg = x[14]
        elif i == 1:
            p_reg = x[17]
        else:
            p_reg = x[19]
        if c.duct_area > 0.0:
            mdot = _nozzle_flow(
                c.duct_area,
                c.ambient + p_reg,
                c.ambient + x[11 + i],
                c.inv_sqrt_rt,
                c.c_flow,
                c.exp_a,
                c.exp_b,
                c.r_crit,
            )
            out[11 + i] = mdot * c.rt_vres
        else:
            out[11 + i] = 0.0
    # regulator chains (unit static gain)
    out[14] = x[15]
    out[15] = x[16]
    out[16] = (u[0] - x[14] - c.a1 * x[15] - c.a2 * x[16]) / c.a3
    out[17] = x[18]
    out[18] = (u[1] - x[17] - c.b1 * x[18]) / c.b2
    out[19] = x[20]
    out[20] = x[21]
    out[21] = (u[2] - x[19] - c.c1 * x[20] - c.c2 * x[21]) / c.c3
    # flow-meter lag (tau = 0 slaves the reading to the line flow)
    for i in range(3):
        if c.tau[i] > 0.0:
            out[22 + i] = (x[5 + i] - x[22 + i]) / c.tau[i]
        else:
            out[22 + i] = out[5 + i]


@njit(cache=True)
def _rk4(x0, u, dt, nsteps, c: Coefficients):
    """``nsteps`` classical RK4 steps with ``u`` held constant.

    Returns (state, fault_step); fault_step is -1 when every intermediate
    state stayed finite, otherwise the first offending substep.
    """
    y = x0.copy()
    k1 = np.empty(NX)
    k2 = np.empty(NX)
    k3 = np.empty(NX)
    k4 = np.empty(NX)
    tmp = np.empty(NX)
    for n in range(nsteps):
        _rhs(y, u, c, k1)
        for j in range(NX):
            tmp[j] = y[j] + 0.5 * dt * k1[j]
        _rhs(tmp, u, c, k2)
        for j in range(NX):
            tmp[j] = y[j] + 0.5 * dt * k2[j]
        _rhs(tmp, u, c, k3)
        for j in range(NX):
            tmp[j] = y[j] + dt * k3[j]
        _rhs(tmp, u, c, k4)
        ok = True
        for j in range(NX):
            y[j] = y[j] + dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
            if not np.isfinite(y[j]):
                ok = False
        if not ok:
            return y, n
    return y, -1


def _coeffs(params):
    if isinstance(params, Coefficients):
        return params
    return coefficients(params)


def _check_inputs(x, u):
    if not np.all(np.isfinite(x)):
        raise IntegrationFault("non-finite plant state", PlantState.from_array(np.nan_to_num(x)))
    if u.shape != (3,) or not np.all(np.isfinite(u)):
        raise IntegrationFault("inputs must be three finite pressures")


def derivatives(state, u, params):
    """Right-hand side of the plant at ``state`` under commands ``u``.

    ``params`` may be a ``PhysParams`` or an already-derived
    ``Coefficients`` bundle (e.g. a perturbed one).
    """
    c = _coeffs(params)
    x = state.as_array()
    u = np.asarray(u, dtype=float)
    _check_inputs(x, u)
    out = np.empty(NX)
    _rhs(x, u, c, out)
    if not np.all(np.isfinite(out)):
        raise IntegrationFault("non-finite derivative", state)
    return PlantState.from_array(out)


def step(state, u, dt, params):
    """One classical RK4 step of length ``dt`` with ``u`` held constant."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    c = _coeffs(params)
    x = state.as_array()
    u = np.asarray(u, dtype=float)
    _check_inputs(x, u)
    y, fault = _rk4(x, u, float(dt), 1, c)
    if fault >= 0:
        raise IntegrationFault("integration diverged", state, fault)
    return PlantState.from_array(y)


def hold(state, u, duration, params, substep=1e-4):
    """Integrate over ``duration`` with ``u`` constant, in RK4 substeps.

    The substep is shrunk (never stretched) so an integer count covers the
    interval exactly.  Raises ``IntegrationFault`` if the state leaves the
    finite range, with the pre-step snapshot attached.
    """
    if duration <= 0 or substep <= 0:
        raise ValueError("duration and substep must be positive")
    c = _coeffs(params)
    x = state.as_array()
    u = np.asarray(u, dtype=float)
    _check_inputs(x, u)
    nsteps = max(1, int(np.ceil(duration / substep - 1e-12)))
    dt = duration / nsteps
    y, fault = _rk4(x, u, dt, nsteps, c)
    if fault >= 0:
        raise IntegrationFault(
            f"integration diverged at substep {fault}", state, fault
        )
    return PlantState.from_array(y)


def measure(state, noise_std, rng, timestamp=0.0):
    """Sample the flow meters: lagged line flows plus Gaussian noise.

    ``rng`` is a ``numpy.random.Generator``; it is only consumed when
    ``noise_std`` > 0, and a fixed seed gives a reproducible noise stream.
    """
    flows = state.q_meas.copy()
    if noise_std > 0:
        flows = flows + rng.normal(0.0, noise_std, 3)
    return Measurement(flows=flows, timestamp=timestamp)


def steady_flows(setpoints, params):
    """Steady flows and junction pressure from the pure resistor network.

    At steady state every inertia and compressibility drops out, the
    regulators and reservoirs deliver the setpoints exactly, and the flows
    solve the one-node resistor network

        q_i = (u_i - p_m) / (r_chip_i + r_line_i),   q_out = p_m / r_out,
        sum_i q_i = q_out.

    This closed form is deliberately independent of the ODE right-hand
    side so it can vouch for it.
    """
    c = _coeffs(params)
    u = np.asarray(setpoints, dtype=float)
    r_in = c.r_chip + c.r_line
    p_m = (np.sum(u / r_in) + c.p_atm / c.r_out) / (1.0 / c.r_out + np.sum(1.0 / r_in))
    q = (u - p_m) / r_in
    return q, float(p_m)


def steady_state(setpoints, params):
    """Full 25-state equilibrium for constant setpoints."""
    c = _coeffs(params)
    u = np.asarray(setpoints, dtype=float)
    q, p_m = steady_flows(u, params)
    x = np.zeros(NX)
    x[IQ_CHIP] = q
    x[IQ_OUT] = np.sum(q)
    x[IP_M] = p_m
    x[IQ_LINE] = q
    x[IP_CHIP] = p_m + c.r_chip * q
    x[IP_RES] = u
    x[IREG1] = (u[0], 0.0, 0.0)
    x[IREG2] = (u[1], 0.0)
    x[IREG3] = (u[2], 0.0, 0.0)
    x[IQ_MEAS] = q
    return PlantState.from_array(x)


def linear_parts(params):
    """(A, B) of the plant with the air path frozen.

    Every equation except the reservoir feed is linear; freezing the air
    nozzle (p_res rows zero) leaves x' = A x + B u exactly.  Used to check
    the integrator against the matrix exponential.
    """
    c = _coeffs(params)
    a = np.zeros((NX, NX))
    b = np.zeros((NX, 3))
    for i in range(3):
        a[i, 8 + i] = 1.0 / c.i_chip[i]
        a[i, IP_M] = -1.0 / c.i_chip[i]
        a[i, i] = -c.r_chip[i] / c.i_chip[i]
    a[IQ_OUT, IP_M] = 1.0 / c.i_out
    a[IQ_OUT, IQ_OUT] = -c.r_out / c.i_out
    a[IP_M, 0:3] = 1.0 / c.c_chip
    a[IP_M, IQ_OUT] = -1.0 / c.c_chip
    for i in range(3):
        a[5 + i, 11 + i] = 1.0 / c.i_line[i]
        a[5 + i, 8 + i] = -1.0 / c.i_line[i]
        a[5 + i, 5 + i] = -c.r_line[i] / c.i_line[i]
        a[8 + i, 5 + i] = 1.0 / c.c_line[i]
        a[8 + i, 0 + i] = -1.0 / c.c_line[i]
    a[14, 15] = 1.0
    a[15, 16] = 1.0
    a[16, 14] = -1.0 / c.a3
    a[16, 15] = -c.a1 / c.a3
    a[16, 16] = -c.a2 / c.a3
    b[16, 0] = 1.0 / c.a3
    a[17, 18] = 1.0
    a[18, 17] = -1.0 / c.b2
    a[18, 18] = -c.b1 / c.b2
    b[18, 1] = 1.0 / c.b2
    a[19, 20] = 1.0
    a[20, 21] = 1.0
    a[21, 19] = -1.0 / c.c3
    a[21, 20] = -c.c1 / c.c3
    a[21, 21] = -c.c2 / c.c3
    b[21, 2] = 1.0 / c.c3
    for i in range(3):
        if c.tau[i] > 0.0:
            a[22 + i, 5 + i] = 1.0 / c.tau[i]
            a[22 + i, 22 + i] = -1.0 / c.tau[i]
        else:
            a[22 + i, :] = a[5 + i, :]
    return a, b
