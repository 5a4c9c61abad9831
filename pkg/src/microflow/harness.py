"""Scenario-driven closed-loop runner, metrics and sweeps.

One run wires plant -> flow meters -> Kalman filter -> controller -> plant
at the scenario's period: measure, update the estimate with the previously
applied setpoints, pick the next action, hold it while the plant
integrates in substeps.  Each period contributes one trace record, taken
at the decision instant (true/measured/estimated flows as the controller
saw them, then the action it chose).

Traces serialise to CSV with a fixed column set and 9 significant digits;
identical scenario + seed gives a byte-identical file.  Run metadata
(scenario echo, package version, wall-clock timing, solver status counts)
goes to a separate JSON file so the CSV stays deterministic.

All boundary units are bench units (ul/s, Pa); everything internal is SI.
"""

import json
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .baseline import PiConfig, PiController
from .estimator import KalmanFilter, KfConfig, default_q
from .linmodel import build_continuous, dc_gain, discretize_zoh
from .mpc import MpcConfig, MpcController
from .params import coefficients, default_params, perturbed
from .plant import IntegrationFault, PlantState, hold, measure, steady_flows
from .scenarios import ConfigError, Scenario, builtin, scenario_to_dict
from .units import si_to_uls, uls_to_si

#: consecutive infeasible-and-held controller steps tolerated before abort
MAX_CONSECUTIVE_HOLDS = 25

#: trace CSV column order (one scalar per column, plus the status string)
CSV_COLUMNS = (
    "time",
    "q1_ref", "q2_ref", "q3_ref",
    "q1", "q2", "q3",
    "q1_meas", "q2_meas", "q3_meas",
    "q1_est", "q2_est", "q3_est",
    "p_m_est",
    "u1", "u2", "u3",
    "du1", "du2", "du3",
    "status",
)


class HarnessFault(RuntimeError):
    """The closed loop could not continue; carries the partial trace."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class Trace:
    """Closed-loop run record on a uniform time grid (SI units).

    Per step: time, reference, true line flows, measured flows, estimated
    flows, estimated junction pressure, applied setpoints, applied
    increments and the controller/solver status string.
    """

    scenario: Scenario
    time: np.ndarray
    refs: np.ndarray
    flows: np.ndarray
    measured: np.ndarray
    estimated: np.ndarray
    p_m_est: np.ndarray
    u: np.ndarray
    du: np.ndarray
    status: tuple
    completed: bool
    wall_time: float
    step_wall_max: float

    def __len__(self):
        return self.time.size

    def status_counts(self):
        counts = {}
        for s in self.status:
            counts[s] = counts.get(s, 0) + 1
        return counts


def _mk_trace(scenario, rows, completed, wall_time, step_wall_max):
    cols = list(zip(*rows)) if rows else [[] for _ in range(9)]
    return Trace(
        scenario=scenario,
        time=np.asarray(cols[0], dtype=float),
        refs=np.asarray(cols[1], dtype=float).reshape(-1, 3),
        flows=np.asarray(cols[2], dtype=float).reshape(-1, 3),
        measured=np.asarray(cols[3], dtype=float).reshape(-1, 3),
        estimated=np.asarray(cols[4], dtype=float).reshape(-1, 3),
        p_m_est=np.asarray(cols[5], dtype=float),
        u=np.asarray(cols[6], dtype=float).reshape(-1, 3),
        du=np.asarray(cols[7], dtype=float).reshape(-1, 3),
        status=tuple(cols[8]),
        completed=completed,
        wall_time=wall_time,
        step_wall_max=step_wall_max,
    )


def _controllers(scenario, model):
    cons = scenario.constraints
    if scenario.controller == "mpc":
        cfg = MpcConfig(
            horizon=scenario.horizon,
            sample_period=scenario.sample_period,
            alpha=scenario.alpha,
            u_min=np.asarray(cons.u_min, dtype=float),
            u_max=np.asarray(cons.u_max, dtype=float),
            du_max_rate=np.asarray(cons.du_max_rate, dtype=float),
            y_min=uls_to_si(np.asarray(cons.y_min, dtype=float)),
            y_max=uls_to_si(np.asarray(cons.y_max, dtype=float)),
            soft_outputs=scenario.soft_outputs,
        )
        return MpcController(model, cfg)
    pi_cfg = PiConfig(u_min=cons.u_min, u_max=cons.u_max)
    return PiController(pi_cfg, gain_scale=scenario.pi_gain_scale)


def run_scenario(scenario):
    """Run one closed-loop scenario and return its trace.

    Deterministic for a fixed scenario (the seed drives the only RNG).
    Raises :class:`HarnessFault` with the partial trace attached if the
    plant integration breaks down or the controller is stuck infeasible
    for :data:`MAX_CONSECUTIVE_HOLDS` consecutive periods.
    """
    params = default_params(scenario.regulator_preset)
    nominal = coefficients(params)
    pert = scenario.perturbation_dict()
    plant_coeffs = perturbed(nominal, pert) if pert else nominal
    model = discretize_zoh(build_continuous(nominal), scenario.sample_period)
    kf = KalmanFilter(model, KfConfig(q=default_q(scenario.beta)))
    ctrl = _controllers(scenario, model)
    is_mpc = scenario.controller == "mpc"

    state = PlantState.rest()
    rng = np.random.default_rng(scenario.rng_seed)
    noise_si = uls_to_si(scenario.noise_std)
    period = scenario.sample_period
    u_prev = np.zeros(3)
    rows = []
    held_streak = 0
    step_wall_max = 0.0
    t_begin = time.perf_counter()

    for k in range(scenario.n_steps):
        t_step = time.perf_counter()
        t = k * period
        meas = measure(state, noise_si, rng, t)
        kf.step(u_prev, meas.flows)
        est = kf.estimate
        ref_now = uls_to_si(scenario.reference_values(t))
        if is_mpc:
            preview = uls_to_si(scenario.reference_preview(t, scenario.horizon))
            result = ctrl.step(est, meas.flows, preview)
            u, du, status = result.u, result.du, result.status
        else:
            u = ctrl.step(meas.flows, ref_now, period)
            du = u - u_prev
            status = "pi"
        rows.append(
            (t, ref_now, state.q_line.copy(), meas.flows.copy(),
             est[:3].copy(), est[4], u.copy(), du.copy(), status)
        )
        try:
            state = hold(state, u, period, plant_coeffs, scenario.substep)
        except IntegrationFault as exc:
            trace = _mk_trace(scenario, rows, False,
                              time.perf_counter() - t_begin, step_wall_max)
            raise HarnessFault(f"plant integration failed at t={t:.3f}s: {exc}",
                               trace) from exc
        held_streak = held_streak + 1 if status == "held" else 0
        if held_streak >= MAX_CONSECUTIVE_HOLDS:
            trace = _mk_trace(scenario, rows, False,
                              time.perf_counter() - t_begin, step_wall_max)
            raise HarnessFault(
                f"controller infeasible for {held_streak} consecutive periods "
                f"(t={t:.3f}s)", trace)
        u_prev = u
        step_wall_max = max(step_wall_max, time.perf_counter() - t_step)

    return _mk_trace(scenario, rows, True,
                     time.perf_counter() - t_begin, step_wall_max)


def write_trace_csv(trace, path):
    """Serialise the per-step records; flows in ul/s, pressures in Pa.

    9 significant digits, '\\n' endings, no trailing whitespace — the
    bytes depend only on scenario + seed.
    """
    lines = [",".join(CSV_COLUMNS)]
    for k in range(len(trace)):
        vals = (
            trace.time[k],
            *si_to_uls(trace.refs[k]),
            *si_to_uls(trace.flows[k]),
            *si_to_uls(trace.measured[k]),
            *si_to_uls(trace.estimated[k]),
            trace.p_m_est[k],
            *trace.u[k],
            *trace.du[k],
        )
        lines.append(",".join(f"{v:.9g}" for v in vals) + "," + trace.status[k])
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def write_meta(trace, path, fault=None):
    """Run metadata: scenario echo, version, timing, status counts."""
    meta = {
        "package": "microflow",
        "version": __version__,
        "scenario": scenario_to_dict(trace.scenario),
        "n_steps": len(trace),
        "completed": trace.completed,
        "status_counts": trace.status_counts(),
        "wall_time_s": round(trace.wall_time, 6),
        "max_step_wall_s": round(trace.step_wall_max, 6),
    }
    if fault is not None:
        meta["fault"] = str(fault)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")


def run_and_write(scenario, out_dir, fmt="csv"):
    """Run a scenario and write ``trace.csv`` + ``meta.json`` into out_dir.

    On a harness fault the partial trace is still written, and the fault
    re-raised for the caller to report.
    """
    if fmt != "csv":
        raise ConfigError(f"unsupported trace format {fmt!r}; supported: csv")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        trace = run_scenario(scenario)
    except HarnessFault as exc:
        write_trace_csv(exc.trace, out / "trace.csv")
        write_meta(exc.trace, out / "meta.json", fault=exc)
        raise
    write_trace_csv(trace, out / "trace.csv")
    write_meta(trace, out / "meta.json")
    return trace


@dataclass(frozen=True)
class MetricsReport:
    """Per-line tracking metrics of one run.

    rmse: RMS of (measured - reference), ul/s, over the full duration.
    response_time: seconds from the last reference change to the true
    flow first reaching 95% of the final level (nan when the final level
    is zero or never reached).
    overshoot: peak true flow above the final reference level, percent
    of that level (nan when the final level is zero).  Measured against
    the final level, not the running reference, so that anticipatory
    moves ahead of a previewed step do not count as overshoot.
    violations: applied-action bound violations counted over the trace
    (line-instances beyond 1e-6 relative tolerance).
    """

    rmse: np.ndarray
    response_time: np.ndarray
    overshoot: np.ndarray
    violations: int


def count_violations(trace, rel_tol=1e-6):
    """Post-hoc audit of the applied setpoints against the scenario bounds."""
    cons = trace.scenario.constraints
    u_min = np.broadcast_to(np.asarray(cons.u_min, dtype=float), (3,))
    u_max = np.broadcast_to(np.asarray(cons.u_max, dtype=float), (3,))
    du_max = (
        np.broadcast_to(np.asarray(cons.du_max_rate, dtype=float), (3,))
        * trace.scenario.sample_period
    )
    slack_u = rel_tol * np.maximum(1.0, np.abs(u_max))
    slack_du = rel_tol * np.maximum(1.0, np.abs(du_max))
    bad = (trace.u > u_max + slack_u) | (trace.u < u_min - slack_u)
    bad |= np.abs(trace.du) > du_max + slack_du
    return int(np.count_nonzero(bad))


def rmse(trace):
    """Tracking metrics of one run (named for its headline number)."""
    if len(trace) == 0:
        raise ValueError("empty trace")
    err = si_to_uls(trace.measured - trace.refs)
    rms = np.sqrt(np.mean(err**2, axis=0))

    refs = si_to_uls(trace.refs)
    flows = si_to_uls(trace.flows)
    response = np.full(3, np.nan)
    overshoot_pct = np.full(3, np.nan)
    for i in range(3):
        final = refs[-1, i]
        if final > 0:
            overshoot_pct[i] = (
                max(0.0, flows[:, i].max() - final) / final * 100.0
            )
            changed = np.flatnonzero(refs[:, i] != final)
            k0 = changed[-1] + 1 if changed.size else 0
            reached = np.flatnonzero(flows[k0:, i] >= 0.95 * final)
            if reached.size:
                response[i] = trace.time[k0 + reached[0]] - trace.time[k0]
    return MetricsReport(
        rmse=rms,
        response_time=response,
        overshoot=overshoot_pct,
        violations=count_violations(trace),
    )


def compare(scenario_list, controllers=("mpc", "pi"), out_dir=None):
    """Run each scenario under each controller with identical seeds.

    Returns one row per (scenario, controller) — len(controllers) *
    len(scenario_list) rows — each with the per-line metrics.
    Optionally writes ``comparison.csv`` into out_dir.
    """
    rows = []
    for sc in scenario_list:
        for controller in controllers:
            trace = run_scenario(replace(sc, controller=controller))
            m = rmse(trace)
            rows.append({
                "scenario": sc.name,
                "controller": controller,
                "rmse_uls": [float(round(v, 6)) for v in m.rmse],
                "response_s": [None if np.isnan(v) else float(round(v, 3))
                               for v in m.response_time],
                "overshoot_pct": [None if np.isnan(v) else float(round(v, 3))
                                  for v in m.overshoot],
                "violations": m.violations,
            })
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_rows_csv(rows, out / "comparison.csv")
    return rows


def render_comparison(rows):
    """Plain-text comparison table."""
    head = (
        f"{'scenario':<20} {'ctrl':<5} "
        f"{'rmse1':>8} {'rmse2':>8} {'rmse3':>8}  viol"
    )
    lines = [head, "-" * len(head)]
    for r in rows:
        r1, r2, r3 = r["rmse_uls"]
        lines.append(
            f"{r['scenario']:<20} {r['controller']:<5} "
            f"{r1:>8.4f} {r2:>8.4f} {r3:>8.4f}  {r['violations']}"
        )
    return "\n".join(lines)


SWEEP_AXES = ("horizon", "alpha", "beta")

_DEFAULT_SWEEP_VALUES = {
    "horizon": (1, 2, 5, 10, 20),
    "alpha": (1e-8, 1e-7, 1e-6),
    "beta": (1e-6, 1e-4, 1e-2),
}


def default_sweep_values(axis):
    return _DEFAULT_SWEEP_VALUES[_canon_axis(axis)]


def _canon_axis(axis):
    axis = {"n": "horizon", "N": "horizon"}.get(axis, axis).lower()
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; known: {SWEEP_AXES}")
    return axis


def _tail(trace, fraction=0.5):
    keep = trace.time >= trace.time[-1] * fraction
    return keep


def sweep(base, axis, values=None, out_dir=None):
    """One run per value along a tuning axis, shared seed and scenario.

    horizon / alpha: tracking metrics per value.  beta: additionally the
    estimator statistics the trade-off is about — steady-tail standard
    deviation of (estimated - true) flows on the nominal plant, and the
    steady-tail mean absolute (estimated - true) on a plant with
    resistances 20% off the model.  All estimator stats in ul/s.
    """
    axis = _canon_axis(axis)
    if values is None:
        values = default_sweep_values(axis)
    out = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
    rows = []
    for value in values:
        if axis == "horizon":
            sc = replace(base, horizon=int(value))
        elif axis == "alpha":
            sc = replace(base, alpha=float(value))
        else:
            sc = replace(base, beta=float(value))
        trace = run_scenario(sc)
        if out is not None:
            run_dir = out / f"{axis}-{value:g}"
            run_dir.mkdir(exist_ok=True)
            write_trace_csv(trace, run_dir / "trace.csv")
            write_meta(trace, run_dir / "meta.json")
        m = rmse(trace)
        row = {
            "axis": axis,
            "value": value,
            "rmse_uls": [float(round(v, 6)) for v in m.rmse],
            "response_s": [None if np.isnan(v) else float(round(v, 3))
                           for v in m.response_time],
            "overshoot_pct": [None if np.isnan(v) else float(round(v, 3))
                              for v in m.overshoot],
            "violations": m.violations,
        }
        if axis == "beta":
            keep = _tail(trace)
            err = si_to_uls(trace.estimated - trace.flows)[keep]
            row["est_noise_std_uls"] = [float(round(v, 6))
                                        for v in err.std(axis=0)]
            mism = replace(
                sc, plant_perturbations=builtin("mismatch-20pct").plant_perturbations
            )
            mtrace = run_scenario(mism)
            keep = _tail(mtrace)
            merr = si_to_uls(mtrace.estimated - mtrace.flows)[keep]
            row["est_bias_uls"] = [float(round(v, 6))
                                   for v in np.abs(merr.mean(axis=0))]
        rows.append(row)
    if out is not None:
        _write_rows_csv(rows, out / "sweep.csv")
    return rows


def _write_rows_csv(rows, path):
    """Flatten list-valued fields into per-line columns and write CSV."""
    if not rows:
        Path(path).write_text("", encoding="ascii")
        return
    cols = []
    for key, value in rows[0].items():
        if isinstance(value, list):
            cols.extend((key, i) for i in range(len(value)))
        else:
            cols.append((key, None))
    header = ",".join(k if i is None else f"{k}_{i + 1}" for k, i in cols)
    lines = [header]
    for row in rows:
        cells = []
        for key, i in cols:
            v = row[key] if i is None else row[key][i]
            cells.append("" if v is None else f"{v}")
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def _rk4_linear(a, b, x, u, dt, steps):
    x = np.array(x, dtype=float)
    bu = b @ u
    for _ in range(steps):
        k1 = a @ x + bu
        k2 = a @ (x + 0.5 * dt * k1) + bu
        k3 = a @ (x + 0.5 * dt * k2) + bu
        k4 = a @ (x + dt * k3) + bu
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def validate_model(setpoints=(10_000.0, 150_000.0), settle_time=60.0,
                   out_dir=None):
    """Measure how well the reduced model stands in for the plant.

    For each equal setpoint level: run the nonlinear plant to steady
    state and compare the line flows against the reduced model's DC
    prediction.  Additionally check the model's DC gain against the
    resistor-network closed form, and one zero-order-hold step against
    fine fixed-step integration of the continuous model.
    """
    params = default_params()
    model = build_continuous(params)
    disc = discretize_zoh(model, 0.1)
    gain = dc_gain(model)

    steady = []
    for level in setpoints:
        u = np.full(3, float(level))
        final = hold(PlantState.rest(), u, settle_time, params)
        sim = final.q_line
        mod = gain @ u
        diff_pct = np.abs(sim - mod) / np.abs(mod) * 100.0
        steady.append({
            "setpoint_pa": float(level),
            "plant_flows_uls": [float(round(v, 9)) for v in si_to_uls(sim)],
            "model_flows_uls": [float(round(v, 9)) for v in si_to_uls(mod)],
            "diff_pct": [float(f"{v:.3e}") for v in diff_pct],
            "max_diff_pct": float(f"{diff_pct.max():.3e}"),
        })

    u = np.array([10_000.0, 20_000.0, 30_000.0])
    q_net, _ = steady_flows(u, params)
    q_dc = gain @ u
    dc_rel = float(np.max(np.abs(q_dc - q_net) / np.abs(q_net)))

    x1_zoh = disc.F @ np.zeros(model.A.shape[0]) + disc.G @ u
    x1_fine = _rk4_linear(model.A, model.B, np.zeros(model.A.shape[0]), u,
                          1e-5, int(round(disc.T / 1e-5)))
    zoh_rel = float(
        np.linalg.norm(x1_fine - x1_zoh) / np.linalg.norm(x1_zoh)
    )

    report = {
        "steady_state": steady,
        "dc_vs_network_rel": float(f"{dc_rel:.3e}"),
        "zoh_vs_fine_rel": float(f"{zoh_rel:.3e}"),
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "validate_model.json", "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2)
            fh.write("\n")
    return report


def render_validation(report):
    lines = ["model validation"]
    for entry in report["steady_state"]:
        lines.append(
            f"  steady state at {entry['setpoint_pa']:.0f} Pa: "
            f"plant {entry['plant_flows_uls']} ul/s vs model "
            f"{entry['model_flows_uls']} ul/s "
            f"(max diff {entry['max_diff_pct']:.3e}%)"
        )
    lines.append(f"  model DC gain vs resistor network: "
                 f"{report['dc_vs_network_rel']:.3e} relative")
    lines.append(f"  ZOH step vs fine integration:      "
                 f"{report['zoh_vs_fine_rel']:.3e} relative")
    return "\n".join(lines)
