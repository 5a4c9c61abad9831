"""Per-line PI baseline the predictive controller is compared against.

Three independent discrete PI loops, one per flow line, with clamped
anti-windup: the integral term is limited so that its contribution alone
can never leave the actuator range.  No derivative action.  The default
gains are deliberately conservative — the fastest settling that shows no
overshoot on the nominal rig — which is exactly what makes the comparison
interesting.
"""

from dataclasses import dataclass, field

import numpy as np

#: proportional gain, Pa per m^3/s, lines 1..3
DEFAULT_KP = (5e11, 8.5e10, 5e11)
#: integral gain, Pa per m^3 of accumulated error
DEFAULT_KI = (2.5e12, 1.5e12, 2.5e12)


@dataclass(frozen=True)
class PiConfig:
    """Gains and actuator bounds, each scalar or per line.

    kp in Pa/(m^3/s), ki in Pa/m^3; u_min/u_max in Pa.
    """

    kp: np.ndarray = DEFAULT_KP
    ki: np.ndarray = DEFAULT_KI
    u_min: float | np.ndarray = 0.0
    u_max: float | np.ndarray = 150_000.0

    def __post_init__(self):
        kp = np.atleast_1d(np.asarray(self.kp, dtype=float))
        ki = np.atleast_1d(np.asarray(self.ki, dtype=float))
        if np.any(kp < 0) or np.any(ki < 0):
            raise ValueError("gains must be non-negative")
        if np.any(np.asarray(self.u_min) > np.asarray(self.u_max)):
            raise ValueError("u_min must not exceed u_max")
        object.__setattr__(self, "kp", kp)
        object.__setattr__(self, "ki", ki)


@dataclass(frozen=True)
class PiState:
    """Integral accumulators (m^3) and the last applied action (Pa)."""

    integral: np.ndarray
    u: np.ndarray

    @classmethod
    def rest(cls, n=3):
        return cls(integral=np.zeros(n), u=np.zeros(n))


def default_pi_gains(scale=1.0):
    """The hand-tuned per-line gains, optionally scaled as one knob."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    return PiConfig(
        kp=np.asarray(DEFAULT_KP) * scale,
        ki=np.asarray(DEFAULT_KI) * scale,
    )


def pi_step(state, error, period, cfg):
    """One PI update for all lines; returns (u, next state).

    The action uses the integral as accumulated so far,

        u = clamp(kp * e + ki * integral, u_min, u_max)

    then the integral absorbs e * T and is clamped so that
    ki * integral stays within [u_min, u_max] (anti-windup: the stored
    term alone can never pin the actuator beyond its range).
    """
    if period <= 0:
        raise ValueError("period must be positive")
    error = np.asarray(error, dtype=float)
    lo = np.broadcast_to(np.asarray(cfg.u_min, dtype=float), error.shape)
    hi = np.broadcast_to(np.asarray(cfg.u_max, dtype=float), error.shape)
    u = np.clip(cfg.kp * error + cfg.ki * state.integral, lo, hi)
    integral = state.integral + error * period
    with np.errstate(divide="ignore", invalid="ignore"):
        bounded = np.where(
            cfg.ki > 0,
            np.clip(integral, lo / cfg.ki, hi / cfg.ki),
            integral,
        )
    return u, PiState(integral=bounded, u=u.copy())


class PiController:
    """Stateful wrapper with the same step interface as the MPC.

    ``gain_scale`` multiplies both gains, giving sweeps a single knob.
    """

    def __init__(self, cfg=None, gain_scale=1.0):
        if cfg is None:
            cfg = default_pi_gains(gain_scale)
        elif gain_scale != 1.0:
            cfg = PiConfig(
                kp=cfg.kp * gain_scale,
                ki=cfg.ki * gain_scale,
                u_min=cfg.u_min,
                u_max=cfg.u_max,
            )
        self.cfg = cfg
        self.state = PiState.rest(len(np.atleast_1d(cfg.kp)))

    def step(self, measured_y, refs, period):
        """Apply one update from measured flows toward the references."""
        error = np.asarray(refs, dtype=float) - np.asarray(measured_y, dtype=float)
        u, self.state = pi_step(self.state, error, period, self.cfg)
        return u
