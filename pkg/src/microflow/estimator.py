"""Kalman filter on the reduced model.

Standard predict/update on the discrete 13-state model, fed the previous
applied setpoints and the latest flow-meter readings.  The default noise
covariances weight the four flow states at ~1e-22..1e-21 (m^3/s)^2 and the
pressure-side states at ~1e4 Pa^2, both scaled by a single confidence knob
``beta``; measurement noise defaults to (0.1 ul/s)^2 per meter.

The covariance update uses the Joseph form and re-symmetrisation, which
keeps the matrix positive semidefinite despite the ~30 orders of magnitude
between flow and pressure variances.
"""

from dataclasses import dataclass, field

import numpy as np

from .linmodel import NXM, NY


class InnovationSingular(RuntimeError):
    """Innovation covariance could not be inverted reliably."""

    def __init__(self, cond):
        super().__init__(
            f"innovation covariance is singular or ill-conditioned (cond ~ {cond:.3e})"
        )
        self.cond = cond


def default_q(beta=1e-4):
    """Process noise: beta * (diag(1,1,1,9)*1e-18 | 1e8 * I9)."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    flows = beta * np.array([1.0, 1.0, 1.0, 9.0]) * 1e-18
    pressures = beta * 1e8 * np.ones(9)
    return np.diag(np.concatenate([flows, pressures]))


def lab_q():
    """Hand-tuned process noise from bench experience with the rig."""
    flows = np.array([50.0, 1.0, 10.0, 100.0]) * 1e-20
    pressures = np.array([10.0, 10.0, 10.0, 10.0, 1.0, 1.0, 1.0, 1.0, 1.0]) * 1e5
    return np.diag(np.concatenate([flows, pressures]))


def default_r():
    """Measurement noise: (1e-10 m^3/s)^2 per flow meter."""
    return 1e-20 * np.eye(NY)


def default_p0():
    """Initial covariance, block-scaled like the process noise."""
    return default_q(1.0)


@dataclass(frozen=True)
class KfConfig:
    q: np.ndarray = field(default_factory=default_q)
    r: np.ndarray = field(default_factory=default_r)
    x0: np.ndarray = field(default_factory=lambda: np.zeros(NXM))
    p0: np.ndarray = field(default_factory=default_p0)

    def __post_init__(self):
        if self.q.shape != (NXM, NXM) or self.r.shape != (NY, NY):
            raise ValueError("covariance shapes must be (13,13) and (3,3)")
        if self.x0.shape != (NXM,) or self.p0.shape != (NXM, NXM):
            raise ValueError("initial state/covariance shapes are wrong")


@dataclass(frozen=True)
class KfState:
    """Posterior state estimate, covariance and the last gain used."""

    x: np.ndarray
    p: np.ndarray
    gain: np.ndarray | None = None


def initial_state(cfg):
    return KfState(x=cfg.x0.copy(), p=cfg.p0.copy(), gain=None)


def kf_step(state, u_prev, y, model, cfg):
    """One predict/update cycle.

    Predict with the previously applied setpoints, then correct with the
    flow measurements:

        x- = F x + G u,  P- = F P F' + Q
        K  = P- H' (H P- H' + R)^-1
        x+ = x- + K (y - H x-),  P+ = (I-KH) P- (I-KH)' + K R K'
    """
    f, g, h = model.F, model.G, model.H
    u_prev = np.asarray(u_prev, dtype=float)
    y = np.asarray(y, dtype=float)
    x_pri = f @ state.x + g @ u_prev
    p_pri = f @ state.p @ f.T + cfg.q
    s = h @ p_pri @ h.T + cfg.r
    cond = np.linalg.cond(s)
    if not np.isfinite(cond) or cond > 1e13:
        raise InnovationSingular(cond)
    gain = np.linalg.solve(s, h @ p_pri).T
    x_post = x_pri + gain @ (y - h @ x_pri)
    ikh = np.eye(f.shape[0]) - gain @ h
    p_post = ikh @ p_pri @ ikh.T + gain @ cfg.r @ gain.T
    p_post = 0.5 * (p_post + p_post.T)
    if not (np.all(np.isfinite(x_post)) and np.all(np.isfinite(p_post))):
        raise InnovationSingular(cond)
    return KfState(x=x_post, p=p_post, gain=gain)


class KalmanFilter:
    """Stateful wrapper around :func:`kf_step` for the closed-loop runner."""

    def __init__(self, model, cfg=None):
        self.model = model
        self.cfg = cfg if cfg is not None else KfConfig()
        self.state = initial_state(self.cfg)

    def step(self, u_prev, y):
        self.state = kf_step(self.state, u_prev, y, self.model, self.cfg)
        return self.state

    @property
    def estimate(self):
        return self.state.x
