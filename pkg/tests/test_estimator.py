"""Kalman filter: hand case, Riccati convergence, statistical consistency."""

from types import SimpleNamespace

import numpy as np
import pytest

from microflow.estimator import (
    InnovationSingular,
    KalmanFilter,
    KfConfig,
    KfState,
    default_p0,
    default_q,
    default_r,
    initial_state,
    kf_step,
    lab_q,
)
from microflow.linmodel import NXM, NY, build_continuous, discretize_zoh
from microflow.params import default_params

MODEL = discretize_zoh(build_continuous(default_params()), 0.1)


def _scalar_setup(p0, q, r):
    model = SimpleNamespace(F=np.eye(1), G=np.zeros((1, 1)), H=np.eye(1))
    cfg = SimpleNamespace(q=np.array([[q]]), r=np.array([[r]]))
    state = KfState(x=np.zeros(1), p=np.array([[p0]]))
    return state, model, cfg


def test_scalar_hand_case():
    # random-walk scalar: P0 = 0.5, Q = 0.5 -> prior P' = 1; R = 1 ->
    # K = 0.5 and posterior P = 0.5, all exact
    state, model, cfg = _scalar_setup(p0=0.5, q=0.5, r=1.0)
    new = kf_step(state, np.zeros(1), np.array([2.0]), model, cfg)
    assert new.gain[0, 0] == pytest.approx(0.5, abs=1e-12)
    assert new.p[0, 0] == pytest.approx(0.5, abs=1e-12)
    assert new.x[0] == pytest.approx(1.0, abs=1e-12)  # 0 + 0.5 * (2 - 0)


def test_scalar_two_steps():
    # second step from P = 0.5: prior 1.0 again, so the gain repeats
    state, model, cfg = _scalar_setup(p0=0.5, q=0.5, r=1.0)
    s1 = kf_step(state, np.zeros(1), np.array([2.0]), model, cfg)
    s2 = kf_step(s1, np.zeros(1), np.array([0.0]), model, cfg)
    assert s2.gain[0, 0] == pytest.approx(0.5, abs=1e-12)
    assert s2.x[0] == pytest.approx(0.5, abs=1e-12)  # 1 + 0.5 * (0 - 1)


def test_covariance_recursion_reaches_riccati_fixed_point():
    # iterate the covariance to stationarity, then verify it actually
    # solves the one-step Riccati update it came from
    cfg = KfConfig()
    state = initial_state(cfg)
    u = np.zeros(3)
    y = np.zeros(3)
    prev = state.p
    for _ in range(400):
        state = kf_step(state, u, y, MODEL, cfg)
        drift = np.linalg.norm(state.p - prev) / np.linalg.norm(state.p)
        prev = state.p
    assert drift < 1e-8
    f, h = MODEL.F, MODEL.H
    p_pri = f @ state.p @ f.T + cfg.q
    s = h @ p_pri @ h.T + cfg.r
    k = np.linalg.solve(s, h @ p_pri).T
    p_next = (np.eye(NXM) - k @ h) @ p_pri
    assert (
        np.linalg.norm(p_next - state.p) / np.linalg.norm(state.p) < 1e-8
    )


def test_innovation_chi_square_consistency():
    # matched-model Monte Carlo: the normalised innovation squared must
    # average to the measurement dimension (3) over many steps
    rng = np.random.default_rng(42)
    cfg = KfConfig()
    w_std = np.sqrt(np.diag(cfg.q))
    v_std = np.sqrt(np.diag(cfg.r))
    f, g, h = MODEL.F, MODEL.G, MODEL.H
    x_true = np.zeros(NXM)
    state = initial_state(cfg)
    u = np.zeros(3)
    nis = np.empty(10_000)
    for k in range(nis.size):
        x_true = f @ x_true + g @ u + rng.normal(0.0, w_std)
        y = h @ x_true + rng.normal(0.0, v_std)
        x_pri = f @ state.x + g @ u
        p_pri = f @ state.p @ f.T + cfg.q
        s = h @ p_pri @ h.T + cfg.r
        innov = y - h @ x_pri
        nis[k] = innov @ np.linalg.solve(s, innov)
        state = kf_step(state, u, y, MODEL, cfg)
    assert 2.4 < nis.mean() < 3.6


def test_covariance_stays_symmetric_psd():
    rng = np.random.default_rng(1)
    cfg = KfConfig()
    state = initial_state(cfg)
    for _ in range(200):
        u = rng.normal(0.0, 1e4, 3)
        y = rng.normal(0.0, 1e-9, 3)
        state = kf_step(state, u, y, MODEL, cfg)
        np.testing.assert_array_equal(state.p, state.p.T)
        scale = np.linalg.norm(state.p)
        assert np.linalg.eigvalsh(state.p).min() > -1e-12 * scale


def test_gain_shrinks_with_noisier_measurements():
    def flow_gain(r_scale):
        cfg = KfConfig(r=default_r() * r_scale)
        state = initial_state(cfg)
        for _ in range(100):
            state = kf_step(state, np.zeros(3), np.zeros(3), MODEL, cfg)
        return np.linalg.norm(state.gain[:3, :])

    assert flow_gain(1.0) > flow_gain(100.0) > flow_gain(10_000.0)


def test_default_covariance_values():
    q = default_q()  # beta = 1e-4
    assert q[0, 0] == pytest.approx(1e-22, rel=1e-12)
    assert q[3, 3] == pytest.approx(9e-22, rel=1e-12)
    assert q[4, 4] == pytest.approx(1e4, rel=1e-12)
    assert q[12, 12] == pytest.approx(1e4, rel=1e-12)
    np.testing.assert_array_equal(q, np.diag(np.diag(q)))
    # beta scales the whole matrix linearly
    np.testing.assert_allclose(default_q(1e-2), 100.0 * q, rtol=1e-12)
    with pytest.raises(ValueError):
        default_q(0.0)

    r = default_r()
    np.testing.assert_array_equal(r, 1e-20 * np.eye(NY))
    np.testing.assert_array_equal(default_p0(), default_q(1.0))

    lq = np.diag(lab_q())
    np.testing.assert_allclose(
        lq[:4], np.array([50.0, 1.0, 10.0, 100.0]) * 1e-20, rtol=1e-12
    )
    np.testing.assert_allclose(
        lq[4:], np.array([10, 10, 10, 10, 1, 1, 1, 1, 1]) * 1e5, rtol=1e-12
    )


def test_config_validation():
    with pytest.raises(ValueError):
        KfConfig(q=np.eye(4))
    with pytest.raises(ValueError):
        KfConfig(x0=np.zeros(3))


def test_singular_innovation_raises():
    cfg = SimpleNamespace(q=np.zeros((NXM, NXM)), r=np.zeros((NY, NY)))
    state = KfState(x=np.zeros(NXM), p=np.zeros((NXM, NXM)))
    with pytest.raises(InnovationSingular):
        kf_step(state, np.zeros(3), np.zeros(3), MODEL, cfg)


def test_stateful_wrapper_matches_functional_steps():
    kf = KalmanFilter(MODEL)
    state = initial_state(kf.cfg)
    rng = np.random.default_rng(9)
    for _ in range(20):
        u = rng.normal(0.0, 1e4, 3)
        y = rng.normal(0.0, 1e-9, 3)
        kf.step(u, y)
        state = kf_step(state, u, y, MODEL, kf.cfg)
    np.testing.assert_array_equal(kf.estimate, state.x)
    np.testing.assert_array_equal(kf.state.p, state.p)
