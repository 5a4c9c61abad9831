"""Reduced linear model: DC match, exact discretisation, extended form."""

from types import SimpleNamespace

import numpy as np
import pytest

from microflow.linmodel import (
    NU,
    NXM,
    NY,
    ContinuousModel,
    build_continuous,
    build_extended,
    dc_gain,
    discretize_zoh,
)
from microflow.params import coefficients, default_params
from microflow.plant import steady_flows

PARAMS = default_params()
MODEL = build_continuous(PARAMS)


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


def test_shapes_and_validation():
    assert MODEL.A.shape == (NXM, NXM)
    assert MODEL.B.shape == (NXM, NU)
    assert MODEL.H.shape == (NY, NXM)
    with pytest.raises(ValueError):
        ContinuousModel(A=np.zeros((3, 3)), B=np.zeros((3, 3)), H=np.zeros((3, 3)))
    bad = MODEL.A.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        ContinuousModel(A=bad, B=MODEL.B, H=MODEL.H)


def test_model_is_stable():
    eig = np.linalg.eigvals(MODEL.A)
    assert np.all(eig.real < 0)


def test_dc_gain_matches_resistor_network():
    # at DC the model must collapse to the same one-node resistor network
    # the plant's steady state solves
    u = np.array([1e4, 2e4, 3e4])
    q_net, _ = steady_flows(u, PARAMS)
    q_dc = dc_gain(MODEL) @ u
    np.testing.assert_allclose(q_dc, q_net, rtol=1e-9)


def test_dc_gain_symmetry_for_identical_lines():
    # default lines are identical, so the DC gain is symmetric with equal
    # diagonal and equal off-diagonal entries
    g = dc_gain(MODEL)
    assert g[0, 0] == pytest.approx(g[1, 1], rel=1e-9)
    assert g[0, 1] == pytest.approx(g[1, 0], rel=1e-9)
    assert g[0, 1] == pytest.approx(g[0, 2], rel=1e-9)
    assert g[0, 0] > 0 > g[0, 1]  # raising one setpoint steals from the others


def test_zoh_scalar_hand_case():
    # x' = -a x + b u discretises to F = e^{-aT}, G = b (1 - e^{-aT}) / a
    a_val, b_val, horizon = 3.0, 2.0, 0.25
    toy = SimpleNamespace(
        A=np.array([[-a_val]]), B=np.array([[b_val]]), H=np.eye(1)
    )
    disc = discretize_zoh(toy, horizon)
    assert disc.F[0, 0] == pytest.approx(np.exp(-a_val * horizon), rel=1e-12)
    assert disc.G[0, 0] == pytest.approx(
        b_val * (1 - np.exp(-a_val * horizon)) / a_val, rel=1e-12
    )


def test_zoh_semigroup_property():
    d1 = discretize_zoh(MODEL, 0.1)
    d2 = discretize_zoh(MODEL, 0.2)
    np.testing.assert_allclose(d2.F, d1.F @ d1.F, rtol=1e-10, atol=1e-16)
    np.testing.assert_allclose(
        d2.G, d1.F @ d1.G + d1.G, rtol=1e-10, atol=1e-16
    )


def test_zoh_matches_fine_integration():
    # one ZOH step vs 1e-5 s fixed-step integration of the continuous model
    disc = discretize_zoh(MODEL, 0.1)
    u = np.array([1e4, 2e4, 3e4])
    x0 = np.zeros(NXM)
    x_zoh = disc.F @ x0 + disc.G @ u
    x_fine = _rk4_linear(MODEL.A, MODEL.B, x0, u, 1e-5, 10_000)
    rel = np.linalg.norm(x_fine - x_zoh) / np.linalg.norm(x_zoh)
    assert rel < 1e-6


def test_zoh_rejects_bad_period():
    with pytest.raises(ValueError):
        discretize_zoh(MODEL, 0.0)


def test_extended_model_structure():
    disc = discretize_zoh(MODEL, 0.1)
    ext = build_extended(disc)
    n, p = NXM, NY
    assert ext.F.shape == (n + p, n + p)
    assert ext.G.shape == (n + p, NU)
    assert ext.H.shape == (p, n + p)
    np.testing.assert_array_equal(ext.F[:n, :n], disc.F)
    np.testing.assert_array_equal(ext.F[:n, n:], 0.0)
    np.testing.assert_allclose(ext.F[n:, :n], disc.H @ disc.F, rtol=1e-12)
    np.testing.assert_array_equal(ext.F[n:, n:], np.eye(p))
    np.testing.assert_allclose(ext.G[n:], disc.H @ disc.G, rtol=1e-12)
    np.testing.assert_array_equal(ext.H, np.hstack([np.zeros((p, n)), np.eye(p)]))
    # the output rows contribute p eigenvalues pinned at 1 (the integrators)
    eig = np.sort_complex(np.linalg.eigvals(ext.F))
    assert np.sum(np.isclose(eig, 1.0, atol=1e-9)) == p


def test_extended_model_tracks_absolute_outputs():
    # feeding the extended model state increments and input increments must
    # reproduce the absolute outputs of the underlying model
    rng = np.random.default_rng(11)
    disc = discretize_zoh(MODEL, 0.1)
    ext = build_extended(disc)
    x = np.zeros(NXM)
    u = np.zeros(NU)
    x_prev = x.copy()
    xe = np.concatenate([x - x_prev, disc.H @ x])
    for _ in range(40):
        du = rng.normal(0.0, 500.0, NU)
        x_next = disc.F @ x + disc.G @ (u + du)
        xe = ext.F @ xe + ext.G @ du
        u = u + du
        x_prev, x = x, x_next
        np.testing.assert_allclose(
            ext.H @ xe, disc.H @ x, rtol=1e-9, atol=1e-18
        )
