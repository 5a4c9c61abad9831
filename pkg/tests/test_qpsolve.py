"""Dense QP solver against an exhaustive active-set enumeration oracle."""

import itertools

import numpy as np
import pytest

from microflow.qpsolve import (
    STATUS_INFEASIBLE,
    STATUS_OPTIMAL,
    QpProblem,
    load_problem,
    save_problem,
    solve,
)


def enumeration_oracle(problem, tol=1e-9):
    """Try every candidate active set and keep the best KKT point.

    Brute force over all constraint subsets of size <= d: solve the
    equality-constrained system, keep points that are primal feasible
    with nonnegative multipliers, return the lowest objective.  Only
    viable for tiny problems, which is the point.
    """
    e, f, m, gamma = problem.E, problem.f, problem.M, problem.gamma
    d = problem.nvars
    best = None
    for size in range(d + 1):
        for subset in itertools.combinations(range(problem.ncons), size):
            ms = m[list(subset)]
            kkt = np.block(
                [[e, ms.T], [ms, np.zeros((size, size))]]
            )
            rhs = np.concatenate([-f, gamma[list(subset)]])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                continue
            z, lam = sol[:d], sol[d:]
            scale = 1.0 + np.abs(gamma).max() if gamma.size else 1.0
            if np.any(m @ z - gamma > tol * scale):
                continue
            if lam.size and np.any(lam < -tol * (1.0 + np.abs(lam).max())):
                continue
            obj = problem.objective(z)
            if best is None or obj < best[1] - 1e-12 * (1.0 + abs(obj)):
                best = (z, obj)
    return best


def random_problem(rng):
    d = rng.integers(1, 7)
    c = rng.integers(1, 9)
    root = rng.normal(0.0, 1.0, (d, d))
    e = root.T @ root + 0.1 * np.eye(d)
    f = rng.normal(0.0, 2.0, d)
    m = rng.normal(0.0, 1.0, (c, d))
    # feasible by construction: bounds hold at a reference point, some tight
    z0 = rng.normal(0.0, 1.0, d)
    slack = rng.uniform(0.0, 2.0, c)
    slack[rng.random(c) < 0.3] = 0.0
    return QpProblem(E=e, f=f, M=m, gamma=m @ z0 + slack)


def test_matches_enumeration_oracle():
    rng = np.random.default_rng(0)
    checked = 0
    while checked < 120:
        problem = random_problem(rng)
        reference = enumeration_oracle(problem)
        if reference is None:
            continue
        sol = solve(problem)
        assert sol.status == STATUS_OPTIMAL
        z_ref, obj_ref = reference
        scale = 1.0 + np.linalg.norm(z_ref)
        assert np.linalg.norm(sol.z - z_ref) < 1e-6 * scale
        assert abs(sol.objective - obj_ref) < 1e-6 * (1.0 + abs(obj_ref))
        checked += 1


def test_unconstrained_interior_minimum():
    e = np.diag([2.0, 4.0])
    f = np.array([-2.0, -4.0])  # minimiser (1, 1)
    m = np.array([[1.0, 0.0], [0.0, 1.0]])
    sol = solve(QpProblem(E=e, f=f, M=m, gamma=np.array([5.0, 5.0])))
    np.testing.assert_allclose(sol.z, [1.0, 1.0], atol=1e-10)
    assert sol.status == STATUS_OPTIMAL
    assert sol.active_set == ()
    np.testing.assert_allclose(sol.multipliers, 0.0, atol=1e-10)


def test_single_bound_active_with_multiplier():
    # min z^2 - 2z s.t. z <= 0.5: optimum at the bound, lambda = 1
    sol = solve(
        QpProblem(
            E=np.array([[2.0]]),
            f=np.array([-2.0]),
            M=np.array([[1.0]]),
            gamma=np.array([0.5]),
        )
    )
    assert sol.z[0] == pytest.approx(0.5, abs=1e-10)
    assert sol.active_set == (0,)
    assert sol.multipliers[0] == pytest.approx(1.0, abs=1e-8)
    assert sol.kkt_residual < 1e-8


def test_redundant_duplicate_rows():
    e = np.eye(2) * 2.0
    f = np.array([-4.0, 0.0])
    m = np.array([[1.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    gamma = np.array([1.0, 1.0, 2.0])  # all three say z1 <= 1
    sol = solve(QpProblem(E=e, f=f, M=m, gamma=gamma))
    np.testing.assert_allclose(sol.z, [1.0, 0.0], atol=1e-9)
    assert sol.status == STATUS_OPTIMAL


def test_warm_start_same_answer():
    rng = np.random.default_rng(5)
    for _ in range(20):
        problem = random_problem(rng)
        cold = solve(problem)
        warm = solve(problem, warm_start=cold.z + rng.normal(0, 0.1, cold.z.size))
        assert cold.status == warm.status == STATUS_OPTIMAL
        np.testing.assert_allclose(warm.z, cold.z, atol=1e-8 * (1 + np.abs(cold.z).max()))


def test_row_scaling_invariance():
    rng = np.random.default_rng(8)
    problem = random_problem(rng)
    scales = 10.0 ** rng.uniform(-6, 6, problem.ncons)
    scaled = QpProblem(
        E=problem.E,
        f=problem.f,
        M=problem.M * scales[:, None],
        gamma=problem.gamma * scales,
    )
    a = solve(problem)
    b = solve(scaled)
    np.testing.assert_allclose(b.z, a.z, atol=1e-8 * (1 + np.abs(a.z).max()))


def test_deterministic_resolve():
    rng = np.random.default_rng(21)
    problem = random_problem(rng)
    a = solve(problem)
    b = solve(problem)
    np.testing.assert_array_equal(a.z, b.z)
    assert a.active_set == b.active_set
    assert a.iterations == b.iterations


def test_infeasible_detected_with_violation_report():
    # z <= -1 and -z <= -1 (z >= 1) cannot both hold
    problem = QpProblem(
        E=np.array([[2.0]]),
        f=np.array([0.0]),
        M=np.array([[1.0], [-1.0]]),
        gamma=np.array([-1.0, -1.0]),
    )
    sol = solve(problem)
    assert sol.status == STATUS_INFEASIBLE
    assert sol.max_violation > 0.5


def test_minus_infinity_bound_is_infeasible():
    problem = QpProblem(
        E=np.eye(1) * 2.0,
        f=np.zeros(1),
        M=np.ones((1, 1)),
        gamma=np.array([-np.inf]),
    )
    assert solve(problem).status == STATUS_INFEASIBLE


def test_plus_infinity_rows_are_ignored():
    problem = QpProblem(
        E=np.eye(1) * 2.0,
        f=np.array([-2.0]),
        M=np.array([[1.0], [1.0]]),
        gamma=np.array([np.inf, 0.25]),
    )
    sol = solve(problem)
    assert sol.z[0] == pytest.approx(0.25, abs=1e-10)


def test_singular_hessian_uses_regularization():
    # E is PSD but singular along z2; the box still pins the optimum
    e = np.array([[2.0, 0.0], [0.0, 0.0]])
    f = np.array([0.0, -1.0])
    m = np.array([[0.0, 1.0], [0.0, -1.0], [1.0, 0.0], [-1.0, 0.0]])
    gamma = np.array([2.0, 2.0, 2.0, 2.0])
    sol = solve(QpProblem(E=e, f=f, M=m, gamma=gamma))
    assert sol.status == STATUS_OPTIMAL
    assert sol.regularization > 0.0
    np.testing.assert_allclose(sol.z, [0.0, 2.0], atol=1e-6)


def test_problem_validation():
    with pytest.raises(ValueError):
        QpProblem(E=np.array([[1.0, 0.5], [0.0, 1.0]]), f=np.zeros(2),
                  M=np.zeros((1, 2)), gamma=np.zeros(1))  # not symmetric
    with pytest.raises(ValueError):
        QpProblem(E=-np.eye(2), f=np.zeros(2),
                  M=np.zeros((1, 2)), gamma=np.zeros(1))  # not PSD
    with pytest.raises(ValueError):
        QpProblem(E=np.eye(2), f=np.zeros(2),
                  M=np.zeros((1, 2)), gamma=np.array([np.nan]))


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(13)
    problem = random_problem(rng)
    path = tmp_path / "case.qp"
    save_problem(problem, path)
    back = load_problem(path)
    np.testing.assert_array_equal(back.E, problem.E)
    np.testing.assert_array_equal(back.f, problem.f)
    np.testing.assert_array_equal(back.M, problem.M)
    np.testing.assert_array_equal(back.gamma, problem.gamma)
    np.testing.assert_array_equal(solve(back).z, solve(problem).z)
