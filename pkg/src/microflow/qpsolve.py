"""Dense convex QP solver for MPC-sized problems.

    minimize    1/2 z'Ez + f'z
    subject to  M z <= gamma

Primal active-set method in null-space form: the working set is carried as
a QR factorisation of the active rows, each step solves the projected
Newton system through a Cholesky factor of the reduced Hessian, and
blocking constraints enter through an exact ratio test.  Constraint rows
are normalised once on entry so the tolerances are scale-free.

An infeasible starting point is first pulled onto the polytope by an
auxiliary least-violation problem in (z, t); if even that cannot reach the
polytope the problem is reported infeasible together with the smallest
violation found.  Rows with ``gamma = +inf`` can never bind and are kept
only so the problem shape stays fixed across solves.

Everything is deterministic: identical problems and warm starts take
identical paths, and ties in the ratio test resolve to the lowest row
index.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

STATUS_OPTIMAL = "optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_MAX_ITER = "max_iter"

#: iteration cap, per phase, as a multiple of (variables + constraints)
ITER_FACTOR = 50


class _NeedsRegularization(Exception):
    """A projected Hessian lost positive definiteness mid-iteration."""


@dataclass(frozen=True)
class QpProblem:
    """One dense convex QP: minimize 1/2 z'Ez + f'z subject to M z <= gamma.

    E must be symmetric (to 1e-12 relative) and positive semidefinite
    (smallest eigenvalue >= -1e-10 relative).  gamma may contain +inf for
    rows that should never bind; -inf makes the problem infeasible by
    construction.  Arrays are copied and coerced to float.
    """

    E: np.ndarray
    f: np.ndarray
    M: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        f = np.array(self.f, dtype=float).ravel()
        d = f.size
        if d == 0:
            raise ValueError("the problem needs at least one variable")
        e = np.array(self.E, dtype=float)
        if e.shape != (d, d):
            raise ValueError(f"E must be {d}x{d} to match f")
        m = np.array(self.M, dtype=float)
        if m.size == 0:
            m = m.reshape(0, d)
        if m.ndim != 2 or m.shape[1] != d:
            raise ValueError(f"M must have {d} columns")
        g = np.array(self.gamma, dtype=float).ravel()
        if g.size != m.shape[0]:
            raise ValueError("gamma must have one entry per row of M")
        if not (np.all(np.isfinite(e)) and np.all(np.isfinite(f)) and np.all(np.isfinite(m))):
            raise ValueError("E, f and M must be finite")
        if np.any(np.isnan(g)):
            raise ValueError("gamma must not contain NaN")
        scale = max(1.0, float(np.max(np.abs(e))))
        if float(np.max(np.abs(e - e.T))) > 1e-12 * scale:
            raise ValueError("E must be symmetric")
        if np.linalg.eigvalsh(e)[0] < -1e-10 * scale:
            raise ValueError("E must be positive semidefinite")
        object.__setattr__(self, "E", e)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "M", m)
        object.__setattr__(self, "gamma", g)

    @property
    def nvars(self):
        return self.f.size

    @property
    def ncons(self):
        return self.gamma.size

    def objective(self, z):
        """1/2 z'Ez + f'z at a given point (inf for overflowing points)."""
        z = np.asarray(z, dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):
            value = float(0.5 * z @ self.E @ z + self.f @ z)
        return value if np.isfinite(value) else float("inf")


@dataclass(frozen=True)
class QpSolution:
    """Result of one solve.

    status is ``optimal``, ``infeasible`` or ``max_iter``.  multipliers are
    the inequality multipliers on the original rows, clipped at zero within
    the dual tolerance; active_set lists the rows in the final working set.
    kkt_residual is a composite (stationarity, primal, dual,
    complementarity) residual on the original problem, +inf when the
    problem was declared infeasible.  regularization is the ridge that had
    to be added to E (0 when none), and max_violation the largest
    constraint violation at z (0 when feasible).
    """

    z: np.ndarray
    objective: float
    status: str
    active_set: tuple
    multipliers: np.ndarray
    kkt_residual: float
    iterations: int
    regularization: float
    max_violation: float


def _max_violation(problem, z):
    if problem.ncons == 0:
        return 0.0
    resid = problem.M @ z - np.where(np.isfinite(problem.gamma), problem.gamma, np.inf)
    return max(0.0, float(np.max(resid)))


def _kkt_residual(problem, z, lam):
    """Composite scale-free KKT residual at (z, lam)."""
    g = problem.E @ z + problem.f
    stat = np.max(np.abs(g + problem.M.T @ lam), initial=0.0)
    stat /= 1.0 + float(np.max(np.abs(g), initial=0.0))
    finite = np.isfinite(problem.gamma)
    if np.any(finite):
        resid = problem.M[finite] @ z - problem.gamma[finite]
        rel = 1.0 + np.abs(problem.gamma[finite])
        primal = max(0.0, float(np.max(resid / rel)))
        comp = float(np.max(np.abs(lam[finite] * resid))) / (1.0 + abs(problem.objective(z)))
    else:
        primal = comp = 0.0
    dual = max(0.0, -float(np.min(lam, initial=0.0)))
    return max(stat, primal, dual, comp)


def _active_set(e, f, mn, gn, z, max_iter):
    """Primal active-set loop over unit-norm rows, from a feasible z.

    Returns (z, lam, work, status, iterations); lam holds the working-set
    multipliers scattered over the rows of mn (zeros elsewhere), with
    tolerance-band negatives clipped to zero.
    """
    d = z.size
    nc = gn.size
    work = []
    lam = np.zeros(nc)
    iters = 0
    while iters < max_iter:
        iters += 1
        g = e @ z + f
        k = len(work)
        if k:
            q, r = np.linalg.qr(mn[work].T, mode="complete")
            q1, null = q[:, :k], q[:, k:]
            rk = r[:k, :]
        else:
            q1, rk = None, None
            null = np.eye(d)
        if k < d:
            h_red = null.T @ e @ null
            try:
                chol = cho_factor(h_red, lower=True, check_finite=False)
            except np.linalg.LinAlgError as exc:
                raise _NeedsRegularization from exc
            p = null @ cho_solve(chol, -(null.T @ g), check_finite=False)
        else:
            p = np.zeros(d)
        if np.max(np.abs(p), initial=0.0) <= 1e-11 * (1.0 + np.max(np.abs(z), initial=0.0)):
            # minimiser over the working set: inspect the multipliers
            if k == 0:
                return z, lam, work, STATUS_OPTIMAL, iters
            lam_w = solve_triangular(rk, -(q1.T @ g), lower=False, check_finite=False)
            jmin = int(np.argmin(lam_w))
            if lam_w[jmin] >= -1e-9 * (1.0 + np.max(np.abs(g), initial=0.0)):
                lam[work] = np.maximum(lam_w, 0.0)
                return z, lam, work, STATUS_OPTIMAL, iters
            work.pop(jmin)
            continue
        # ratio test over inactive rows; ties go to the lowest index
        in_work = np.zeros(nc, dtype=bool)
        if work:
            in_work[work] = True
        mp = mn @ p
        slack = gn - mn @ z
        ptol = 1e-11 * max(1.0, float(np.linalg.norm(p)))
        alpha = 1.0
        block = -1
        for i in range(nc):
            if in_work[i] or mp[i] <= ptol:
                continue
            a_i = slack[i] / mp[i]
            if a_i < 0.0:
                a_i = 0.0
            if a_i < alpha:
                alpha = a_i
                block = i
        z = z + alpha * p
        if block >= 0:
            # a row linearly dependent on the working set satisfies
            # mn[i] @ p == 0, so every blocking row is independent and the
            # working set stays full rank
            work.append(block)
    return z, lam, work, STATUS_MAX_ITER, iters


def _phase1(mn, gn, z0, max_iter):
    """Pull z0 onto the polytope by minimising the worst violation.

    Solves min t + eps/2 (|z - z0|^2 + t^2) s.t. mn z - t <= gn, t >= 0,
    which always has the strictly feasible start (z0, max violation).
    Returns (z, t_star, iterations).
    """
    d = z0.size
    nc = gn.size
    eps = 1e-8
    viol = float(np.max(mn @ z0 - gn, initial=0.0))
    t0 = max(0.0, viol) * (1.0 + 1e-9) + 1e-12 * (1.0 + float(np.max(np.abs(gn), initial=0.0)))
    e1 = eps * np.eye(d + 1)
    f1 = np.concatenate([-eps * z0, [1.0]])
    m1 = np.zeros((nc + 1, d + 1))
    m1[:nc, :d] = mn
    m1[:nc, d] = -1.0
    m1[nc, d] = -1.0
    g1 = np.concatenate([gn, [0.0]])
    norms = np.linalg.norm(m1, axis=1)
    z1 = np.concatenate([z0, [t0]])
    z1, _, _, _, iters = _active_set(
        e1, f1, m1 / norms[:, None], g1 / norms, z1, max_iter
    )
    return z1[:d], float(z1[d]), iters


def _infeasible(problem, z, iterations, regularization):
    return QpSolution(
        z=z,
        objective=problem.objective(z),
        status=STATUS_INFEASIBLE,
        active_set=(),
        multipliers=np.zeros(problem.ncons),
        kkt_residual=np.inf,
        iterations=iterations,
        regularization=regularization,
        max_violation=_max_violation(problem, z),
    )


def solve(problem, warm_start=None):
    """Solve the QP, optionally from a warm-start point.

    The warm start only shortens the path; the returned optimum of a
    strictly convex problem does not depend on it.  An infeasible warm
    start is allowed (phase 1 repairs it).  If E is not positive definite
    a ridge of 1e-10 * trace(E)/d (escalated a hundredfold per retry) is
    added and recorded in the solution.
    """
    d = problem.nvars
    c = problem.ncons
    if warm_start is not None:
        z0 = np.array(warm_start, dtype=float).ravel()
        if z0.size != d or not np.all(np.isfinite(z0)):
            raise ValueError(f"warm start must be a finite vector of length {d}")
    else:
        z0 = np.zeros(d)

    if np.any(np.isneginf(problem.gamma)):
        return _infeasible(problem, z0, 0, 0.0)
    norms = np.linalg.norm(problem.M, axis=1) if c else np.zeros(0)
    dead = norms == 0.0
    if np.any(problem.gamma[dead] < 0.0):
        # an all-zero row asks for 0 <= gamma < 0
        return _infeasible(problem, z0, 0, 0.0)
    cand = np.flatnonzero(~dead & np.isfinite(problem.gamma))
    mn = problem.M[cand] / norms[cand, None] if cand.size else np.zeros((0, d))
    gn = problem.gamma[cand] / norms[cand] if cand.size else np.zeros(0)

    max_iter = ITER_FACTOR * (d + c)
    total_iters = 0
    if cand.size and float(np.max(mn @ z0 - gn - 1e-9 * (1.0 + np.abs(gn)))) > 0.0:
        z0, t_star, p1_iters = _phase1(mn, gn, z0, max_iter)
        total_iters += p1_iters
        if t_star > 1e-8 * (1.0 + float(np.max(np.abs(gn)))):
            return _infeasible(problem, z0, total_iters, 0.0)

    trace = float(np.trace(problem.E))
    base = 1e-10 * (trace / d if trace > 0.0 else 1.0)
    solved = False
    reg = 0.0
    for attempt in range(4):
        reg = 0.0 if attempt == 0 else base * 100.0 ** (attempt - 1)
        e_reg = problem.E if reg == 0.0 else problem.E + reg * np.eye(d)
        try:
            np.linalg.cholesky(e_reg)
            z, lam_n, work, status, iters = _active_set(
                e_reg, problem.f, mn, gn, z0.copy(), max_iter
            )
            solved = True
            break
        except (np.linalg.LinAlgError, _NeedsRegularization):
            continue
    if not solved:
        raise RuntimeError("Hessian could not be factorised even with regularization")
    total_iters += iters

    lam = np.zeros(c)
    if cand.size:
        lam[cand] = lam_n / norms[cand]
    return QpSolution(
        z=z,
        objective=problem.objective(z),
        status=status,
        active_set=tuple(sorted(int(cand[i]) for i in work)),
        multipliers=lam,
        kkt_residual=_kkt_residual(problem, z, lam),
        iterations=total_iters,
        regularization=reg,
        max_violation=_max_violation(problem, z),
    )


def save_problem(problem, path):
    """Write the problem to a plain-text file (see :func:`load_problem`).

    Intended for post-mortems of failed solves; values are written with 17
    significant digits so the round-trip is exact.
    """
    def rows(mat):
        mat = np.atleast_2d(mat)
        return [" ".join(f"{v:.17g}" for v in row) for row in mat]

    lines = [f"qp {problem.nvars} {problem.ncons}", "E"]
    lines += rows(problem.E)
    lines.append("f")
    lines += rows(problem.f)
    lines.append("M")
    lines += rows(problem.M) if problem.ncons else []
    lines.append("gamma")
    lines += rows(problem.gamma) if problem.ncons else []
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_problem(path):
    """Read a problem written by :func:`save_problem`."""
    with open(path, encoding="ascii") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    header = lines[0].split()
    if len(header) != 3 or header[0] != "qp":
        raise ValueError(f"{path}: not a saved QP (bad header)")
    d, c = int(header[1]), int(header[2])
    pos = 1

    def section(name, nrows):
        nonlocal pos
        if pos >= len(lines) or lines[pos] != name:
            raise ValueError(f"{path}: expected section {name!r}")
        pos += 1
        block = [
            [float(tok) for tok in lines[pos + i].split()] for i in range(nrows)
        ]
        pos += nrows
        return np.array(block, dtype=float) if nrows else np.zeros((0, d))

    e = section("E", d)
    f = section("f", 1).ravel()
    m = section("M", c)
    gamma = section("gamma", 1 if c else 0).ravel() if c else np.zeros(0)
    return QpProblem(E=e, f=f, M=m, gamma=gamma)
