"""Dense revised simplex and bilinear zero-sum games.

The solver handles problems in standard form

    minimize c.x  subject to  A x = b,  x >= 0

with a two-phase revised simplex. The entering column follows Bland's
smallest-index rule; the leaving row uses a Harris two-pass ratio test,
falling back to the smallest-index rule after many iterations so the method
cannot cycle. Every optimal answer is checked for primal
feasibility, dual feasibility and a vanishing duality gap before it is
returned.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla


class LpNumericalError(RuntimeError):
    """Residual checks failed on a claimed optimum."""


class InfeasibleError(ValueError):
    """A polytope that must be nonempty turned out to be empty."""


@dataclass(frozen=True)
class LpProblem:
    c: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).ravel()
        A = np.asarray(self.A_eq, dtype=float)
        b = np.asarray(self.b_eq, dtype=float).ravel()
        if A.ndim != 2:
            A = A.reshape(len(b), c.size)
        if A.shape != (b.size, c.size):
            raise ValueError(f"A_eq has shape {A.shape}, expected {(b.size, c.size)}")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValueError("LP coefficients must be finite")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A_eq", A)
        object.__setattr__(self, "b_eq", b)


@dataclass(frozen=True)
class LpSolution:
    status: str  # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray | None = None
    duals: np.ndarray | None = None
    objective: float = float("nan")
    iterations: int = 0
    residuals: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


@dataclass(frozen=True)
class LpOptions:
    feas_tol: float = 1e-9
    pivot_tol: float = 1e-11
    cost_tol: float = 1e-10
    harris_tol: float = 1e-9
    residual_tol: float = 1e-8
    max_iter: int = 20_000


DEFAULT_OPTIONS = LpOptions()


class _Basis:
    """LU-factored basis matrix with solves in both directions."""

    def __init__(self, A: np.ndarray, cols: list[int]):
        self.cols = cols
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            self.lu = sla.lu_factor(A[:, cols], check_finite=False)
        d = np.abs(np.diag(self.lu[0]))
        if d.size and d.min() <= 1e-14 * max(d.max(), 1.0):
            raise LpNumericalError("singular basis")

    def solve(self, rhs):
        return sla.lu_solve(self.lu, rhs, check_finite=False)

    def solve_t(self, rhs):
        return sla.lu_solve(self.lu, rhs, trans=1, check_finite=False)


def _simplex(A, b, c, basis, allowed, opts, iters):
    """Primal simplex from a feasible basis; returns (status, basis, iters)."""
    m, n = A.shape
    allowed = allowed.copy()
    start_iters = iters
    bland_after = 50 * (m + n)  # switch to the pure smallest-index leaving rule
    while True:
        if iters >= opts.max_iter:
            raise LpNumericalError("simplex iteration limit reached")
        B = _Basis(A, basis)
        xB = B.solve(b)
        y = B.solve_t(c[basis])
        red = c - A.T @ y
        scale = 1.0 + np.abs(c).max(initial=0.0)
        in_basis = np.zeros(n, dtype=bool)
        in_basis[basis] = True
        candidates = np.flatnonzero(allowed & ~in_basis & (red < -opts.cost_tol * scale))
        if candidates.size == 0:
            return "optimal", basis, iters
        j = int(candidates[0])  # Bland: smallest eligible index enters
        d = B.solve(A[:, j])
        pos = d > opts.pivot_tol
        if not np.any(pos):
            if red[j] > -1e-7 * scale:
                # A ray with a rounding-level reduced cost is not a real descent direction.
                allowed[j] = False
                continue
            return "unbounded", basis, iters
        xb = np.maximum(xB, 0.0)
        if iters - start_iters < bland_after:
            # Harris two-pass test: relax bounds by harris_tol, then take the
            # largest pivot among rows within the relaxed step.
            theta = ((xb[pos] + opts.harris_tol) / d[pos]).min()
            rows = np.flatnonzero(pos & (xb <= theta * d))
            big = d[rows].max()
            rows = rows[d[rows] >= big * (1 - 1e-12)]
        else:
            ratios = np.full(m, np.inf)
            ratios[pos] = xb[pos] / d[pos]
            best = ratios.min()
            rows = np.flatnonzero(ratios <= best + 1e-12 * (1.0 + best))
        leave = int(rows[np.argmin([basis[i] for i in rows])])
        basis = list(basis)
        basis[leave] = j
        iters += 1


def solve_lp(p: LpProblem, opts: LpOptions = DEFAULT_OPTIONS) -> LpSolution:
    """Solve min c.x s.t. A x = b, x >= 0."""
    c, A0, b0 = p.c, p.A_eq, p.b_eq
    m, n = A0.shape
    if m == 0:
        if np.any(c < 0):
            return LpSolution("unbounded")
        return LpSolution("optimal", np.zeros(n), np.zeros(0), 0.0)

    sign = np.where(b0 < 0, -1.0, 1.0)
    A = A0 * sign[:, None]
    b = b0 * sign

    # Phase 1 with one artificial per row.
    A1 = np.hstack([A, np.eye(m)])
    c1 = np.concatenate([np.zeros(n), np.ones(m)])
    allowed = np.ones(n + m, dtype=bool)
    basis = list(range(n, n + m))
    _, basis, iters = _simplex(A1, b, c1, basis, allowed, opts, 0)
    xB = _Basis(A1, basis).solve(b)
    infeas = sum(xB[i] for i, j in enumerate(basis) if j >= n)
    bscale = 1.0 + np.abs(b).max()
    if infeas > opts.feas_tol * bscale:
        return LpSolution("infeasible", iterations=iters)

    # Pivot remaining artificials out; rows where that is impossible are redundant.
    rows = list(range(m))
    i = 0
    while i < len(basis):
        j = basis[i]
        if j < n:
            i += 1
            continue
        B = _Basis(A1[rows], basis)
        e = np.zeros(len(rows))
        e[i] = 1.0
        row = B.solve_t(e) @ A1[rows][:, :n]
        mag = np.abs(row)
        mag[[k for k in basis if k < n]] = 0.0
        k = int(np.argmax(mag))
        if mag[k] > 1e-7:
            basis[i] = k  # largest pivot keeps the basis well conditioned
            i += 1
        else:
            # The artificial's own row is a combination of the others.
            del rows[rows.index(j - n)]
            del basis[i]
    A2, b2 = A[rows], b[rows]
    if not rows:
        if np.any(c < -opts.cost_tol):
            return LpSolution("unbounded", iterations=iters)
        x = np.zeros(n)
        return _finish(p, x, np.zeros(m), iters, opts)

    status, basis, iters = _simplex(A2, b2, c, basis, np.ones(n, dtype=bool), opts, iters)
    if status == "unbounded":
        return LpSolution("unbounded", iterations=iters)
    B = _Basis(A2, basis)
    x = np.zeros(n)
    x[basis] = B.solve(b2)
    y_kept = B.solve_t(c[basis])
    y = np.zeros(m)
    y[rows] = y_kept
    return _finish(p, x, y * sign, iters, opts)


def _finish(p: LpProblem, x, y, iters, opts) -> LpSolution:
    """Check residuals of the raw basic solution, then clip tiny negatives."""
    c, A, b = p.c, p.A_eq, p.b_eq
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise LpNumericalError("non-finite primal or dual values")
    amax = np.abs(A).max(initial=0.0)
    scale_b = 1.0 + max(np.abs(b).max(initial=0.0), amax * np.abs(x).max(initial=0.0))
    scale_c = 1.0 + max(np.abs(c).max(initial=0.0), amax * np.abs(y).max(initial=0.0))
    primal_res = max(float(np.abs(A @ x - b).max(initial=0.0)), float(-x.min(initial=0.0))) / scale_b
    dual_res = float(max(0.0, -(c - A.T @ y).min(initial=0.0))) / scale_c
    x = np.maximum(x, 0.0)
    obj = float(c @ x)
    gap = abs(obj - float(b @ y)) / (1.0 + abs(obj))
    res = {"primal": primal_res, "dual": dual_res, "gap": gap}
    if max(primal_res, dual_res, gap) > opts.residual_tol:
        raise LpNumericalError(f"residual check failed: {res}")
    return LpSolution("optimal", x, y, obj, iters, res)


def solve_lp_general(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, free=None, opts: LpOptions = DEFAULT_OPTIONS):
    """min c.z with A_ub z <= b_ub, A_eq z = b_eq, and z >= 0 except where `free`.

    `free` is a boolean mask over the variables.

    Converted to standard form by splitting free variables and adding
    slacks; the returned primal is in the original variables.
    """
    c = np.asarray(c, dtype=float)
    n = c.size
    A_ub = np.zeros((0, n)) if A_ub is None else np.asarray(A_ub, dtype=float)
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float)
    A_eq = np.zeros((0, n)) if A_eq is None else np.asarray(A_eq, dtype=float)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
    free = np.zeros(n, dtype=bool) if free is None else np.asarray(free)
    if free.dtype != bool or free.shape != (n,):
        raise ValueError("free must be a boolean mask with one entry per variable")
    fi = np.flatnonzero(free)
    mu = A_ub.shape[0]
    A = np.vstack(
        [
            np.hstack([A_eq, -A_eq[:, fi], np.zeros((A_eq.shape[0], mu))]),
            np.hstack([A_ub, -A_ub[:, fi], np.eye(mu)]),
        ]
    )
    sol = solve_lp(LpProblem(np.concatenate([c, -c[fi], np.zeros(mu)]), A, np.concatenate([b_eq, b_ub])), opts)
    if not sol.optimal:
        return sol
    z = sol.x[:n].copy()
    z[fi] -= sol.x[n : n + fi.size]
    return LpSolution("optimal", z, sol.duals, sol.objective, sol.iterations, sol.residuals)


@dataclass(frozen=True)
class Polytope:
    """{x : A x = b, x >= 0}."""

    A_eq: np.ndarray
    b_eq: np.ndarray

    @property
    def dim(self) -> int:
        return np.asarray(self.A_eq).shape[1]

    @classmethod
    def simplex(cls, n: int) -> "Polytope":
        return cls(np.ones((1, n)), np.ones(1))


@dataclass(frozen=True)
class GameSolution:
    value: float
    max_strategy: np.ndarray
    min_strategy: np.ndarray
    saddle_gap: float


def _maxmin_lp(M, X: Polytope, Y: Polytope):
    """max_x min_y x'My  as one LP by dualizing the inner minimization.

    Inner: min_y (M'x).y s.t. B y = b_y, y >= 0 equals max_l b_y.l s.t.
    B'l <= M'x. Variables are (x, l+, l-, s) with B'l - M'x + s = 0.
    """
    A, a = np.asarray(X.A_eq, float), np.asarray(X.b_eq, float)
    B, by = np.asarray(Y.A_eq, float), np.asarray(Y.b_eq, float)
    nx, ny, my = A.shape[1], B.shape[1], B.shape[0]
    top = np.hstack([A, np.zeros((A.shape[0], 2 * my + ny))])
    bottom = np.hstack([-M.T, B.T, -B.T, np.eye(ny)])
    cost = np.concatenate([np.zeros(nx), -by, by, np.zeros(ny)])
    sol = solve_lp(LpProblem(cost, np.vstack([top, bottom]), np.concatenate([a, np.zeros(ny)])))
    if sol.status == "infeasible":
        raise InfeasibleError("maximizer polytope is empty")
    if sol.status != "optimal":
        raise InfeasibleError("minimizer polytope is empty or unbounded")
    return -sol.objective, sol.x[:nx]


def _best_response(obj, P: Polytope, sense: str):
    s = 1.0 if sense == "min" else -1.0
    sol = solve_lp(LpProblem(s * obj, P.A_eq, P.b_eq))
    if sol.status != "optimal":
        raise InfeasibleError("polytope is empty or unbounded")
    return s * sol.objective, sol.x


def solve_bilinear_game(M, X: Polytope, Y: Polytope, eps: float = 1e-8) -> GameSolution:
    """Saddle point of max_{x in X} min_{y in Y} x' M y.

    Each player's strategy comes from its own dualized LP; the pair is then
    checked to be an eps-saddle by computing both best responses.
    """
    M = np.asarray(M, dtype=float)
    v_max, x = _maxmin_lp(M, X, Y)
    v_neg, y = _maxmin_lp(-M.T, Y, X)
    v_min = -v_neg
    lower, _ = _best_response(M.T @ x, Y, "min")
    upper, _ = _best_response(M @ y, X, "max")
    gap = upper - lower
    if gap > eps * (1.0 + abs(v_max)) or abs(v_max - v_min) > eps * (1.0 + abs(v_max)):
        raise LpNumericalError(f"saddle check failed: gap {gap:.3e}, values {v_max} vs {v_min}")
    return GameSolution(0.5 * (v_max + v_min), x, y, gap)
