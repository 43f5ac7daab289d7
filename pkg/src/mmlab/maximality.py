"""Membership checks for the maximal coupling sets.

A coupling P(y, yhat | x1) is maximal for (q, px) when no adversary
P(x2 | x1, yhat) that keeps the (yhat, x2) joint equal to the (yhat, x1)
joint can lower E[q(X2, Y)] below E[q(X1, Y)]. The adversary problem is a
small LP. The weaker sets that drop the Markov structure, the
support-based prior set, and the type-dependent variant are checked here too.

Input letters with px = 0 are removed before any LP is built.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Callable

import numpy as np

from .lp import LpProblem, Polytope, solve_bilinear_game, solve_lp, LpNumericalError
from .probability import (
    DomainError,
    as_channel,
    as_coupling,
    as_distribution,
    as_metric,
    Coupling,
)

DEFAULT_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class MaximalityCertificate:
    adversary_value: float
    baseline: float
    worst_adversary: np.ndarray  # J x K x J table P(x2 | x1, yhat)
    slack: float
    verdict: str  # "member" | "non-member" | "boundary"
    tol: float = DEFAULT_TOL
    notes: tuple = ()
    duals: dict = field(default_factory=dict, repr=False)

    @property
    def is_member(self) -> bool:
        return self.verdict != "non-member"

    def to_dict(self) -> dict:
        return {
            "adversary_value": float(self.adversary_value),
            "baseline": float(self.baseline),
            "worst_adversary": np.asarray(self.worst_adversary, dtype=float).tolist(),
            "slack": float(self.slack),
            "verdict": self.verdict,
            "tol": float(self.tol),
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MaximalityCertificate":
        return cls(
            float(d["adversary_value"]),
            float(d["baseline"]),
            np.asarray(d["worst_adversary"], dtype=float),
            float(d["slack"]),
            d["verdict"],
            float(d.get("tol", DEFAULT_TOL)),
            tuple(d.get("notes", ())),
        )


def _verdict(slack: float, tol: float) -> str:
    if slack > tol:
        return "member"
    if slack < -tol:
        return "non-member"
    return "boundary"


def _check_shapes(c: Coupling, px, q):
    if c.J != len(px) or q.values.shape != (c.J, c.K):
        raise DomainError(
            f"shape mismatch: coupling {c.per_input.shape}, px {len(px)}, metric {q.values.shape}"
        )


def joint_xyyhat(c, px) -> np.ndarray:
    """P(x, y, yhat) = px(x) c(y, yhat | x)."""
    return as_distribution(px).probs[:, None, None] * as_coupling(c).per_input


def adversary_lp(P: np.ndarray, qv: np.ndarray) -> LpProblem:
    """Adversary LP for a joint P(x1, y, yhat) over support letters.

    Variables a[x1, yhat, x2] (C order). Rows: sum_x2 a = 1 for each
    (x1, yhat), then sum_x1 P(x1, yhat) a[x1, yhat, x2] = P(x2, yhat) for each
    (x2, yhat). Cost G[x1, yhat, x2] = sum_y P(x1, y, yhat) q(x2, y).
    """
    J, K, _ = P.shape
    Pxh = P.sum(axis=1)  # (x, yhat)
    G = np.einsum("xyh,zy->xhz", P, qv)
    nv = J * K * J
    A = np.zeros((2 * J * K, nv))
    b = np.zeros(2 * J * K)
    idx = np.arange(nv).reshape(J, K, J)
    for x1 in range(J):
        for h in range(K):
            A[x1 * K + h, idx[x1, h, :]] = 1.0
            b[x1 * K + h] = 1.0
    for x2 in range(J):
        for h in range(K):
            r = J * K + x2 * K + h
            A[r, idx[:, h, x2]] = Pxh[:, h]
            b[r] = Pxh[x2, h]
    return LpProblem(G.ravel(), A, b)


def _support(px) -> np.ndarray:
    return np.flatnonzero(as_distribution(px).probs > 0)


def adversary_value(c, px, q, tol: float = DEFAULT_TOL) -> MaximalityCertificate:
    """Solve the adversary LP and report value, baseline and slack."""
    c, px, q = as_coupling(c), as_distribution(px), as_metric(q)
    _check_shapes(c, px, q)
    s = _support(px)
    P = joint_xyyhat(c, px)[s]
    qs = q.values[s]
    baseline = float(np.einsum("xyh,xy->", P, qs))
    sol = solve_lp(adversary_lp(P, q.values[s]))
    if not sol.optimal:
        raise LpNumericalError(f"adversary LP returned {sol.status}; the identity adversary is feasible")
    J, K, Js = c.J, c.K, s.size
    a = sol.x.reshape(Js, K, Js)
    a = a / np.where(a.sum(axis=2, keepdims=True) > 0, a.sum(axis=2, keepdims=True), 1.0)
    full = np.zeros((J, K, J))
    for x in range(J):
        full[x, :, x] = 1.0
    full[np.ix_(s, np.arange(K), s)] = a
    value = sol.objective
    slack = value - baseline
    duals = {
        "mu": sol.duals[: Js * K].reshape(Js, K),
        "lam": sol.duals[Js * K :].reshape(Js, K),
        "support": s,
    }
    return MaximalityCertificate(value, baseline, full, slack, _verdict(slack, tol), tol, duals=duals)


def is_maximal(c, px, q, tol: float = DEFAULT_TOL):
    cert = adversary_value(c, px, q, tol)
    return cert.is_member, cert


def simplex_grid(J: int, step: float) -> np.ndarray:
    """All points of the probability simplex with coordinates on a lattice of spacing step."""
    if not 0 < step <= 1:
        raise DomainError("grid step must lie in (0, 1]")
    N = int(round(1.0 / step))
    if abs(N * step - 1.0) > 1e-9:
        raise DomainError("grid step must divide 1")
    pts = []
    for head in product(range(N + 1), repeat=J - 1):
        if sum(head) <= N:
            pts.append(list(head) + [N - sum(head)])
    return np.array(pts, dtype=float) / N


@dataclass(frozen=True, eq=False)
class UniversalResult:
    member: bool
    worst_px: np.ndarray
    min_slack: float
    n_points: int
    caveat: str = "grid-certified only"


def is_maximal_universal(c, q, grid_step: float = 0.01, tol: float = DEFAULT_TOL) -> UniversalResult:
    """Check maximality at every point of an input-distribution grid."""
    c = as_coupling(c)
    worst, worst_px = np.inf, None
    grid = simplex_grid(c.J, grid_step)
    for px in grid:
        cert = adversary_value(c, px, q, tol)
        if cert.slack < worst:
            worst, worst_px = cert.slack, px
    return UniversalResult(bool(worst >= -tol), worst_px, float(worst), len(grid))


def sq_table(q) -> dict:
    """S_q(k1, k2) = argmax_j q(j, k2) - q(j, k1), ties included (0-based letters)."""
    qv = as_metric(q).values
    K = qv.shape[1]
    table = {}
    for k1 in range(K):
        for k2 in range(K):
            d = qv[:, k2] - qv[:, k1]
            table[(k1, k2)] = frozenset(np.flatnonzero(d >= d.max() - 1e-12 * (1 + abs(d.max()))).tolist())
    return table


def prior_support_mask(q) -> np.ndarray:
    """Boolean J x K x K mask of entries allowed by the prior (support) set."""
    qv = as_metric(q).values
    J, K = qv.shape
    mask = np.zeros((J, K, K), dtype=bool)
    for (k1, k2), js in sq_table(q).items():
        for j in js:
            mask[j, k1, k2] = True
    return mask


def prior_violations(c, q) -> list:
    c = as_coupling(c)
    bad = (c.per_input > 0) & ~prior_support_mask(q)
    return [tuple(int(i) for i in ix) for ix in np.argwhere(bad)]


def is_maximal_prior(c, q) -> bool:
    """Support test: c(k1, k2 | j) = 0 whenever j is outside S_q(k1, k2)."""
    return not prior_violations(c, q)


def in_gamma_rho(c, rho, q) -> bool:
    """Support test against S_{rho,q}(y, yhat) = X minus argmax_x rho(x, yhat) - q(x, y)."""
    c, rho, q = as_coupling(c), as_metric(rho), as_metric(q)
    J, K = q.values.shape
    for y in range(K):
        for h in range(K):
            d = rho.values[:, h] - q.values[:, y]
            top = d >= d.max() - 1e-12 * (1 + abs(d.max()))
            if np.any(c.per_input[top, y, h] > 0):
                return False
    return True


def _unrestricted_adversary(c, px, q, tol):
    """Adversary P(xt | y, yhat, x) with only the (yhat, xt) = (yhat, x) joint constraint."""
    c, px, q = as_coupling(c), as_distribution(px), as_metric(q)
    _check_shapes(c, px, q)
    s = _support(px)
    P = joint_xyyhat(c, px)[s]
    qs = q.values[s]
    Js, K = s.size, c.K
    baseline = float(np.einsum("xyh,xy->", P, qs))
    Pxh = P.sum(axis=1)
    nv = Js * K * K * Js
    idx = np.arange(nv).reshape(Js, K, K, Js)  # [x, y, yhat, xt]
    rows, rhs = [], []
    for x in range(Js):
        for y in range(K):
            for h in range(K):
                r = np.zeros(nv)
                r[idx[x, y, h, :]] = 1.0
                rows.append(r)
                rhs.append(1.0)
    for xt in range(Js):
        for h in range(K):
            r = np.zeros(nv)
            r[idx[:, :, h, xt].ravel()] = P[:, :, h].ravel()
            rows.append(r)
            rhs.append(Pxh[xt, h])
    cost = P[:, :, :, None] * qs.T[None, :, None, :]  # P(x,y,h) q(xt,y)
    sol = solve_lp(LpProblem(cost.ravel(), np.array(rows), np.array(rhs)))
    if not sol.optimal:
        raise LpNumericalError(f"adversary LP returned {sol.status}")
    slack = sol.objective - baseline
    return slack >= -tol, slack


def in_theta_star(c, px, q, tol: float = DEFAULT_TOL) -> bool:
    """Maximality against adversaries that may also depend on Y."""
    return _unrestricted_adversary(c, px, q, tol)[0]


def in_gamma_star(c, px, q, tol: float = DEFAULT_TOL) -> bool:
    """Same adversary family, with the (Y, Yhat, X) law held equal to px x c.

    Under the equality reading of its absolute-continuity clause this set
    has exactly the adversary family of in_theta_star.
    """
    return _unrestricted_adversary(c, px, q, tol)[0]


# --------------------------------------------------------------------------
# Type-dependent metrics


@dataclass(frozen=True)
class TypeDependentMetric:
    """Metric evaluated on a joint distribution P(x, y) given as a J x K array.

    `convex` declares convexity in P(y|x) for fixed P(x); `gradient`, if
    given, returns the J x K gradient with respect to the joint entries.
    """

    evaluate: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray] | None = None
    convex: bool = False
    name: str = "custom"


def additive_td(q) -> TypeDependentMetric:
    qv = as_metric(q).values.copy()
    return TypeDependentMetric(lambda P: float((P * qv).sum()), lambda P: qv, True, "additive")


def _mmi_value(P):
    px, py = P.sum(axis=1), P.sum(axis=0)
    den = px[:, None] * py[None, :]
    m = P > 0
    return float((P[m] * np.log(P[m] / den[m])).sum())


def _mmi_grad(P):
    px, py = P.sum(axis=1), P.sum(axis=0)
    with np.errstate(divide="ignore"):
        g = np.log(np.maximum(P, 1e-300)) - np.log(np.maximum(px, 1e-300))[:, None] - np.log(
            np.maximum(py, 1e-300)
        )[None, :]
    return g - 1.0


def mmi_td() -> TypeDependentMetric:
    """Empirical mutual information (nats) of the joint type."""
    return TypeDependentMetric(_mmi_value, _mmi_grad, True, "mmi")


def _adversary_polytope(P):
    lp = adversary_lp(P, np.zeros((P.shape[0], P.shape[1])))
    return lp.A_eq, lp.b_eq


def _x2y_joint(P, a):
    """P(x2, y) = sum_{x1, yhat} P(x1, y, yhat) a(x2 | x1, yhat)."""
    return np.einsum("xyh,xhz->zy", P, a)


def _line_min(f, lo=0.0, hi=1.0, iters=60):
    """Golden-section minimum of a univariate function on [lo, hi], endpoints included."""
    g = (np.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    cands = [(f(lo), lo), (fc, c), (fd, d), (f(hi), hi)]
    return min(cands)


def _fw_td(P, qtd, A, b, start, max_iter=400, gap_tol=1e-10):
    """Frank-Wolfe on the adversary polytope for a td metric with gradient."""
    J, K, _ = P.shape
    a = start.copy()
    lower = -np.inf
    val = qtd.evaluate(_x2y_joint(P, a))
    for _ in range(max_iter):
        G = qtd.gradient(_x2y_joint(P, a))  # d f / d P(x2, y)
        ga = np.einsum("xyh,zy->xhz", P, G).ravel()
        sol = solve_lp(LpProblem(ga, A, b))
        s = sol.x.reshape(a.shape)
        gap = float(ga @ (a.ravel() - s.ravel()))
        lower = max(lower, val - gap)
        if gap <= gap_tol:
            break
        d = s - a
        fv, t = _line_min(lambda t: qtd.evaluate(_x2y_joint(P, a + t * d)))
        if fv >= val - 1e-15:
            break
        a, val = a + t * d, fv
    return val, a, lower


def _random_vertices(A, b, shape, rng, count):
    out = []
    for _ in range(count):
        sol = solve_lp(LpProblem(rng.normal(size=A.shape[1]), A, b))
        if sol.optimal:
            out.append(sol.x.reshape(shape))
    return out


def is_maximal_td(c, px, q_td: TypeDependentMetric, tol: float = DEFAULT_TOL, starts: int = 8, seed: int = 0):
    """Minimize q_td(P_{X2 Y}) over the adversary polytope.

    A declared-convex metric with a gradient is minimized by Frank-Wolfe,
    whose duality gap gives a certified lower bound, so both verdicts are
    certain. Otherwise a multistart local search runs and a "member" verdict
    only means no better adversary was found.
    """
    c, px = as_coupling(c), as_distribution(px)
    s = _support(px)
    P = joint_xyyhat(c, px)[s]
    Js, K = s.size, c.K
    baseline = float(q_td.evaluate(P.sum(axis=2)))
    A, b = _adversary_polytope(P)
    identity = np.zeros((Js, K, Js))
    for x in range(Js):
        identity[x, :, x] = 1.0
    rng = np.random.default_rng(seed)
    notes = []
    best_val, best_a = q_td.evaluate(_x2y_joint(P, identity)), identity
    lower = -np.inf
    if q_td.gradient is not None:
        starts_list = [identity] + _random_vertices(A, b, identity.shape, rng, 0 if q_td.convex else starts)
        for st in starts_list:
            v, a, lo = _fw_td(P, q_td, A, b, st)
            if v < best_val:
                best_val, best_a = v, a
            if q_td.convex:
                lower = max(lower, lo)
        if not q_td.convex:
            notes.append("search-certified: metric not declared convex")
    else:
        notes.append("gradient-free coordinate search")
        verts = _random_vertices(A, b, identity.shape, rng, 4 * starts)
        for st in [identity] + verts[:starts]:
            a, v = st, q_td.evaluate(_x2y_joint(P, st))
            for _ in range(50):
                improved = False
                for vt in verts:
                    fv, t = _line_min(lambda t: q_td.evaluate(_x2y_joint(P, a + t * (vt - a))), iters=30)
                    if fv < v - 1e-14:
                        a, v, improved = a + t * (vt - a), fv, True
                if not improved:
                    break
            if v < best_val:
                best_val, best_a = v, a
    slack = best_val - baseline
    if q_td.convex and q_td.gradient is not None and lower - baseline >= -tol:
        verdict = _verdict(max(slack, lower - baseline), tol)
    else:
        verdict = _verdict(slack, tol)
    full = np.zeros((c.J, K, c.J))
    for x in range(c.J):
        full[x, :, x] = 1.0
    full[np.ix_(s, np.arange(K), s)] = best_a
    cert = MaximalityCertificate(best_val, baseline, full, slack, verdict, tol, tuple(notes))
    return cert.is_member, cert


# --------------------------------------------------------------------------
# Auxiliary-channel set via the exchanged game


def coupling_polytope(w: np.ndarray, v: np.ndarray) -> Polytope:
    """Couplings with Y-marginal w and Yhat-marginal v, flattened as [x, y, yhat]."""
    J, K = w.shape
    idx = np.arange(J * K * K).reshape(J, K, K)
    rows, rhs = [], []
    for x in range(J):
        for y in range(K):
            r = np.zeros(J * K * K)
            r[idx[x, y, :]] = 1.0
            rows.append(r)
            rhs.append(w[x, y])
        for h in range(K):
            r = np.zeros(J * K * K)
            r[idx[x, :, h]] = 1.0
            rows.append(r)
            rhs.append(v[x, h])
    return Polytope(np.array(rows), np.array(rhs))


@dataclass(frozen=True, eq=False)
class VmaxResult:
    member: bool
    game_value: float
    baseline: float
    coupling: np.ndarray  # maximizing coupling, J x K x K (support letters filled from the product)
    adversary: np.ndarray


def in_v_max(v, px, w, q, tol: float = DEFAULT_TOL) -> VmaxResult:
    """Decide whether the auxiliary channel v admits a maximal coupling with w.

    Solves max over couplings with marginals (w, v) of the min over
    adversaries of E[q(X2, Y)] as one bilinear game.
    """
    v, w, px, q = as_channel(v), as_channel(w), as_distribution(px), as_metric(q)
    if v.rows.shape != w.rows.shape or len(px) != w.J or q.values.shape != w.rows.shape:
        raise DomainError("shape mismatch between v, w, px and q")
    s = _support(px)
    p = px.probs[s]
    ws, vs, qs = w.rows[s], v.rows[s], q.values[s]
    Js, K = ws.shape
    X = coupling_polytope(ws, vs)
    Pxh = p[:, None] * vs
    fake = np.zeros((Js, K, K))
    fake[:, 0, :] = Pxh  # only the (x, yhat) marginal enters the constraint rows
    A, b = _adversary_polytope(fake)
    Y = Polytope(A, b)
    # payoff[(x, y, h), (x1, h1, x2)] = p(x) q(x2, y) [x = x1][h = h1]
    M = np.zeros((Js, K, K, Js, K, Js))
    for x in range(Js):
        for h in range(K):
            M[x, :, h, x, h, :] = p[x] * qs.T
    game = solve_bilinear_game(M.reshape(Js * K * K, Js * K * Js), X, Y)
    baseline = float((p[:, None] * ws * qs).sum())
    cpl = np.einsum("jk,jl->jkl", w.rows, v.rows)
    cpl[s] = game.max_strategy.reshape(Js, K, K)
    return VmaxResult(
        bool(game.value >= baseline - tol),
        game.value,
        baseline,
        cpl,
        game.min_strategy.reshape(Js, K, Js),
    )
