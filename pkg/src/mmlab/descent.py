"""Certified descent over maximal couplings.

Couplings here are support-restricted arrays c[x, y, yhat] (rows of c[x]
sum to 1). A certifier decides maximality of a coupling and proposes
polyhedral regions in (c, mu) around it whose points carry a certificate:

* additive metric: for an optimal dual (mu, lam) of the adversary LP, weak
  duality makes every c satisfying the dual-feasibility rows with that lam
  and "dual objective >= baseline" maximal;
* type-dependent convex metric: linearizing q_td at the worst adversary's
  joint gives an additive metric g with
  min_a q_td >= q_td(z0) - g.z0 + adversary LP value under g,
  and the baseline q_td(P_{X1 Y}(c)) is linearized at the current point. The
  region is then only approximately certified, so each accepted step is
  re-checked exactly.

Each descent step minimizes the linearized objective over one region (a
Frank-Wolfe vertex), line-searches on the segment, and backtracks until the
exact certificate holds.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .lp import LpNumericalError, solve_lp_general
from .maximality import (
    DEFAULT_TOL,
    _adversary_polytope,
    _fw_td,
    _line_min,
    _x2y_joint,
    adversary_lp,
    adversary_value,
)
from .probability import LN2, Coupling, conditional_kl_arrays, mutual_information_arrays


@dataclass(frozen=True)
class InnerOptions:
    n_starts: int = 32
    seed: int = 0
    max_iter: int = 60
    patience: int = 3
    improve_tol: float = 1e-7
    tol: float = DEFAULT_TOL
    dirichlet_alpha: float = 0.5
    extra_duals: int = 0
    screen_iter: int = 5
    keep: int = 4
    backtracks: int = 20
    restore_factor: int = 5


# --------------------------------------------------------------------------
# Objectives (bits)


def mi_objective(px):
    """I(px, V) with V = c summed over y."""

    def f(c):
        return mutual_information_arrays(px, c.sum(axis=1))

    def grad(c):
        V = c.sum(axis=1)
        P = px @ V
        g = px[:, None] * (np.log(np.maximum(V, 1e-12)) - np.log(np.maximum(P, 1e-12))[None, :]) / LN2
        return np.broadcast_to(g[:, None, :], c.shape).copy()

    return f, grad


def kl_objective(px, w):
    """D(A || w | px) with A = c summed over yhat."""
    logw = np.log(np.where(w > 0, w, 1.0))

    def f(c):
        return conditional_kl_arrays(c.sum(axis=2), w, px)

    def grad(c):
        A = c.sum(axis=2)
        g = px[:, None] * (np.log(np.maximum(A, 1e-12)) - logw + 1.0) / LN2
        return np.broadcast_to(g[:, :, None], c.shape).copy()

    return f, grad


# --------------------------------------------------------------------------
# Feasible-set plumbing


def fixed_marginal_projector(w):
    """Clip and rescale so that c[x, y, :] sums to w[x, y]."""

    def project(c):
        c = np.maximum(c, 0.0)
        s = c.sum(axis=2, keepdims=True)
        return np.where(s > 0, c * (w[:, :, None] / np.where(s > 0, s, 1.0)), 0.0)

    return project


def free_marginal_projector(allowed):
    """Clip, zero the disallowed (x, y) rows and rescale each c[x] to sum 1."""

    def project(c):
        c = np.where(allowed[:, :, None], np.maximum(c, 0.0), 0.0)
        return c / c.sum(axis=(1, 2), keepdims=True)

    return project


def fixed_marginal_rows(w):
    """Equalities sum_yhat c[x, y, yhat] = w[x, y]."""
    J, K = w.shape
    A = np.zeros((J * K, J * K * K))
    for x in range(J):
        for y in range(K):
            A[x * K + y, (x * K + y) * K : (x * K + y + 1) * K] = 1.0
    return A, w.ravel().copy()


def free_marginal_rows(allowed):
    """sum c[x] = 1 per x and c[x, y, :] = 0 where y is not allowed."""
    J, K = allowed.shape
    n = J * K * K
    rows, rhs = [], []
    for x in range(J):
        r = np.zeros(n)
        r[x * K * K : (x + 1) * K * K] = 1.0
        rows.append(r)
        rhs.append(1.0)
        for y in range(K):
            if not allowed[x, y]:
                for h in range(K):
                    r = np.zeros(n)
                    r[(x * K + y) * K + h] = 1.0
                    rows.append(r)
                    rhs.append(0.0)
    return np.array(rows), np.array(rhs)


def as_coupling_on_support(c):
    """View a support-restricted array as a Coupling (rows renormalized)."""
    return Coupling(c / c.sum(axis=(1, 2), keepdims=True))


# --------------------------------------------------------------------------
# Certificates


def certificate_rows(px, qv, lam, floor, base=None, const=0.0):
    """Inequalities in (c, mu) under which (mu, lam) certifies c.

    Dual feasibility, one row per (x1, h, x2):
        mu[x1, h] + sum_y px[x1] (lam[x2, h] - qv[x2, y]) c[x1, y, h] <= 0.
    Certificate row: base.c - sum_{x,y,h} px[x] lam[x, h] c[x, y, h] - sum mu <= const - floor,
    where base.c is the (linearized) baseline; by default the additive
    baseline sum px q c.
    """
    J, K = qv.shape
    nc, nm = J * K * K, J * K
    A = np.zeros((J * K * J + 1, nc + nm))
    r = 0
    for x1 in range(J):
        for h in range(K):
            for x2 in range(J):
                blk = np.zeros((J, K, K))
                blk[x1, :, h] = px[x1] * (lam[x2, h] - qv[x2, :])
                A[r, :nc] = blk.ravel()
                A[r, nc + x1 * K + h] = 1.0
                r += 1
    if base is None:
        base = px[:, None, None] * np.broadcast_to(qv[:, :, None], (J, K, K))
    A[r, :nc] = (base - px[:, None, None] * lam[:, None, :]).ravel()
    A[r, nc:] = -1.0
    b = np.zeros(A.shape[0])
    b[-1] = const - floor
    return A, b


def dual_candidates(c, px, qv, rng=None, extra=0):
    """Optimal adversary-LP duals lam at c, found by solving the dual LP directly.

    The optimal dual face is usually not a single point and the certified
    region depends on which lam is used. The first candidate is the vertex
    the simplex lands on; `extra` more come from random secondary objectives
    over the optimal face.
    """
    J, K = qv.shape
    P = px[:, None, None] * c
    lp = adversary_lp(P, qv)
    A, b, cost = lp.A_eq, lp.b_eq, lp.c
    m = A.shape[0]
    free = np.ones(m, dtype=bool)
    try:
        base = solve_lp_general(-b, A.T, cost, free=free)
    except LpNumericalError:
        return []
    if not base.optimal:
        return []
    vstar = -base.objective
    ys = [base.x]
    if extra:
        A_face = np.vstack([A.T, -b[None, :]])
        b_face = np.append(cost, -vstar + 1e-12 * (1.0 + abs(vstar)))
        for _ in range(extra):
            try:
                sol = solve_lp_general(rng.normal(size=m), A_face, b_face, free=free)
            except LpNumericalError:
                continue
            if sol.optimal:
                ys.append(sol.x)
    return [y[J * K :].reshape(J, K) for y in ys]


class AdditiveCertifier:
    """Maximality for an additive metric via the adversary LP."""

    exact_regions = True

    def __init__(self, px, qv, tol=DEFAULT_TOL, extra_duals=0, seed=0):
        self.px, self.qv, self.tol = px, qv, tol
        self.extra_duals = extra_duals
        self.rng = np.random.default_rng(seed)

    def slack(self, c):
        cert = adversary_value(as_coupling_on_support(c), self.px, self.qv, self.tol)
        return cert.slack, cert

    def regions(self, c, slack, cert):
        lams = [cert.duals["lam"]] + dual_candidates(c, self.px, self.qv, self.rng, self.extra_duals)
        return [certificate_rows(self.px, self.qv, lam, min(0.0, slack)) for lam in lams]


class TdCertifier:
    """Maximality for a convex type-dependent metric.

    The slack reported is certified from below by the Frank-Wolfe gap of the
    adversary minimization.
    """

    exact_regions = False

    def __init__(self, px, q_td, tol=DEFAULT_TOL):
        self.px, self.q_td, self.tol = px, q_td, tol
        self.grad = q_td.gradient if q_td.gradient is not None else _numeric_gradient(q_td.evaluate)

    def _metric(self):
        from .maximality import TypeDependentMetric

        return TypeDependentMetric(self.q_td.evaluate, self.grad, True, self.q_td.name)

    def slack(self, c):
        P = self.px[:, None, None] * c
        J, K, _ = P.shape
        A, b = _adversary_polytope(P)
        identity = np.zeros((J, K, J))
        for x in range(J):
            identity[x, :, x] = 1.0
        val, a, lower = _fw_td(P, self._metric(), A, b, identity)
        baseline = self.q_td.evaluate(P.sum(axis=2))
        slack = lower - baseline
        return slack, {"z0": _x2y_joint(P, a), "value": val, "baseline": baseline}

    def regions(self, c, slack, cert):
        px = self.px
        z0 = cert["z0"]
        g = self.grad(z0)
        const = self.q_td.evaluate(z0) - float((g * z0).sum())
        P1 = px[:, None] * c.sum(axis=2)
        h = self.grad(P1)
        J, K, _ = c.shape
        base = px[:, None, None] * np.broadcast_to(h[:, :, None], (J, K, K))
        # baseline(c') ~ q(P1) + base.(c' - c)
        lin_const = const - (self.q_td.evaluate(P1) - float((base * c).sum()))
        sol_lams = dual_candidates(c, px, g)
        return [certificate_rows(px, g, lam, min(0.0, slack), base=base, const=lin_const) for lam in sol_lams]


def _numeric_gradient(fn, eps=1e-7):
    def grad(P):
        G = np.zeros_like(P)
        for idx in np.ndindex(P.shape):
            E = np.zeros_like(P)
            E[idx] = eps
            G[idx] = (fn(P + E) - fn(P - E)) / (2 * eps)
        return G

    return grad


# --------------------------------------------------------------------------
# Descent


@dataclass
class DescentResult:
    coupling: np.ndarray
    value: float
    slack: float
    iterations: int
    excess: float = 0.0  # rate violation mi(c) - rate, 0 when feasible


def _excess(c, rate, mi):
    return 0.0 if rate is None else max(0.0, mi[0](c) - rate)


def _better(a, b, tol=1e-12):
    """Compare (excess, value) pairs: feasibility first, then value."""
    if a[0] > tol or b[0] > tol:
        return a[0] < b[0] - tol
    return a[1] < b[1]


def certified_descent(c0, f, grad, A_eq, b_eq, project, certifier, opts: InnerOptions, rate=None, mi=None):
    """Frank-Wolfe descent that keeps every iterate certified maximal.

    `c0` must be certified. With `rate`, mi = (value, gradient) functions
    and the target is mi(c) <= rate. A start above the rate is first moved
    down to it, each step minimizing the linearized objective under the
    linearized rate row, so the rate is restored along a cheap path.
    """
    J, K, _ = c0.shape
    nc, nm = J * K * K, J * K
    c = c0.copy()
    key = (_excess(c, rate, mi), f(c))
    slack, cert = certifier.slack(c)
    history = [key[1]]
    Aeq = np.hstack([A_eq, np.zeros((A_eq.shape[0], nm))])
    free = np.zeros(nc + nm, dtype=bool)
    free[nc:] = True
    it = steps = 0
    # restoration steps (above the rate) have their own, larger budget
    while it < opts.max_iter and steps < opts.max_iter * opts.restore_factor:
        steps += 1
        g = grad(c).ravel()
        best = None
        for A_ub, b_ub in certifier.regions(c, slack, cert):
            step = _region_step(c, g, f, A_ub, b_ub, Aeq, b_eq, free, project, rate, mi)
            if step is None:
                continue
            accepted = _accept(c, key, step, f, project, certifier, opts, rate, mi)
            if accepted is not None and (best is None or _better(accepted[0], best[0])):
                best = accepted
        if best is None or not _better(best[0], key):
            break
        key, c, slack, cert = best
        if key[0] > 0:
            continue
        it += 1
        history.append(key[1])
        if len(history) > opts.patience and history[-1 - opts.patience] - key[1] < opts.improve_tol:
            break
    return DescentResult(c, key[1], slack, it, key[0])


def _region_step(c, g, f, A_ub, b_ub, Aeq, b_eq, free, project, rate, mi):
    """Frank-Wolfe vertex over one region and a step size toward it.

    Returns (direction, t) or None.
    """
    nc = c.size
    nm = free.size - nc
    over = False
    if rate is not None:
        mi_f, mi_g = mi
        m0 = mi_f(c)
        over = m0 > rate
        gi = mi_g(c).ravel()
        A_lin = np.vstack([A_ub, np.concatenate([gi, np.zeros(nm)])])
        b_lin = np.append(b_ub, rate - m0 + gi @ c.ravel())
        sol = _solve(np.concatenate([g, np.zeros(nm)]), A_lin, b_lin, Aeq, b_eq, free)
        if sol is None and over:
            # linearized rate row unreachable: steepest MI decrease instead
            sol = _solve(np.concatenate([gi, np.zeros(nm)]), A_ub, b_ub, Aeq, b_eq, free)
    else:
        sol = _solve(np.concatenate([g, np.zeros(nm)]), A_ub, b_ub, Aeq, b_eq, free)
    if sol is None:
        return None
    s = project(sol.x[:nc].reshape(c.shape))
    d = s - c
    if not over:
        if float(g @ (c.ravel() - s.ravel())) <= 1e-12:
            return None
        tmax = 1.0
        if rate is not None and mi[0](c + d) > rate:
            tmax = _bisect(lambda t: mi[0](c + t * d) <= rate, 0.0, 1.0, want_low=True)
        if tmax <= 0.0:
            return None
        _, t = _line_min(lambda t: f(c + t * d), 0.0, tmax, iters=40)
        return d, t
    # above the rate: reach it with the smallest step, else reduce MI as far as possible
    if mi[0](c + d) <= rate:
        tmin = _bisect(lambda t: mi[0](c + t * d) <= rate, 0.0, 1.0, want_low=False)
        _, t = _line_min(lambda t: f(c + t * d), tmin, 1.0, iters=40)
        return d, t
    fv, t = _line_min(lambda t: mi[0](c + t * d), 0.0, 1.0, iters=40)
    if fv >= mi[0](c) - 1e-15:
        return None
    return d, t


def _solve(cost, A_ub, b_ub, Aeq, b_eq, free):
    try:
        sol = solve_lp_general(cost, A_ub, b_ub, Aeq, b_eq, free)
    except LpNumericalError:
        return None
    return sol if sol.optimal else None


def _bisect(ok, lo, hi, want_low, iters=50):
    """Boundary of {t : ok(t)} in [lo, hi].

    want_low: ok holds at lo, return the largest ok point found.
    Otherwise ok holds at hi, return the smallest ok point found.
    """
    for _ in range(iters):
        m = 0.5 * (lo + hi)
        if ok(m) == want_low:
            lo = m
        else:
            hi = m
    return lo if want_low else hi


def _accept(c, key, step, f, project, certifier, opts, rate, mi):
    """Shrink the step until the exact certificate holds and the point improves."""
    d, t = step
    for _ in range(opts.backtracks):
        if t <= 1e-12:
            return None
        cand = project(c + t * d)
        ckey = (_excess(cand, rate, mi), f(cand))
        if _better(ckey, key):
            slack, cert = certifier.slack(cand)
            if slack >= -opts.tol:
                return ckey, cand, slack, cert
        t *= 0.5
    return None


def shrink_to_certified(c, anchor, certifier, tol, feasible=None, iters=20):
    """Mix c toward a certified anchor until the mixture is certified.

    Returns the mixture closest to c found by bisection on the weight, or
    the anchor itself.
    """

    def ok(x):
        return (feasible is None or feasible(x)) and certifier.slack(x)[0] >= -tol

    if ok(c):
        return c
    lo, hi = 0.0, 1.0
    for _ in range(iters):
        m = 0.5 * (lo + hi)
        if ok((1 - m) * c + m * anchor):
            hi = m
        else:
            lo = m
    return (1 - hi) * c + hi * anchor


def multistart(starts, f, grad, A_eq, b_eq, project, certifier, opts: InnerOptions, rate=None, mi=None):
    """Short runs from every start, then full runs from the best distinct few."""
    short = replace(opts, max_iter=opts.screen_iter)
    screened = [certified_descent(c0, f, grad, A_eq, b_eq, project, certifier, short, rate, mi) for c0 in starts]
    order = sorted(range(len(screened)), key=lambda i: (screened[i].excess, screened[i].value))
    kept = []
    for i in order:
        if len(kept) == opts.keep:
            break
        if all(np.abs(screened[i].coupling - screened[k].coupling).max() > 1e-4 for k in kept):
            kept.append(i)
    best = None
    for i in kept:
        res = certified_descent(screened[i].coupling, f, grad, A_eq, b_eq, project, certifier, opts, rate, mi)
        if best is None or _better((res.excess, res.value), (best.excess, best.value)):
            best = res
    return best
