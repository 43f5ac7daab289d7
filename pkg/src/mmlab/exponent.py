"""Sphere-packing exponent of the q-decoder and its rate curve.

esp(px, w, q, R) is the smallest D(A || W | px) over couplings P(y', yhat | x)
that are maximal for (q, px), have Y'-marginal A and auxiliary channel V
with I(px, V) <= R. Values are in bits. The search is the certified descent
of mmlab.descent with a free Y'-marginal and the rate kept as a constraint,
so every reported value comes with a maximal witness and is an upper bound
on the true minimum.

Two couplings are always available:

* the diagonal coupling (Y' = Yhat = Y) is maximal with value 0 and
  I(px, V) = I(px, W);
* the product coupling (Y' ~ r independent of X, Yhat independent of
  everything) is maximal with I(px, V) = 0. Taking r proportional to the
  px-weighted geometric mean of the rows of W minimizes its divergence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .bounds import _expand, _restrict, inner_min_mi
from .descent import (
    AdditiveCertifier,
    InnerOptions,
    TdCertifier,
    certified_descent,
    free_marginal_projector,
    free_marginal_rows,
    kl_objective,
    mi_objective,
    shrink_to_certified,
)
from .maximality import DEFAULT_TOL, adversary_value, is_maximal_td
from .probability import (
    Coupling,
    DomainError,
    as_channel,
    as_coupling,
    as_distribution,
    conditional_kl,
    marginal_y,
    marginal_yhat,
    mutual_information,
    conditional_kl_arrays,
    mutual_information_arrays,
)
from .types_lab import zeta_n

EXPONENT_OPTIONS = InnerOptions(n_starts=4, max_iter=40, keep=3)
DELTA_N = "O(log n / n)"


@dataclass(frozen=True, eq=False)
class ExponentCurve:
    """Points (rate bits, exponent bits, witness id, certified)."""

    points: tuple
    px: np.ndarray
    ids: tuple = ("", "")  # (channel id, metric id)
    n_display: dict | None = None
    witnesses: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        rates = [p[0] for p in self.points]
        if any(b <= a for a, b in zip(rates, rates[1:])):
            raise DomainError("curve rates must be strictly increasing")
        cert = [p[1] for p in self.points if p[3]]
        if any(b > a + 1e-9 for a, b in zip(cert, cert[1:])):
            raise DomainError("certified exponents must be non-increasing in the rate")

    def to_dict(self) -> dict:
        def num(v):
            return v if math.isfinite(v) else str(v)

        return {
            "points": [[float(r), num(float(e)), wid, bool(c)] for r, e, wid, c in self.points],
            "px": [float(v) for v in self.px],
            "ids": list(self.ids),
            "n_display": self.n_display,
            "witnesses": {k: as_coupling(c).per_input.tolist() for k, c in self.witnesses.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExponentCurve":
        points = tuple((float(r), float(e), str(wid), bool(c)) for r, e, wid, c in d["points"])
        wits = {k: Coupling(np.asarray(v, dtype=float)) for k, v in d.get("witnesses", {}).items()}
        return cls(points, np.asarray(d["px"], dtype=float), tuple(d.get("ids", ("", ""))), d.get("n_display"), wits)

    @property
    def rates(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    @property
    def values(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])

    @property
    def certified(self) -> np.ndarray:
        return np.array([p[3] for p in self.points], dtype=bool)


def product_coupling(px, w, yhat=None):
    """Coupling with Y' ~ r independent of X and Yhat independent of (X, Y').

    r is proportional to prod_x w[x]^px[x] on the letters every used row
    allows. `yhat` is a distribution on the K output letters (uniform by
    default). Returns None if the used rows share no output letter.
    """
    px = np.asarray(px, dtype=float)
    w = np.asarray(w, dtype=float)
    K = w.shape[1]
    used = px > 0
    common = (w[used] > 0).all(axis=0)
    if not common.any():
        return None
    logr = np.full(K, -np.inf)
    logr[common] = px[used] @ np.log(w[used][:, common])
    r = np.exp(logr - logr[common].max())
    r /= r.sum()
    h = np.full(K, 1.0 / K) if yhat is None else np.asarray(yhat, dtype=float)
    return np.broadcast_to(np.outer(r, h), (w.shape[0], K, K)).copy()


def _diagonal_lagrangian(px, w, beta, iters=2000, tol=1e-13):
    """Minimizer of D(A || w | px) + beta I(px, A) by alternating minimization.

    With I(px, A) = min_Q sum_x px D(A_x || Q), the A-step is
    A_x proportional to w_x^(1/(1+beta)) Q^(beta/(1+beta)) and the Q-step is
    Q = px @ A. Both problems are convex, so the iteration reaches the
    global minimizer.
    """
    a = 1.0 / (1.0 + beta)
    logw = np.log(np.where(w > 0, w, 1.0))
    A = w.copy()
    for _ in range(iters):
        Q = px @ A
        with np.errstate(divide="ignore"):
            logA = a * logw + (1 - a) * np.log(Q)[None, :]
        logA = np.where(w > 0, logA, -np.inf)
        new = np.exp(logA - logA.max(axis=1, keepdims=True))
        new /= new.sum(axis=1, keepdims=True)
        if np.abs(new - A).max() < tol:
            return new
        A = new
    return A


def diagonal_exponent(px, w, rate: float):
    """min D(A || w | px) subject to I(px, A) <= rate, in bits.

    Every coupling with Yhat = Y' is maximal, so this convex problem bounds
    esp from above. Solved through its Lagrangian with bisection on the
    multiplier. Returns (value_bits, A).
    """
    px = np.asarray(px, dtype=float)
    w = np.asarray(w, dtype=float)
    if mutual_information_arrays(px, w) <= rate:
        return 0.0, w.copy()
    lo, hi = 0.0, 1.0
    while mutual_information_arrays(px, _diagonal_lagrangian(px, w, hi)) > rate:
        hi *= 2.0
        if hi > 1e6:
            break
    A = _diagonal_lagrangian(px, w, hi)
    for _ in range(60):
        m = 0.5 * (lo + hi)
        Am = _diagonal_lagrangian(px, w, m)
        if mutual_information_arrays(px, Am) <= rate:
            hi, A = m, Am
        else:
            lo = m
    return conditional_kl_arrays(A, w, px), A


BETAS = tuple(np.geomspace(0.005, 50.0, 24))


class _Problem:
    """Restricted search problem: couplings c[x, y', yhat] on the support of px."""

    def __init__(self, p, ws, certifier, opts):
        self.p, self.ws, self.cf, self.opts = p, ws, certifier, opts
        self.allowed = ws > 0
        self.f, self.grad = kl_objective(p, ws)
        self.mi = mi_objective(p)
        self.A_eq, self.b_eq = free_marginal_rows(self.allowed)
        self.project = free_marginal_projector(self.allowed)

    def certified(self, c):
        return self.cf.slack(c)[0] >= -self.opts.tol

    def descend(self, c, f, grad, rate=None, opts=None):
        opts = opts or self.opts
        mi = self.mi if rate is not None else None
        return certified_descent(c, f, grad, self.A_eq, self.b_eq, self.project, self.cf, opts, rate, mi)

    def lagrangian_path(self, starts, betas=BETAS):
        """Minimizers of D + beta * I for increasing beta, warm-started along beta.

        Small beta stays near a zero-divergence start; large beta approaches
        the zero-rate end. Every point is certified.
        """
        path = []
        for c in starts:
            for beta in betas:
                f = lambda x, b=beta: self.f(x) + b * self.mi[0](x)  # noqa: E731
                g = lambda x, b=beta: self.grad(x) + b * self.mi[1](x)  # noqa: E731
                c = self.descend(c, f, g).coupling
                path.append(c)
        return path

    def pool(self, extra=()):
        """Certified couplings with I = 0 or given as extras, plus random ones."""
        Js, K = self.ws.shape
        out = [c for c in extra if c is not None and self.certified(c)]
        anchor = product_coupling(self.p, self.ws)
        if anchor is not None:
            out += [anchor, product_coupling(self.p, self.ws, np.eye(K)[0])]
            rng = np.random.default_rng(self.opts.seed)
            for _ in range(self.opts.n_starts):
                c = np.where(self.allowed[:, :, None], rng.gamma(self.opts.dirichlet_alpha, size=(Js, K, K)), 0.0)
                out.append(shrink_to_certified(self.project(c), anchor, self.cf, self.opts.tol))
        return out

    def best_at(self, rate, candidates):
        """Polish the best few feasible candidates under the rate constraint."""
        feas = [c for c in candidates if self.mi[0](c) <= rate + 1e-12]
        if not feas:
            return math.inf, None
        feas.sort(key=self.f)
        kept = []
        for c in feas:
            if len(kept) == self.opts.keep:
                break
            if all(np.abs(c - k).max() > 1e-4 for k in kept):
                kept.append(c)
        best_v, best_c = self.f(kept[0]), kept[0]
        for c in kept:
            res = self.descend(c, self.f, self.grad, rate)
            if res.excess <= 1e-12 and res.value < best_v:
                best_v, best_c = res.value, res.coupling
        return best_v, best_c


def esp(px, w, q, rate: float, opts: InnerOptions = EXPONENT_OPTIONS, extra_starts=(), zero_rate=None, _path=None):
    """Certified sphere-packing exponent value at `rate` (bits).

    Returns (value_bits, witness Coupling over (Y', Yhat), MaximalityCertificate).
    If no certified feasible coupling is found the result is (inf, None, None).
    `extra_starts` are full couplings added to the candidate pool.
    `zero_rate` is a precomputed inner_min_mi result (value, coupling); it is
    computed here when omitted.
    """
    if not rate >= 0:
        raise DomainError(f"rate must be >= 0, got {rate}")
    px = as_distribution(px)
    w = as_channel(w)
    s, p, ws, qs = _restrict(px, w, q)
    if mutual_information_arrays(p, ws) <= rate:
        witness = Coupling.diagonal(w)
        return 0.0, witness, adversary_value(witness, px, q, opts.tol)
    i_star, c_star = zero_rate if zero_rate is not None else inner_min_mi(px, w, q, opts)[:2]
    if i_star <= rate:
        return 0.0, c_star, adversary_value(c_star, px, q, opts.tol)
    prob = _Problem(p, ws, AdditiveCertifier(p, qs, opts.tol, opts.extra_duals, opts.seed), opts)
    if _path is None:
        _path = prob.lagrangian_path([_restrict_coupling(c_star, s, ws)])
    extras = [_restrict_coupling(c, s, ws) for c in extra_starts]
    extras.append(_diagonal_start(p, ws, rate))
    value, c = prob.best_at(rate, _path + prob.pool(extras))
    if c is None:
        return math.inf, None, None
    witness = _expand(c, s, w.rows)
    value = conditional_kl(marginal_y(witness), w, px)
    return value, witness, adversary_value(witness, px, q, opts.tol)


def _diagonal_start(p, ws, rate):
    A = diagonal_exponent(p, ws, rate)[1]
    return np.einsum("jk,kl->jkl", A, np.eye(A.shape[1]))


def _restrict_coupling(c, s, ws):
    c = np.asarray(c.per_input if isinstance(c, Coupling) else c, dtype=float)[s]
    return np.where((ws > 0)[:, :, None], c, 0.0)


def esp_curve(px, w, q, r_min: float, r_max: float, steps: int, opts: InnerOptions = EXPONENT_OPTIONS, ids=("", "")):
    """Exponent on an even rate grid.

    Rates at or above the certified inner-min MI (couplings with Y' = Y) get
    value 0. Below it every rate draws on one shared Lagrangian path and on
    the witnesses of the rates above it. A final pass makes the curve
    non-increasing by reusing witnesses from lower rates, which stay
    feasible at higher rates.
    """
    if not r_min < r_max or steps < 2:
        raise DomainError("need r_min < r_max and steps >= 2")
    if r_min < 0:
        raise DomainError("rates must be >= 0")
    px = as_distribution(px)
    w = as_channel(w)
    rates = np.linspace(r_min, r_max, steps)
    i_star, c_star, _ = inner_min_mi(px, w, q, opts)
    s, p, ws, qs = _restrict(px, w, q)
    path = None
    if rates[0] < i_star:
        prob = _Problem(p, ws, AdditiveCertifier(p, qs, opts.tol, opts.extra_duals, opts.seed), opts)
        path = prob.lagrangian_path([_restrict_coupling(c_star, s, ws)])
    vals = [math.inf] * steps
    wits: list = [None] * steps
    found = []
    for i in range(steps - 1, -1, -1):
        r = float(rates[i])
        if r >= i_star:
            vals[i], wits[i] = 0.0, c_star
            continue
        v, c, _ = esp(px, w, q, r, opts, extra_starts=found, zero_rate=(i_star, c_star), _path=path)
        vals[i], wits[i] = v, c
        if c is not None:
            found.append(c)
    for i in range(1, steps):
        if vals[i - 1] < vals[i]:
            vals[i], wits[i] = vals[i - 1], wits[i - 1]
    witnesses, points, seen = {}, [], {}
    for i in range(steps):
        wid = ""
        if wits[i] is not None:
            key = id(wits[i])
            if key not in seen:
                seen[key] = f"w{len(seen)}"
                witnesses[seen[key]] = wits[i]
            wid = seen[key]
        points.append((float(rates[i]), float(vals[i]), wid, wits[i] is not None))
    return ExponentCurve(tuple(points), px.probs.copy(), tuple(ids), None, witnesses)


def finite_n_annotation(curve: ExponentCurve, n: int, J: int, K: int) -> ExponentCurve:
    """Shift the rate axis by -zeta_n so each point reads at block length n.

    The exponent values are untouched. The additive delta_n correction has
    no explicit constant and is carried only as the symbol DELTA_N.
    """
    if n < 1:
        raise DomainError("n must be >= 1")
    z = zeta_n(n, J, K)
    points = tuple((r - z, e, wid, cert) for r, e, wid, cert in curve.points)
    info = {"n": int(n), "zeta_n": z, "delta_n": DELTA_N, "raw_rates": [p[0] for p in curve.points]}
    return replace(curve, points=points, n_display=info)


def esp_td(px, w, q_td, rate: float, opts: InnerOptions = EXPONENT_OPTIONS, extra_starts=()):
    """Exponent with a convex type-dependent metric.

    Searches couplings whose worst adversary cannot lower q_td below the
    value of the sent input; the auxiliary channel of such a coupling is in
    the type-dependent V_max set. Returns (value_bits, witnesses) where
    witnesses holds the coupling, its Y'- and Yhat-marginals and the
    adversary slack; value is inf if no certified point is found.
    """
    if not rate >= 0:
        raise DomainError(f"rate must be >= 0, got {rate}")
    if not q_td.convex:
        raise DomainError("esp_td needs a metric declared convex")
    px = as_distribution(px)
    w = as_channel(w)
    J, K = w.rows.shape
    s, p, ws, _ = _restrict(px, w, np.zeros((J, K)))
    if mutual_information_arrays(p, ws) <= rate:
        witness = Coupling.diagonal(w)
        value = 0.0
    else:
        prob = _Problem(p, ws, TdCertifier(p, _restricted_td(q_td, s, J)), opts)
        diag = np.einsum("jk,kl->jkl", ws, np.eye(K))
        extras = [_restrict_coupling(c, s, ws) for c in extra_starts]
        starts = [c for c in [diag, *extras] if prob.certified(c)]
        extras.append(_diagonal_start(p, ws, rate))
        value, c = prob.best_at(rate, prob.lagrangian_path(starts) + prob.pool(extras))
        if c is None:
            return math.inf, {}
        witness = _expand(c, s, w.rows)
        value = conditional_kl(marginal_y(witness), w, px)
    ok, cert = is_maximal_td(witness, px, q_td, DEFAULT_TOL)
    return value, {
        "coupling": witness,
        "y_prime": marginal_y(witness),
        "auxiliary": marginal_yhat(witness),
        "mutual_information": mutual_information(px, marginal_yhat(witness)),
        "certificate": cert,
        "certified": bool(ok),
    }


def _restricted_td(q_td, s, J):
    """View a metric on J x K joints as one on the rows in s (others zero)."""
    if s.size == J:
        return q_td

    def lift(P):
        full = np.zeros((J, P.shape[1]))
        full[s] = P
        return full

    grad = None if q_td.gradient is None else (lambda P: np.asarray(q_td.gradient(lift(P)))[s])
    return replace(q_td, evaluate=lambda P: q_td.evaluate(lift(P)), gradient=grad)
