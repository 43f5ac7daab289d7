"""Upper bounds on the mismatch capacity.

Three bounds are computed:

* corollary1_bound: the capacity of the auxiliary channel of one coupling
  that is maximal for every input distribution (grid-checked).
* full_bound: max over an input grid of the smallest I(px, V) over couplings
  that are maximal at px and have Y-marginal W.
* prior_bound: the same max-min over the smaller support-defined set, which
  is a convex program at each px.

The inner minimization of full_bound runs the certified descent of
mmlab.descent, so every reported witness is certified maximal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .descent import (
    AdditiveCertifier,
    InnerOptions,
    fixed_marginal_projector,
    fixed_marginal_rows,
    mi_objective,
    multistart,
    shrink_to_certified,
)
from .maximality import (
    DEFAULT_TOL,
    adversary_value,
    is_maximal_universal,
    prior_support_mask,
    simplex_grid,
)
from .probability import (
    LN2,
    Channel,
    Coupling,
    DomainError,
    as_channel,
    as_coupling,
    as_distribution,
    as_metric,
    blahut_arimoto_capacity,
    marginal_y,
    marginal_yhat,
    mutual_information,
)

FULL_GRID_CAVEAT = (
    "inner values are certified upper bounds on the inner minimum at each grid point "
    "and the outer maximum is grid-restricted: an estimate of the max-min, not a certified "
    "bound on the mismatch capacity"
)


@dataclass(frozen=True, eq=False)
class BoundReport:
    value_bits: float
    mode: str  # "corollary1" | "full-grid" | "prior"
    witness: np.ndarray | None
    witness_px: np.ndarray | None
    certificates: dict = field(default_factory=dict)
    caveats: tuple = ()
    certified: bool = True

    def to_dict(self) -> dict:
        def enc(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, float) and not math.isfinite(v):
                return str(v)
            if isinstance(v, dict):
                return {str(k): enc(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [enc(x) for x in v]
            if isinstance(v, np.generic):
                return v.item()
            return v

        return {
            "value_bits": enc(float(self.value_bits)),
            "mode": self.mode,
            "witness": enc(self.witness),
            "witness_px": enc(self.witness_px),
            "certificates": enc(self.certificates),
            "caveats": list(self.caveats),
            "certified": self.certified,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoundReport":
        def dec(v):
            return None if v is None else np.asarray(v, dtype=float)

        val = d["value_bits"]
        return cls(
            float(val),
            d["mode"],
            dec(d["witness"]),
            dec(d["witness_px"]),
            d.get("certificates", {}),
            tuple(d.get("caveats", ())),
            bool(d.get("certified", True)),
        )


def _restrict(px, w, q):
    px, w, q = as_distribution(px), as_channel(w), as_metric(q)
    if len(px) != w.J or q.values.shape != w.rows.shape:
        raise DomainError("shape mismatch between px, w and q")
    s = np.flatnonzero(px.probs > 0)
    return s, px.probs[s], w.rows[s], q.values[s]


def _expand(c_s, s, w_full):
    """Put a support coupling back into a full J x K x K coupling (diagonal elsewhere)."""
    full = Coupling.diagonal(Channel(w_full)).per_input.copy()
    full[s] = c_s
    return Coupling.normalized(full)


def inner_min_mi(px, w, q, opts: InnerOptions = InnerOptions(), extra_starts=()):
    """Smallest certified I(px, V) over maximal couplings with Y-marginal w.

    Returns (value_bits, witness Coupling, MaximalityCertificate). Starts
    are the diagonal coupling, the optimum over the support-defined subset,
    any `extra_starts`, and random couplings shrunk toward the diagonal until
    certified.
    """
    s, p, ws, qs = _restrict(px, w, q)
    w_full = as_channel(w).rows
    Js, K = ws.shape
    diag = np.einsum("jk,kl->jkl", ws, np.eye(K))
    f, grad = mi_objective(p)
    best_c, best_v = diag, f(diag)
    if Js <= 1 or K <= 1 or best_v <= 0.0:
        cert = adversary_value(_expand(diag, s, w_full), px, q, opts.tol)
        return best_v, _expand(diag, s, w_full), cert
    A_eq, b_eq = fixed_marginal_rows(ws)
    project = fixed_marginal_projector(ws)
    cf = AdditiveCertifier(p, qs, opts.tol, opts.extra_duals, opts.seed)
    starts = [diag]
    prior_c = _prior_inner(p, ws, prior_support_mask(qs))
    if prior_c is not None:
        starts.append(prior_c)
    for c in extra_starts:
        c = np.asarray(as_coupling(c).per_input)[s]
        if np.allclose(c.sum(axis=2), ws, atol=1e-9):
            starts.append(shrink_to_certified(project(c), diag, cf, opts.tol))
    rng = np.random.default_rng(opts.seed)
    while len(starts) < opts.n_starts:
        c = rng.dirichlet(np.full(K, opts.dirichlet_alpha), size=(Js, K)) * ws[:, :, None]
        starts.append(shrink_to_certified(c, diag, cf, opts.tol))
    res = multistart(starts, f, grad, A_eq, b_eq, project, cf, opts)
    if res is not None and res.value < best_v:
        best_v, best_c = res.value, res.coupling
    witness = _expand(best_c, s, w_full)
    cert = adversary_value(witness, px, q, opts.tol)
    return mutual_information(px, marginal_yhat(witness)), witness, cert


# --------------------------------------------------------------------------
# Support-defined subset: a convex program solved by block pairwise steps


def _prior_inner(px, w, mask, gap_tol=1e-6, max_sweeps=5000):
    """Minimize I(px, V) over couplings with Y-marginal w supported on mask.

    Conditional gradient on a product of simplices, one block per (x, y):
    each step moves mass inside a block from the worst active yhat to the
    best allowed one, with an exact line search. Returns None if the
    support set cannot carry w.
    """
    J, K = w.shape
    for x in range(J):
        for y in range(K):
            if w[x, y] > 0 and not mask[x, y].any():
                return None
    c = np.where(mask, w[:, :, None], 0.0)
    c = c / np.maximum(mask.sum(axis=2, keepdims=True), 1)
    blocks = [(x, y, np.flatnonzero(mask[x, y])) for x in range(J) for y in range(K)]
    blocks = [(x, y, al) for x, y, al in blocks if w[x, y] > 0 and al.size > 1 and px[x] > 0]
    for _ in range(max_sweeps):
        V = c.sum(axis=1)
        P = px @ V
        with np.errstate(divide="ignore"):
            g = px[:, None] * (np.log(V) - np.log(P)[None, :]) / LN2
        gap = 0.0
        for x, y, al in blocks:
            act = al[c[x, y, al] > 0]
            gap += w[x, y] * (g[x, act].max() - g[x, al].min())
        if not gap > gap_tol:
            break
        for x, y, al in blocks:
            V = c[x].sum(axis=0)
            P = px @ c.sum(axis=1)
            with np.errstate(divide="ignore"):
                gg = np.log(V[al]) - np.log(P[al])
            s = al[int(np.argmin(gg))]
            act = al[c[x, y, al] > 0]
            a = act[int(np.argmax(np.log(V[act]) - np.log(P[act])))]
            if a == s:
                continue
            t = _pairwise_step(px[x], V[s], V[a], P[s], P[a], c[x, y, a])
            c[x, y, s] += t
            c[x, y, a] -= t
        c = fixed_marginal_projector(w)(c)
    return c


def _pairwise_step(p, vs, va, ps, pa, hi):
    """Exact minimizer over t in [0, hi] of I after moving t from yhat a to s in one row."""

    def deriv(t):
        left = math.log(vs + t) - math.log(ps + p * t) if vs + t > 0 else -math.inf
        right = math.log(va - t) - math.log(pa - p * t) if va - t > 0 else -math.inf
        return left - right

    if deriv(hi) <= 0:
        return hi
    lo, up = 0.0, hi
    for _ in range(60):
        m = 0.5 * (lo + up)
        if deriv(m) < 0:
            lo = m
        else:
            up = m
    return lo


def prior_inner_min(px, w, q):
    """(value_bits, witness Coupling) over the support-defined subset, or (inf, None)."""
    s, p, ws, qs = _restrict(px, w, q)
    c = _prior_inner(p, ws, prior_support_mask(qs))
    if c is None:
        return math.inf, None
    witness = _expand(c, s, as_channel(w).rows)
    return mutual_information(px, marginal_yhat(witness)), witness


def _input_grid(J, step):
    return simplex_grid(J, step)


def prior_bound(w, q, px_grid_step: float = 0.005) -> BoundReport:
    """Max over the input grid of the support-subset minimum of I(px, V)."""
    w = as_channel(w)
    best = (-math.inf, None, None)
    per_point = []
    for px in _input_grid(w.J, px_grid_step):
        v, c = prior_inner_min(px, w, q)
        if not math.isfinite(v):
            return BoundReport(
                math.inf, "prior", None, px, {}, ("support set cannot carry W: bound is +inf",), False
            )
        per_point.append((px.tolist(), v))
        if v > best[0] + 1e-15:
            best = (v, c, px)
    v, c, px = best
    return BoundReport(v, "prior", c.per_input.copy(), px, {"grid": per_point}, ("grid-restricted outer maximum",))


def full_bound(w, q, px_grid_step: float = 0.02, opts: InnerOptions = InnerOptions()) -> BoundReport:
    """Max over the input grid of inner_min_mi, with neighbour witnesses reused as starts."""
    w = as_channel(w)
    if w.J == 1 or w.K == 1:
        px = np.ones(w.J) / w.J
        c = Coupling.diagonal(w)
        return BoundReport(0.0, "full-grid", c.per_input.copy(), px, {}, (FULL_GRID_CAVEAT,))
    best = (-math.inf, None, None)
    per_point = []
    prev = None
    for px in _input_grid(w.J, px_grid_step):
        extra = [] if prev is None else [prev]
        v, c, cert = inner_min_mi(px, w, q, opts, extra_starts=extra)
        prev = c
        per_point.append((px.tolist(), v, float(cert.slack)))
        if v > best[0] + 1e-15:
            best = (v, c, px)
    v, c, px = best
    return BoundReport(v, "full-grid", c.per_input.copy(), px, {"grid": per_point}, (FULL_GRID_CAVEAT,))


def corollary1_bound(c, w, q, grid_step: float = 0.01, tol_marginal: float = 1e-2, tol: float = DEFAULT_TOL) -> BoundReport:
    """Capacity of the auxiliary channel of a coupling maximal on the whole input grid."""
    c, w = as_coupling(c), as_channel(w)
    dev = float(np.abs(marginal_y(c).rows - w.rows).max())
    if dev > tol_marginal:
        raise DomainError(f"coupling Y-marginal differs from W by {dev:.4g} > {tol_marginal}")
    caveats = ["universal maximality is grid-certified only"]
    if dev > 1e-12:
        caveats.append(f"coupling Y-marginal deviates from W by {dev:.4g}")
    uni = is_maximal_universal(c, q, grid_step, tol)
    cap, _ = blahut_arimoto_capacity(marginal_yhat(c))
    certs = {"min_slack": uni.min_slack, "worst_px": uni.worst_px, "grid_points": uni.n_points, "marginal_deviation": dev}
    if not uni.member:
        caveats.append("coupling is not maximal at the reported worst px: value is not a bound")
    return BoundReport(cap, "corollary1", c.per_input.copy(), uni.worst_px, certs, tuple(caveats), uni.member)
