"""Method of types: enumeration, counting, conditional types, rounding of
distributions into convex combinations of nearby types, moment identities
for sums conditioned on a type, and concentration utilities.

Letters are 0-based integers. Logs of sizes are in bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .lp import LpProblem, solve_lp
from .probability import LN2, DomainError, as_channel

DEFAULT_CAP = 1_000_000
SUBGAUSSIAN_PREFACTOR = 2.0


@dataclass(frozen=True)
class TypeVector:
    """Letter counts of a length-n sequence."""

    counts: tuple

    def __post_init__(self):
        c = tuple(int(v) for v in self.counts)
        if not c or any(v < 0 for v in c):
            raise DomainError("type counts must be a nonempty tuple of nonnegative integers")
        if sum(c) < 1:
            raise DomainError("type length n must be at least 1")
        object.__setattr__(self, "counts", c)

    @property
    def n(self) -> int:
        return sum(self.counts)

    @property
    def probs(self) -> np.ndarray:
        return np.array(self.counts, dtype=float) / self.n

    @classmethod
    def of_sequence(cls, seq, alphabet: int) -> "TypeVector":
        seq = np.asarray(seq, dtype=int)
        if seq.size and (seq.min() < 0 or seq.max() >= alphabet):
            raise DomainError("sequence letter outside the alphabet")
        return cls(tuple(np.bincount(seq, minlength=alphabet)))


@dataclass(frozen=True, eq=False)
class JointType:
    """Counts over a product alphabet (any number of axes)."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.array(self.counts)
        if not np.issubdtype(c.dtype, np.integer):
            if not np.all(c == np.round(c)):
                raise DomainError("joint type counts must be integers")
            c = c.astype(np.int64)
        if np.any(c < 0) or c.sum() < 1:
            raise DomainError("joint type counts must be nonnegative with n >= 1")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def probs(self) -> np.ndarray:
        return self.counts / self.n

    def marginal(self, keep) -> "JointType":
        keep = tuple(keep)
        drop = tuple(a for a in range(self.counts.ndim) if a not in keep)
        return JointType(self.counts.sum(axis=drop))

    def __eq__(self, other):
        return isinstance(other, JointType) and np.array_equal(self.counts, other.counts)

    def __hash__(self):
        return hash((self.counts.shape, self.counts.tobytes()))

    @classmethod
    def of_sequences(cls, seqs, alphabets) -> "JointType":
        seqs = [np.asarray(s, dtype=int) for s in seqs]
        if len({s.size for s in seqs}) != 1:
            raise DomainError("sequences must have equal lengths")
        counts = np.zeros(tuple(alphabets), dtype=np.int64)
        np.add.at(counts, tuple(seqs), 1)
        return cls(counts)


@dataclass(frozen=True, eq=False)
class TypeDecomposition:
    """Convex combination of joint types approximating a target distribution."""

    components: list
    target: np.ndarray

    def recombine(self) -> np.ndarray:
        return sum(w * t.probs for w, t in self.components)

    @property
    def recombination_error(self) -> float:
        return float(np.abs(self.recombine() - self.target).max())

    @property
    def max_component_distance(self) -> float:
        return max(float(np.abs(t.probs - self.target).max()) for _, t in self.components)


# --------------------------------------------------------------------------
# Enumeration and counting


def count_types(n: int, alphabet: int) -> int:
    return math.comb(n + alphabet - 1, alphabet - 1)


def enumerate_types(n: int, alphabet: int, cap: int = DEFAULT_CAP) -> list:
    """All n-types over an alphabet of the given size, each exactly once."""
    if n < 1 or alphabet < 1:
        raise DomainError("need n >= 1 and alphabet >= 1")
    total = count_types(n, alphabet)
    if total > cap:
        raise DomainError(f"{total} types exceed the enumeration cap {cap}")
    out = []
    # stars and bars: choose the positions of alphabet-1 bars among n+alphabet-1 slots
    for bars in combinations(range(n + alphabet - 1), alphabet - 1):
        edges = (-1,) + bars + (n + alphabet - 1,)
        out.append(TypeVector(tuple(edges[i + 1] - edges[i] - 1 for i in range(alphabet))))
    return out


def type_class_size(t: TypeVector) -> int:
    """Exact multinomial coefficient n! / prod(counts!)."""
    size = math.factorial(t.n)
    for c in t.counts:
        size //= math.factorial(c)
    return size


def log2_type_class_size(t: TypeVector) -> float:
    val = math.lgamma(t.n + 1) - sum(math.lgamma(c + 1) for c in t.counts)
    return val / LN2


# --------------------------------------------------------------------------
# Conditional types


def conditional_type(y_seq, x_seq, J: int, K: int) -> np.ndarray:
    """Conditional type of y given x; rows of absent input letters are uniform."""
    y_seq, x_seq = np.asarray(y_seq, dtype=int), np.asarray(x_seq, dtype=int)
    if y_seq.shape != x_seq.shape:
        raise DomainError(f"length mismatch: {y_seq.size} vs {x_seq.size}")
    joint = JointType.of_sequences([x_seq, y_seq], (J, K)).counts.astype(float)
    nx = joint.sum(axis=1)
    out = np.full((J, K), 1.0 / K)
    live = nx > 0
    out[live] = joint[live] / nx[live, None]
    return out


def joint_conditional_type(y_seq, yhat_seq, x_seq, J: int, K: int) -> np.ndarray:
    """Joint conditional type of (y, yhat) given x; absent letters get diag/K."""
    y_seq, yhat_seq, x_seq = (np.asarray(s, dtype=int) for s in (y_seq, yhat_seq, x_seq))
    if not (y_seq.shape == yhat_seq.shape == x_seq.shape):
        raise DomainError("length mismatch among x, y and yhat")
    joint = JointType.of_sequences([x_seq, y_seq, yhat_seq], (J, K, K)).counts.astype(float)
    nx = joint.sum(axis=(1, 2))
    out = np.broadcast_to(np.eye(K) / K, (J, K, K)).copy()
    live = nx > 0
    out[live] = joint[live] / nx[live, None, None]
    return out


# --------------------------------------------------------------------------
# Rounding a distribution into a convex combination of nearby types
#
# Both problems below reduce to writing a fractional table F (in [0,1]) as a
# convex combination of 0/1 tables with the same row and column sums. The
# constraint matrices are totally unimodular, so such tables exist and
# rounding each entry up or down is enough.


def _binary_tables(F, row_sums, col_sums, cap):
    """All 0/1 tables B with B=0 where F=0, B=1 where F=1 and the given margins."""
    R, C = F.shape
    free = (F > 0) & (F < 1)
    base = (F >= 1).astype(np.int64)
    need_r = row_sums - base.sum(axis=1)
    need_c = col_sums - base.sum(axis=0)
    out = []

    def rec(r, cols_left, acc):
        if len(out) > cap:
            raise _TooMany
        if r == R:
            if np.all(cols_left == 0):
                out.append(base + np.array(acc, dtype=np.int64).reshape(R, C))
            return
        idx = np.flatnonzero(free[r])
        for pick in combinations(idx, int(need_r[r])):
            row = np.zeros(C, dtype=np.int64)
            row[list(pick)] = 1
            left = cols_left - row
            if np.any(left < 0):
                continue
            # remaining rows must be able to cover the remaining column needs
            if np.any(left > free[r + 1 :].sum(axis=0)):
                continue
            rec(r + 1, left, acc + row.tolist())

    if np.any(need_r < 0) or np.any(need_c < 0):
        return []
    rec(0, need_c.copy(), [])
    return out


class _TooMany(Exception):
    pass


def _convex_weights(cands, target):
    """Weights alpha >= 0 summing to 1 with sum alpha_i cands_i = target, to machine precision."""
    M = np.array([c.ravel() for c in cands], dtype=float).T  # (cells, m)
    t = target.ravel()
    A = np.vstack([M, np.ones((1, M.shape[1]))])
    b = np.append(t, 1.0)
    sol = solve_lp(LpProblem(np.zeros(M.shape[1]), A, b))
    if not sol.optimal:
        raise DomainError("no convex combination of the candidate types reproduces the target")
    support = np.flatnonzero(sol.x > 1e-12)
    # refine on the support: the LP solution is accurate to its feasibility tolerance only
    alpha_s, *_ = np.linalg.lstsq(A[:, support], b, rcond=None)
    if np.all(alpha_s >= -1e-14):
        alpha_s = np.maximum(alpha_s, 0.0)
        alpha_s /= alpha_s.sum()
    else:
        alpha_s = sol.x[support] / sol.x[support].sum()
    return [(float(a), cands[i]) for a, i in zip(alpha_s, support)]


def _peel(F, row_sums, col_sums, rng):
    """Vertex peeling of F in the transportation polytope (fallback for large tables)."""
    R, C = F.shape
    comps = []
    remaining = 1.0
    F = F.copy()
    for _ in range(R * C + 1):
        lo = F <= 1e-13
        hi = F >= 1 - 1e-13
        B = _tp_vertex(lo, hi, row_sums, col_sums, rng)
        live = ~(lo | hi)
        steps = np.concatenate([F[live & (B == 1)], 1.0 - F[live & (B == 0)]])
        lam = 1.0 if steps.size == 0 else float(steps.min())
        comps.append((remaining * lam, B))
        if lam >= 1.0 - 1e-13:
            break
        F = np.clip((F - lam * B) / (1.0 - lam), 0.0, 1.0)
        remaining *= 1.0 - lam
    total = sum(w for w, _ in comps)
    return [(w / total, B) for w, B in comps]


def _tp_vertex(lo, hi, row_sums, col_sums, rng):
    """An integral vertex of {0<=B<=1, margins} with B fixed on lo (0) and hi (1)."""
    R, C = lo.shape
    n = R * C
    # variables: B (n) then upper-bound slacks (n)
    A = np.zeros((R + C + n, 2 * n))
    b = np.zeros(R + C + n)
    for r in range(R):
        A[r, r * C : (r + 1) * C] = 1.0
        b[r] = row_sums[r]
    for c in range(C):
        A[R + c, c:n:C] = 1.0
        b[R + c] = col_sums[c]
    A[R + C :, :n] = np.eye(n)
    A[R + C :, n:] = np.eye(n)
    b[R + C :] = 1.0
    cost = np.concatenate([rng.normal(size=n), np.zeros(n)])
    cost[:n][lo.ravel()] = 1e3
    cost[:n][hi.ravel()] = -1e3
    sol = solve_lp(LpProblem(cost, A, b))
    if not sol.optimal:
        raise DomainError("rounding polytope is empty")
    return np.round(sol.x[:n]).astype(np.int64).reshape(R, C)


def _decompose_table(F, row_sums, col_sums, cap, rng):
    try:
        cands = _binary_tables(F, row_sums, col_sums, cap)
    except _TooMany:
        return _peel(F, row_sums, col_sums, rng)
    if not cands:
        raise DomainError("no rounding of the table matches its margins")
    return _convex_weights(cands, F)


def _merge(slices):
    """Combine independent per-slice convex combinations into joint components.

    Lays each slice's weights on [0, 1] and cuts at every breakpoint, so the
    number of components is at most the sum of the slice counts.
    """
    cuts = sorted({0.0, 1.0} | {float(np.cumsum([w for w, _ in s])[i]) for s in slices for i in range(len(s) - 1)})
    out = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b - a <= 0:
            continue
        mid = 0.5 * (a + b)
        pick = []
        for s in slices:
            acc = 0.0
            for w, t in s:
                acc += w
                if mid < acc:
                    break
            pick.append(t)
        out.append((b - a, pick))
    return out


def decompose_into_types(p_zs: JointType, p_su: JointType, cap: int = 200_000, seed: int = 0) -> TypeDecomposition:
    """Write p(z|s) p(s,u) as a convex combination of n-types on Z x S x U.

    Every component has ZS-marginal p_zs and SU-marginal p_su and lies
    within 1/n of the target in the infinity norm.
    """
    zs, su = np.asarray(p_zs.counts), np.asarray(p_su.counts)
    if zs.ndim != 2 or su.ndim != 2 or zs.shape[1] != su.shape[0]:
        raise DomainError("expected Z x S and S x U count tables sharing the S axis")
    n = p_zs.n
    if p_su.n != n:
        raise DomainError("the two types must have the same length n")
    if not np.array_equal(zs.sum(axis=0), su.sum(axis=1)):
        raise DomainError("the two types disagree on the S marginal")
    Z, S = zs.shape
    U = su.shape[1]
    ns = zs.sum(axis=0)
    target_counts = np.zeros((Z, S, U))
    for s in range(S):
        if ns[s]:
            target_counts[:, s, :] = np.outer(zs[:, s], su[s, :]) / ns[s]
    floor = np.floor(target_counts + 1e-12)
    frac = np.clip(target_counts - floor, 0.0, 1.0)
    frac[frac < 1e-12] = 0.0
    rng = np.random.default_rng(seed)
    slices = []
    for s in range(S):
        F = frac[:, s, :]
        rows = np.rint(zs[:, s] - floor[:, s, :].sum(axis=1)).astype(np.int64)
        cols = np.rint(su[s, :] - floor[:, s, :].sum(axis=0)).astype(np.int64)
        slices.append(_decompose_table(F, rows, cols, cap, rng))
    comps = []
    for w, picks in _merge(slices):
        counts = floor.astype(np.int64).copy()
        for s, B in enumerate(picks):
            counts[:, s, :] += B
        comps.append((w, JointType(counts)))
    return TypeDecomposition(comps, target_counts / n)


def quantize_joint_to_type(p, n: int, cap: int = 200_000, seed: int = 0) -> TypeDecomposition:
    """Write a joint distribution as a convex combination of n-types within 1/n of it."""
    if n < 1:
        raise DomainError("n must be at least 1")
    p = np.asarray(p, dtype=float)
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
        raise DomainError("p must be a probability table")
    scaled = n * p
    floor = np.floor(scaled + 1e-12)
    frac = np.clip(scaled - floor, 0.0, 1.0)
    frac[frac < 1e-12] = 0.0
    m = int(round(n - floor.sum()))
    F = frac.reshape(1, -1)
    # one row with sum m; column sums are free, so give each column its own capacity
    cands = []
    idx = np.flatnonzero(F[0] > 0)
    if math.comb(idx.size, m) <= cap:
        for pick in combinations(idx, m):
            B = (F[0] >= 1).astype(np.int64)
            B[list(pick)] = 1
            cands.append(B)
        weights = _convex_weights(cands, F[0])
    else:
        weights = _systematic_rounding(F[0], m)
    comps = [(w, JointType((floor.ravel().astype(np.int64) + B).reshape(p.shape))) for w, B in weights]
    return TypeDecomposition(comps, p)


def _systematic_rounding(f, m):
    """Exact decomposition of a fractional vector with integer sum into 0/1 vectors.

    Lay the fractions end to end on [0, m); for a shift u in [0, 1) the vector
    picks the cells containing u, u+1, ..., u+m-1. Integrating over u
    recovers f exactly.
    """
    ends = np.cumsum(f)
    starts = ends - f
    cuts = sorted({0.0, 1.0} | {float(e - math.floor(e)) for e in np.concatenate([starts, ends])})
    out = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b - a <= 1e-15:
            continue
        u = 0.5 * (a + b)
        points = u + np.arange(m)
        B = np.zeros(f.size, dtype=np.int64)
        for pt in points:
            B[np.searchsorted(ends, pt, side="right")] = 1
        out.append((b - a, B))
    return out


# --------------------------------------------------------------------------
# Sums conditioned on a type


def _check_f(f, p_type: TypeVector, p_sz):
    f = np.asarray(f, dtype=float)
    ch = as_channel(p_sz).rows
    if f.shape != ch.shape or f.shape[0] != len(p_type.counts):
        raise DomainError(f"shape mismatch: f {f.shape}, channel {ch.shape}, type over {len(p_type.counts)} letters")
    return f, ch


def conditional_type_mean(f, p_type: TypeVector, p_sz) -> float:
    """E[sum_i f(z_i, S_i)] for any z of the given type, S_i ~ p_sz(.|z_i)."""
    f, ch = _check_f(f, p_type, p_sz)
    return float(p_type.n * np.sum(p_type.probs[:, None] * ch * f))


def conditional_type_variance(f, p_type: TypeVector, p_sz) -> float:
    """Var[sum_i f(z_i, S_i)] for any z of the given type."""
    f, ch = _check_f(f, p_type, p_sz)
    mean_z = np.sum(ch * f, axis=1)
    var_z = np.sum(ch * (f - mean_z[:, None]) ** 2, axis=1)
    return float(p_type.n * np.sum(p_type.probs * var_z))


# --------------------------------------------------------------------------
# Concentration utilities


def anti_concentration_bound(variance: float, theta: float, kappa: float) -> float:
    """Lower bound on P[Z >= E Z] for Z sub-Gaussian with parameter theta.

    May be negative, in which case it is vacuous; returned as is.
    """
    if theta <= 0 or kappa <= 0 or variance < 0:
        raise DomainError("need theta > 0, kappa > 0 and variance >= 0")
    tail = 1.0 + math.sqrt(2.0) + math.sqrt(2.0 * math.pi) / kappa + 1.0 / kappa**2
    return theta**2 * variance / (2.0 * kappa**2) - SUBGAUSSIAN_PREFACTOR * math.exp(-(kappa**2) / 2.0) * tail


def subgaussian_tail(n: int, a: float, b: float, xi: float) -> float:
    """Two-sided tail bound for a length-n sum with centred increments in [a, b]."""
    if n < 1 or not b > a or xi < 0:
        raise DomainError("need n >= 1, b > a and xi >= 0")
    return SUBGAUSSIAN_PREFACTOR * math.exp(-(xi**2) / (n * (b - a) ** 2))


def likelihood_ratio_band(p, p_bar, n: int, K: float) -> tuple:
    """(exp(-delta), exp(delta)) bracketing prod_i p(x_i,y_i)/p_bar(x_i,y_i).

    delta = 2K / min positive p. Requires |p_bar - p| <= K/n entrywise, equal
    supports, and p_bar >= p/2 on the support (the large-n regime the upper
    side relies on).
    """
    p, p_bar = np.asarray(p, dtype=float), np.asarray(p_bar, dtype=float)
    if p.shape != p_bar.shape:
        raise DomainError("p and p_bar must have the same shape")
    if n < 1 or K <= 0:
        raise DomainError("need n >= 1 and K > 0")
    if np.abs(p_bar - p).max() > K / n + 1e-12:
        raise DomainError(f"|p_bar - p|_inf = {np.abs(p_bar - p).max():.3g} exceeds K/n = {K / n:.3g}")
    if np.any((p > 0) != (p_bar > 0)):
        raise DomainError("p and p_bar must have the same support")
    sup = p > 0
    if np.any(p_bar[sup] < p[sup] / 2):
        raise DomainError("n is too small: p_bar < p/2 somewhere on the support")
    delta = 2.0 * K / p[sup].min()
    return math.exp(-delta), math.exp(delta)


def zeta_n(n: int, J: int, K: int) -> float:
    """Rate shift ((JK-1) log(n+1) + log 2) / n, in bits."""
    if n < 1:
        raise DomainError("n must be at least 1")
    return ((J * K - 1) * math.log2(n + 1) + 1.0) / n
