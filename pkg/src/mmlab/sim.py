"""Monte Carlo experiments with constant-composition codes.

Randomness is keyed by (seed, stream) through Philox: trial t of a stream
always reads the same block of raw outputs, so any split of the trials
into chunks reproduces the serial run bit for bit.

Ties in the q-decoder count as errors by default (the pairwise error event
is q(x', y) >= q(x, y)); a random-winner mode is available for comparison.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln
from scipy.stats import norm

from .probability import DomainError, as_channel, as_coupling, as_distribution, as_metric
from .types_lab import JointType, TypeVector, type_class_size

ENUMERATE_LIMIT = 200_000  # type classes up to this size are listed in full
CHUNK = 4096
Z95 = float(norm.ppf(0.975))


# --------------------------------------------------------------------------
# Random streams


def _stream(seed: int, stream: int) -> np.random.Philox:
    if seed < 0 or stream < 0:
        raise DomainError("seeds and stream ids must be nonnegative")
    return np.random.Philox(key=np.array([seed, stream], dtype=np.uint64))


def trial_uniforms(seed: int, stream: int, t0: int, count: int, width: int) -> np.ndarray:
    """Uniforms in [0, 1) for trials t0 .. t0+count-1, `width` per trial.

    Each trial owns ceil(width / 4) Philox blocks, so the values of trial t
    do not depend on which other trials are drawn.
    """
    blocks = -(-width // 4)
    bg = _stream(seed, stream)
    bg.advance(t0 * blocks)
    raw = bg.random_raw(count * blocks * 4).reshape(count, blocks * 4)[:, :width]
    return (raw >> np.uint64(11)).astype(np.float64) * 2.0**-53


def _sample_outputs(x, w, u):
    """Channel outputs for input sequence x (n,) from uniforms u (T, n)."""
    cum = np.cumsum(w, axis=1)[x]  # n x K
    cum[:, -1] = np.inf
    return (u[:, :, None] >= cum[None, :, :]).sum(axis=2)


def wilson_interval(errors: int, trials: int, z: float = Z95) -> tuple:
    """Wilson score interval for a binomial proportion."""
    if trials < 1:
        raise DomainError("trials must be >= 1")
    p = errors / trials
    den = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / den
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / den
    return max(0.0, centre - half), min(1.0, centre + half)


# --------------------------------------------------------------------------
# Codebooks


@dataclass(frozen=True, eq=False)
class Codebook:
    codewords: np.ndarray  # M x n letters
    composition: TypeVector
    seed: int = 0

    def __post_init__(self):
        cw = np.array(self.codewords, dtype=np.int64)
        if cw.ndim != 2 or cw.shape[0] < 1:
            raise DomainError("codebook needs an M x n array with M >= 1")
        J = len(self.composition.counts)
        if cw.shape[1] != self.composition.n:
            raise DomainError("codeword length differs from the composition length")
        for row in cw:
            if TypeVector.of_sequence(row, J) != self.composition:
                raise DomainError("codeword does not have the codebook composition")
        if len({row.tobytes() for row in cw}) != cw.shape[0]:
            raise DomainError("codewords must be distinct")
        cw.setflags(write=False)
        object.__setattr__(self, "codewords", cw)

    @property
    def M(self) -> int:
        return self.codewords.shape[0]

    @property
    def n(self) -> int:
        return self.codewords.shape[1]

    @property
    def J(self) -> int:
        return len(self.composition.counts)


def type_class_sequences(composition) -> np.ndarray:
    """All sequences of a type class in lexicographic order."""
    counts = list(composition.counts)
    n = sum(counts)
    out = []
    seq = [0] * n

    def rec(i):
        if i == n:
            out.append(seq.copy())
            return
        for a, c in enumerate(counts):
            if c:
                counts[a] -= 1
                seq[i] = a
                rec(i + 1)
                counts[a] += 1

    rec(0)
    return np.array(out, dtype=np.int64).reshape(len(out), n)


def sample_codebook(n: int, M: int, composition, seed: int = 0) -> Codebook:
    """M distinct codewords drawn uniformly without replacement from T(composition)."""
    comp = composition if isinstance(composition, TypeVector) else TypeVector(tuple(composition))
    if comp.n != n:
        raise DomainError(f"composition has length {comp.n}, expected n = {n}")
    if M < 1:
        raise DomainError("M must be >= 1")
    size = type_class_size(comp)
    if M > size:
        raise DomainError(f"M = {M} exceeds the type class size {size}")
    rng = np.random.Generator(_stream(seed, 1 << 62))
    if size <= ENUMERATE_LIMIT:
        allseq = type_class_sequences(comp)
        return Codebook(allseq[rng.choice(size, M, replace=False)], comp, seed)
    base = np.repeat(np.arange(len(comp.counts)), comp.counts)
    rows, seen = [], set()
    while len(rows) < M:
        s = rng.permutation(base)
        key = s.tobytes()
        if key not in seen:
            seen.add(key)
            rows.append(s)
    return Codebook(np.array(rows), comp, seed)


def _tie_tol(qv, n):
    return 1e-10 * n * (1.0 + float(np.abs(qv).max()))


def _scores(cw, qv, y):
    """q^n(x_m, y) for all codewords: (M,) for one output, (T, M) for rows of y."""
    if y.ndim == 1:
        return qv[cw, y[None, :]].sum(axis=1)
    return qv[cw[None, :, :], y[:, None, :]].sum(axis=2)


def _chunk(M, n):
    """Trials per batch, keeping T x M x n work arrays small."""
    return int(max(1, min(CHUNK, 4_000_000 // max(1, M * n))))


def q_decode(cb: Codebook, y, q) -> tuple:
    """(winner index, tie flag) of the q-decoder; indices start at 0."""
    qv = as_metric(q).values
    y = np.asarray(y, dtype=np.int64)
    if y.shape != (cb.n,):
        raise DomainError(f"output length {y.size} differs from n = {cb.n}")
    s = _scores(cb.codewords, qv, y)
    best = int(np.argmax(s))
    tie = int((s >= s[best] - _tie_tol(qv, cb.n)).sum()) > 1
    return best, tie


# --------------------------------------------------------------------------
# Reports


@dataclass(frozen=True, eq=False)
class SimulationReport:
    per_message: np.ndarray
    max_estimate: float
    interval: tuple  # Wilson 95% interval of the worst message
    trials: int
    seed: int
    ties: int
    mode: str
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        pm = np.asarray(self.per_message, dtype=float)
        if np.any(pm < 0) or np.any(pm > 1):
            raise DomainError("estimates must lie in [0, 1]")
        lo, hi = self.interval
        if not lo - 1e-12 <= self.max_estimate <= hi + 1e-12:
            raise DomainError("interval must contain the estimate")

    def to_dict(self) -> dict:
        return {
            "per_message": [float(v) for v in self.per_message],
            "max_estimate": float(self.max_estimate),
            "interval": [float(v) for v in self.interval],
            "trials": int(self.trials),
            "seed": int(self.seed),
            "ties": int(self.ties),
            "mode": self.mode,
            "extra": self.extra,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationReport":
        return cls(
            np.array(d["per_message"], dtype=float),
            float(d["max_estimate"]),
            tuple(d["interval"]),
            int(d["trials"]),
            int(d["seed"]),
            int(d["ties"]),
            d["mode"],
            dict(d.get("extra", {})),
        )


def _report(errors, trials, seed, ties, mode, extra=None):
    errors = np.asarray(errors, dtype=np.int64)
    worst = int(np.argmax(errors))
    est = errors / trials
    return SimulationReport(
        est, float(est[worst]), wilson_interval(int(errors[worst]), trials), trials, seed, int(ties), mode, extra or {}
    )


# --------------------------------------------------------------------------
# Maximal error probability


def estimate_pe_max(cb: Codebook, w, q, trials_per_message: int, seed: int = 0, tie_mode: str = "error") -> SimulationReport:
    """Monte Carlo maximal error probability of the q-decoder on channel w.

    tie_mode "error": a competitor with q^n(x', y) >= q^n(x_m, y) is an
    error. "random": exact ties are broken uniformly at random.
    """
    if trials_per_message < 1:
        raise DomainError("trials must be >= 1")
    if tie_mode not in ("error", "random"):
        raise DomainError("tie_mode must be 'error' or 'random'")
    wr = as_channel(w).rows
    qv = as_metric(q).values
    if wr.shape != qv.shape or wr.shape[0] != cb.J:
        raise DomainError("channel, metric and codebook alphabets disagree")
    tol = _tie_tol(qv, cb.n)
    errors = np.zeros(cb.M, dtype=np.int64)
    ties = 0
    if cb.M == 1:
        return _report(errors, trials_per_message, seed, 0, f"codebook/{tie_mode}")
    for m in range(cb.M):
        x = cb.codewords[m]
        step = _chunk(cb.M, cb.n)
        for t0 in range(0, trials_per_message, step):
            cnt = min(step, trials_per_message - t0)
            u = trial_uniforms(seed, m, t0, cnt, cb.n + 1)
            y = _sample_outputs(x, wr, u[:, : cb.n])
            s = _scores(cb.codewords, qv, y)
            own = s[:, m].copy()
            s[:, m] = -np.inf
            best = s.max(axis=1)
            tied = np.abs(s - own[:, None]) <= tol
            n_tied = tied.sum(axis=1)
            beaten = best > own + tol
            ties += int((n_tied > 0).sum())
            if tie_mode == "error":
                err = beaten | (n_tied > 0)
            else:
                lose_tie = u[:, cb.n] >= 1.0 / (n_tied + 1)
                err = beaten | ((n_tied > 0) & lose_tie)
            errors[m] += int(err.sum())
    return _report(errors, trials_per_message, seed, ties, f"codebook/{tie_mode}")


def exact_pe_max(cb: Codebook, w, q, tie_mode: str = "error", max_outputs: int = 1_000_000) -> SimulationReport:
    """Exact error probabilities by enumerating every output sequence.

    Same error rule as estimate_pe_max; in "random" mode a tie among k + 1
    codewords is a loss with probability k / (k + 1).
    """
    wr = as_channel(w).rows
    qv = as_metric(q).values
    K = wr.shape[1]
    if K**cb.n > max_outputs:
        raise DomainError(f"{K}^{cb.n} outputs exceed the enumeration limit {max_outputs}")
    tol = _tie_tol(qv, cb.n)
    ys = np.array(np.unravel_index(np.arange(K**cb.n), (K,) * cb.n)).T  # all outputs
    s = _scores(cb.codewords, qv, ys)  # outputs x M
    probs = np.zeros(cb.M)
    ties = 0
    for m in range(cb.M if cb.M > 1 else 0):
        py = np.prod(wr[cb.codewords[m], ys], axis=1)
        own = s[:, m]
        others = np.delete(s, m, axis=1)
        beaten = (others > own[:, None] + tol).any(axis=1)
        n_tied = (np.abs(others - own[:, None]) <= tol).sum(axis=1)
        ties += int(((n_tied > 0) & (py > 0)).sum())
        if tie_mode == "error":
            loss = (beaten | (n_tied > 0)).astype(float)
        else:
            loss = np.where(beaten, 1.0, n_tied / (n_tied + 1.0))
        probs[m] = float(py @ loss)
    worst = int(np.argmax(probs))
    return SimulationReport(probs, float(probs[worst]), (float(probs[worst]),) * 2, 0, 0, ties, f"exact/{tie_mode}")


def _competitor_tail_table(col_counts, row_counts, qv, cap=2_000_000):
    """Score distribution of q^n(x', y) for x' uniform on T(row_counts).

    Only the output column counts of y matter. Returns (scores sorted
    ascending, probabilities in the same order).
    """
    J, K = qv.shape
    n = int(sum(row_counts))
    log_class = gammaln(n + 1) - sum(gammaln(c + 1) for c in row_counts)
    rem = np.array([row_counts], dtype=np.int64)  # remaining row capacities per state
    score = np.zeros(1)
    logw = np.zeros(1)
    for k in range(K):
        Nk = int(col_counts[k])
        if k == K - 1:
            ok = rem.sum(axis=1) == Nk
            rem, score, logw = rem[ok], score[ok], logw[ok]
            score = score + rem @ qv[:, k]
            logw = logw + gammaln(Nk + 1) - gammaln(rem + 1).sum(axis=1)
            break
        cols = _compositions(Nk, J)  # C x J
        fit = (cols[None, :, :] <= rem[:, None, :]).all(axis=2)
        si, ci = np.nonzero(fit)
        if si.size > cap:
            raise DomainError("too many joint types for exact competitor tail")
        c = cols[ci]
        rem = rem[si] - c
        score = score[si] + c @ qv[:, k]
        logw = logw[si] + gammaln(Nk + 1) - gammaln(c + 1).sum(axis=1)
    order = np.argsort(score, kind="stable")
    return score[order], np.exp(logw[order] - log_class)


def _compositions(total, parts):
    if parts == 1:
        return np.array([[total]], dtype=np.int64)
    out = []
    for first in range(total + 1):
        rest = _compositions(total - first, parts - 1)
        out.append(np.hstack([np.full((rest.shape[0], 1), first), rest]))
    return np.vstack(out)


def estimate_pe_ensemble(n: int, composition, rate_bits: float, w, q, trials: int, seed: int = 0) -> SimulationReport:
    """Error probability of a fresh random constant-composition codebook per trial.

    Each trial draws the sent codeword uniformly from T(composition) and
    an output y from w. Given (x, y), the probability that at least one of
    the other M - 1 codewords (i.i.d. uniform on the type class) scores
    q^n(x', y) >= q^n(x, y) is computed exactly from the joint-type
    distribution, and the trial's error indicator is drawn with that
    probability. M = ceil(2^(n R)). By symmetry every message has the
    same ensemble error, which is at most the ensemble average of P_e,max.
    The report's `ties` counts trials in which some competitor ties the
    sent codeword's score with positive probability.
    """
    comp = composition if isinstance(composition, TypeVector) else TypeVector(tuple(composition))
    if comp.n != n:
        raise DomainError("composition length differs from n")
    if trials < 1:
        raise DomainError("trials must be >= 1")
    wr = as_channel(w).rows
    qv = as_metric(q).values
    log2M = n * rate_bits
    others = math.ceil(2.0**log2M) - 1 if log2M < 1000 else math.inf
    tol = _tie_tol(qv, n)
    base = np.repeat(np.arange(len(comp.counts)), comp.counts)
    cache: dict = {}
    errors, ties = 0, 0
    probs = []
    for t0 in range(0, trials, CHUNK):
        cnt = min(CHUNK, trials - t0)
        u = trial_uniforms(seed, 0, t0, cnt, 2 * n + 1)
        for i in range(cnt):
            x = base[np.argsort(u[i, :n], kind="stable")]
            y = _sample_outputs(x, wr, u[i : i + 1, n : 2 * n])[0]
            own = float(qv[x, y].sum())
            cols = tuple(np.bincount(y, minlength=wr.shape[1]))
            if cols not in cache:
                cache[cols] = _competitor_tail_table(cols, comp.counts, qv)
            sc, pr = cache[cols]
            j = np.searchsorted(sc, own - tol, side="left")
            p_ge = float(pr[j:].sum())
            jt = np.searchsorted(sc, own + tol, side="right")
            ties += int(jt > j)
            if others == 0 or p_ge <= 0.0:
                pe = 0.0
            elif p_ge >= 1.0 or others == math.inf:
                pe = 1.0
            else:
                pe = -math.expm1(others * math.log1p(-p_ge))
            probs.append(pe)
            errors += int(u[i, 2 * n] < pe)
    extra = {"n": n, "rate_bits": rate_bits, "mean_conditional_error": float(np.mean(probs))}
    return _report([errors], trials, seed, ties, "ensemble", extra)


# --------------------------------------------------------------------------
# Type conflicts


def nearest_conditional_type(composition, v) -> np.ndarray:
    """Counts N[x, yhat] with rows summing to the composition, closest to n p(x) V.

    Largest-remainder rounding per row.
    """
    vr = as_channel(v).rows
    out = np.zeros(vr.shape, dtype=np.int64)
    for x, c in enumerate(composition.counts):
        target = c * vr[x]
        base = np.floor(target).astype(np.int64)
        short = c - int(base.sum())
        order = np.argsort(-(target - base), kind="stable")
        base[order[:short]] += 1
        out[x] = base
    return out


def _fixed_type_outputs(x, ctype, u):
    """Outputs uniform on the conditional type class T_x(ctype), one per row of u."""
    T, n = u.shape
    y = np.empty((T, n), dtype=np.int64)
    for a in range(ctype.shape[0]):
        pos = np.flatnonzero(x == a)
        if pos.size == 0:
            continue
        letters = np.repeat(np.arange(ctype.shape[1]), ctype[a])
        order = np.argsort(u[:, pos], axis=1, kind="stable")
        y[np.arange(T)[:, None], pos[order]] = letters[None, :]
    return y


def _joint_counts(cw, y, J, K):
    """N[t, m, x, yhat] for all trials and codewords."""
    ox = np.eye(J, dtype=np.int64)[cw]  # M n J
    oy = np.eye(K, dtype=np.int64)[y]  # T n K
    return np.einsum("mnj,tnk->tmjk", ox, oy)


def _conflict_outputs(cb, vr, ctype, m, seed, t0, cnt, mode):
    u = trial_uniforms(seed, m, t0, cnt, cb.n)
    x = cb.codewords[m]
    if mode == "fixed-type":
        return _fixed_type_outputs(x, ctype, u)
    return _sample_outputs(x, vr, u)


def _check_conflict_args(cb, v, trials, mode, conditional_type):
    if trials < 1:
        raise DomainError("trials must be >= 1")
    if mode not in ("fixed-type", "channel"):
        raise DomainError("mode must be 'fixed-type' or 'channel'")
    vr = as_channel(v).rows
    if vr.shape[0] != cb.J:
        raise DomainError("auxiliary channel input alphabet differs from the codebook's")
    ctype = None
    if mode == "fixed-type":
        ctype = nearest_conditional_type(cb.composition, vr) if conditional_type is None else np.asarray(conditional_type, dtype=np.int64)
        if ctype.shape != vr.shape or not np.array_equal(ctype.sum(axis=1), np.array(cb.composition.counts)):
            raise DomainError("conditional type rows must sum to the codebook composition")
    return vr, ctype


def estimate_type_conflict(cb: Codebook, v, trials: int, seed: int = 0, mode: str = "fixed-type", conditional_type=None) -> SimulationReport:
    """Per-message probability that another codeword shares the realized conditional type.

    mode "fixed-type": yhat is uniform on the conditional type class of the
    sent codeword (default type: nearest to V). mode "channel": yhat ~ V.
    """
    vr, ctype = _check_conflict_args(cb, v, trials, mode, conditional_type)
    J, K = vr.shape
    errors = np.zeros(cb.M, dtype=np.int64)
    if cb.M > 1:
        for m in range(cb.M):
            step = _chunk(cb.M, cb.n)
            for t0 in range(0, trials, step):
                cnt = min(step, trials - t0)
                y = _conflict_outputs(cb, vr, ctype, m, seed, t0, cnt, mode)
                N = _joint_counts(cb.codewords, y, J, K).reshape(cnt, cb.M, -1)
                same = (N == N[:, m : m + 1, :]).all(axis=2)
                same[:, m] = False
                errors[m] += int(same.any(axis=1).sum())
    extra = {} if ctype is None else {"conditional_type": ctype.tolist()}
    return _report(errors, trials, seed, 0, mode, extra)


@dataclass(frozen=True, eq=False)
class ConflictTypeResult:
    joint_type: JointType | None  # counts over (yhat, x1, x2)
    share: float
    events: int
    distinct_types: int
    floor: float  # 1 / (2 (n+1)^(J^2 K - 1)), for comparison only
    status: str  # "found" | "none-found"


def dominant_conflict_type(cb: Codebook, v, conditional_type=None, trials: int = 1000, seed: int = 0, mode: str = "fixed-type") -> ConflictTypeResult:
    """Most frequent joint type of (yhat, x_m, x_mbar) over observed conflicts.

    Every conflicting pair (m, mbar) in every trial is one event.
    """
    vr, ctype = _check_conflict_args(cb, v, trials, mode, conditional_type)
    J, K = vr.shape
    floor = 1.0 / (2.0 * (cb.n + 1) ** (J * J * K - 1))
    counter: Counter = Counter()
    for m in range(cb.M if cb.M > 1 else 0):
        step = _chunk(cb.M, cb.n)
        for t0 in range(0, trials, step):
            cnt = min(step, trials - t0)
            y = _conflict_outputs(cb, vr, ctype, m, seed, t0, cnt, mode)
            N = _joint_counts(cb.codewords, y, J, K).reshape(cnt, cb.M, -1)
            same = (N == N[:, m : m + 1, :]).all(axis=2)
            same[:, m] = False
            for t, mb in zip(*np.nonzero(same)):
                jt = np.zeros((K, J, J), dtype=np.int64)
                np.add.at(jt, (y[t], cb.codewords[m], cb.codewords[mb]), 1)
                counter[jt.tobytes()] += 1
    total = sum(counter.values())
    if total == 0:
        return ConflictTypeResult(None, 0.0, 0, 0, floor, "none-found")
    key, top = max(counter.items(), key=lambda kv: (kv[1], kv[0]))
    jt = JointType(np.frombuffer(key, dtype=np.int64).reshape(K, J, J).copy())
    return ConflictTypeResult(jt, top / total, total, len(counter), floor, "found")


# --------------------------------------------------------------------------
# Anti-concentration constant


@dataclass(frozen=True)
class GammaResult:
    gamma: float
    kappa: float
    sigma2: float
    a: float
    b: float
    degenerate: bool

    def __float__(self):
        return self.gamma


def gamma_formula(sigma2: float, a_minus_b: float, kappa: float) -> float:
    """sigma^2 / (2 kappa^2 (a-b)^2) - |a-b| e^(-kappa^2/2) (1 + sqrt2 + sqrt(2 pi)/kappa + 1/kappa^2)."""
    d = abs(a_minus_b)
    tail = d * math.exp(-kappa * kappa / 2) * (1 + math.sqrt(2) + math.sqrt(2 * math.pi) / kappa + 1 / kappa**2)
    return sigma2 / (2 * kappa * kappa * d * d) - tail


def conditional_metric_variances(coupling, px, q) -> np.ndarray:
    """Var[q(j2, Y) - q(j1, Y) | X1 = j1, Yhat = k] under the coupling, shape (J, J, K).

    Entries with P(X1 = j1, Yhat = k) = 0 are NaN.
    """
    c = as_coupling(coupling).per_input
    px = as_distribution(px).probs
    qv = as_metric(q).values
    J, K, _ = c.shape
    out = np.full((J, J, K), np.nan)
    for j1 in range(J):
        if px[j1] <= 0:
            continue
        for k in range(K):
            mass = c[j1, :, k].sum()
            if mass <= 0:
                continue
            py = c[j1, :, k] / mass
            for j2 in range(J):
                d = qv[j2] - qv[j1]
                mean = py @ d
                out[j1, j2, k] = max(0.0, float(py @ (d - mean) ** 2))
    return out


def gamma_constant(coupling, px, q, kappa: float | None = None, kappa_max: float = 100.0) -> GammaResult:
    """gamma for the coupling's smallest positive conditional metric-difference variance.

    a = 2 min q and b = 2 max q. Without `kappa`, the smallest kappa on a
    0.1 grid with gamma > 0 is used. All variances zero gives the
    degenerate flag with gamma = nan.
    """
    qv = as_metric(q).values
    var = conditional_metric_variances(coupling, px, q)
    pos = var[np.isfinite(var) & (var > 1e-15)]
    a, b = 2 * float(qv.min()), 2 * float(qv.max())
    if pos.size == 0 or a == b:
        return GammaResult(math.nan, math.nan if kappa is None else kappa, 0.0, a, b, True)
    sigma2 = float(pos.min())
    if kappa is not None:
        return GammaResult(gamma_formula(sigma2, a - b, kappa), kappa, sigma2, a, b, False)
    for i in range(1, int(round(kappa_max * 10)) + 1):
        k = i / 10
        g = gamma_formula(sigma2, a - b, k)
        if g > 0:
            return GammaResult(g, k, sigma2, a, b, False)
    raise DomainError(f"no kappa <= {kappa_max} gives gamma > 0")
