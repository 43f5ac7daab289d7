"""Probability objects and information measures.

Rates are reported in bits. Internally natural logarithms are used and
converted at the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LN2 = np.log(2.0)
SUM_TOL = 1e-12


class DomainError(ValueError):
    """Raised when an input violates a mathematical precondition."""


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Distribution:
    """Probability vector over a finite alphabet."""

    probs: np.ndarray

    def __post_init__(self):
        p = _frozen(self.probs)
        if p.ndim != 1 or p.size == 0:
            raise DomainError("distribution must be a nonempty vector")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise DomainError("distribution entries must be finite and nonnegative")
        if abs(p.sum() - 1.0) > SUM_TOL:
            raise DomainError(f"distribution sums to {p.sum()!r}, not 1")
        object.__setattr__(self, "probs", p)

    def __len__(self):
        return self.probs.size

    @classmethod
    def uniform(cls, size: int) -> "Distribution":
        return cls(np.full(size, 1.0 / size))

    @classmethod
    def normalized(cls, weights) -> "Distribution":
        w = np.asarray(weights, dtype=float)
        return cls(w / w.sum())


@dataclass(frozen=True, eq=False)
class Channel:
    """Row-stochastic J x K matrix."""

    rows: np.ndarray

    def __post_init__(self):
        w = _frozen(self.rows)
        if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
            raise DomainError("channel must be a nonempty J x K table")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise DomainError("channel entries must be finite and nonnegative")
        bad = np.abs(w.sum(axis=1) - 1.0) > SUM_TOL
        if np.any(bad):
            raise DomainError(f"channel rows {np.flatnonzero(bad).tolist()} do not sum to 1")
        object.__setattr__(self, "rows", w)

    @property
    def J(self) -> int:
        return self.rows.shape[0]

    @property
    def K(self) -> int:
        return self.rows.shape[1]

    @classmethod
    def normalized(cls, weights) -> "Channel":
        w = np.asarray(weights, dtype=float)
        return cls(w / w.sum(axis=1, keepdims=True))


@dataclass(frozen=True, eq=False)
class Coupling:
    """Joint conditional P(y, yhat | x) stored as a J x K x K array.

    Axis 1 is the channel output y, axis 2 the auxiliary output yhat.
    """

    per_input: np.ndarray

    def __post_init__(self):
        c = _frozen(self.per_input)
        if c.ndim != 3 or c.shape[1] != c.shape[2] or c.shape[0] < 1:
            raise DomainError("coupling must be a J x K x K table")
        if not np.all(np.isfinite(c)) or np.any(c < 0):
            raise DomainError("coupling entries must be finite and nonnegative")
        bad = np.abs(c.sum(axis=(1, 2)) - 1.0) > SUM_TOL
        if np.any(bad):
            raise DomainError(f"coupling tables {np.flatnonzero(bad).tolist()} do not sum to 1")
        object.__setattr__(self, "per_input", c)

    @property
    def J(self) -> int:
        return self.per_input.shape[0]

    @property
    def K(self) -> int:
        return self.per_input.shape[1]

    @classmethod
    def normalized(cls, weights) -> "Coupling":
        c = np.asarray(weights, dtype=float)
        return cls(c / c.sum(axis=(1, 2), keepdims=True))

    @classmethod
    def diagonal(cls, ch: "Channel") -> "Coupling":
        """Coupling with yhat = y and Y-marginal ch."""
        w = as_channel(ch).rows
        return cls(np.einsum("jk,kl->jkl", w, np.eye(w.shape[1])))

    @classmethod
    def product(cls, py: "Channel", pyhat: "Channel") -> "Coupling":
        return cls(np.einsum("jk,jl->jkl", as_channel(py).rows, as_channel(pyhat).rows))


@dataclass(frozen=True, eq=False)
class Metric:
    """Additive decoding metric q(x, y), a J x K table of finite reals."""

    values: np.ndarray

    def __post_init__(self):
        q = _frozen(self.values)
        if q.ndim != 2:
            raise DomainError("metric must be a J x K table")
        if not np.all(np.isfinite(q)):
            raise DomainError("metric entries must be finite")
        object.__setattr__(self, "values", q)

    @property
    def J(self) -> int:
        return self.values.shape[0]

    @property
    def K(self) -> int:
        return self.values.shape[1]


def as_distribution(d) -> Distribution:
    return d if isinstance(d, Distribution) else Distribution(d)


def as_channel(ch) -> Channel:
    return ch if isinstance(ch, Channel) else Channel(ch)


def as_coupling(c) -> Coupling:
    return c if isinstance(c, Coupling) else Coupling(c)


def as_metric(q) -> Metric:
    return q if isinstance(q, Metric) else Metric(q)


def _check_px(px: Distribution, J: int):
    if len(px) != J:
        raise DomainError(f"input distribution has {len(px)} letters, channel has {J}")


def _xlogx_ratio(p: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Elementwise p*ln(p/r) with 0*log(0/r) = 0 (r > 0 wherever p > 0 assumed)."""
    out = np.zeros_like(p)
    m = p > 0
    out[m] = p[m] * np.log(p[m] / r[m])
    return out


def entropy(d) -> float:
    """Shannon entropy in bits."""
    p = as_distribution(d).probs
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def mutual_information(px, ch) -> float:
    """I(X;Y) in bits for input px and channel ch."""
    px, ch = as_distribution(px), as_channel(ch)
    _check_px(px, ch.J)
    return mutual_information_arrays(px.probs, ch.rows)


def mutual_information_arrays(px: np.ndarray, w: np.ndarray) -> float:
    """Unvalidated fast path used inside optimizers."""
    joint = px[:, None] * w
    py = joint.sum(axis=0)
    denom = px[:, None] * py[None, :]
    val = _xlogx_ratio(joint, np.where(denom > 0, denom, 1.0)).sum()
    return max(float(val / LN2), 0.0)


def conditional_kl(py_prime, py, px) -> float:
    """D(py_prime || py | px) in bits; +inf when absolute continuity fails."""
    a, b, px = as_channel(py_prime).rows, as_channel(py).rows, as_distribution(px)
    if a.shape != b.shape:
        raise DomainError(f"channel shapes differ: {a.shape} vs {b.shape}")
    _check_px(px, a.shape[0])
    return conditional_kl_arrays(a, b, px.probs)


def conditional_kl_arrays(a: np.ndarray, b: np.ndarray, px: np.ndarray) -> float:
    live = px > 0
    a, b, w = a[live], b[live], px[live]
    if np.any((a > 0) & (b <= 0)):
        return float("inf")
    per_row = _xlogx_ratio(a, np.where(b > 0, b, 1.0)).sum(axis=1)
    return max(float((w * per_row).sum() / LN2), 0.0)


def marginal_y(c) -> Channel:
    """P(y | x) obtained by summing the coupling over yhat."""
    return Channel(_renorm(as_coupling(c).per_input.sum(axis=2)))


def marginal_yhat(c) -> Channel:
    """P(yhat | x) obtained by summing the coupling over y."""
    return Channel(_renorm(as_coupling(c).per_input.sum(axis=1)))


def _renorm(rows: np.ndarray) -> np.ndarray:
    # Absorb last-bit rounding so the result passes the 1e-12 row check.
    return rows / rows.sum(axis=1, keepdims=True)


def output_distribution(px, ch) -> Distribution:
    px, ch = as_distribution(px), as_channel(ch)
    _check_px(px, ch.J)
    return Distribution.normalized(px.probs @ ch.rows)


def blahut_arimoto_capacity(ch, tol: float = 1e-9, max_iter: int = 1_000_000):
    """Capacity of a DMC in bits and a capacity-achieving input.

    Stops when the certified gap max_x D(W_x || r) - I(p, W) is at most tol,
    where r is the output distribution induced by the current input p.
    Both quantities bracket the capacity, so the returned value is within
    tol of it.
    """
    w = as_channel(ch).rows
    J = w.shape[0]
    p = np.full(J, 1.0 / J)
    logw = np.where(w > 0, np.log(np.where(w > 0, w, 1.0)), 0.0)
    for _ in range(max_iter):
        r = p @ w
        logr = np.log(np.where(r > 0, r, 1.0))
        d = (w * (logw - logr[None, :])).sum(axis=1)  # nats, per input row
        lower = float(p @ d)
        upper = float(d.max())
        if (upper - lower) / LN2 <= tol:
            break
        p = p * np.exp(d - upper)
        p /= p.sum()
    return max(lower / LN2, 0.0), Distribution(p / p.sum())
