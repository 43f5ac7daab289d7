"""Reference instances: the three-output counterexample channel and its data."""

from __future__ import annotations

import numpy as np

from .probability import Channel, Coupling, Metric

# Channel and mismatched metric (natural logarithms) of the worked example.
W_EXAMPLE = Channel([[0.97, 0.03, 0.0], [0.1, 0.1, 0.8]])
Q_EXAMPLE = Metric([[0.0, 0.0, 0.0], [0.0, np.log(0.5), np.log(1.36)]])

# Reference four-decimal values for the example.
CAPACITY_W = 0.7133
SUPERPOSITION_RATE = 0.1991  # reference constant only, never computed here
PRIOR_BOUND = 0.6182
COROLLARY_BOUND = 0.4999

# Reference auxiliary channel P(yhat | x) for the example.
PYHAT_EXAMPLE = Channel([[0.3756, 0.6244, 0.0], [0.1, 0.2044, 0.6956]])

# Nonzero entries (x, y, yhat), 1-based, of the reference maximal coupling.
EXAMPLE_COUPLING_ENTRIES = {
    (1, 1, 1): 0.3778,
    (1, 1, 2): 0.5922,
    (1, 2, 2): 0.0300,
    (2, 1, 1): 0.1000,
    (2, 2, 2): 0.0911,
    (2, 3, 3): 0.6956,
    (2, 3, 2): 0.1133,
}


def example_coupling() -> Coupling:
    c = np.zeros((2, 3, 3))
    for (j, k1, k2), v in EXAMPLE_COUPLING_ENTRIES.items():
        c[j - 1, k1 - 1, k2 - 1] = v
    return Coupling.normalized(c)


def perturbed_example_coupling(delta: float = 0.05) -> Coupling:
    """Worked-example coupling with entry (2,3,2) raised by delta, then renormalized."""
    c = example_coupling().per_input.copy()
    c[1, 2, 1] += delta
    return Coupling.normalized(c)


def bsc(eps: float) -> Channel:
    return Channel([[1 - eps, eps], [eps, 1 - eps]])


def matched_metric(w) -> Metric:
    """q = log W with zero-probability entries mapped to a large negative floor."""
    rows = np.asarray(w.rows if isinstance(w, Channel) else w, dtype=float)
    return Metric(np.where(rows > 0, np.log(np.where(rows > 0, rows, 1.0)), -1e9))
