"""Runtime self-checks behind `mmlab lemma-test` and `mmlab repro-paper`.

Each suite returns a list of (name, passed, detail) triples. The checks
compare library routines with exhaustive enumeration on small instances.
"""

from __future__ import annotations

import math
from itertools import product

import numpy as np

from . import instances
from .bounds import corollary1_bound, inner_min_mi, prior_bound
from .exponent import esp
from .lp import Polytope, solve_bilinear_game
from .maximality import is_maximal, is_maximal_prior, sq_table
from .probability import blahut_arimoto_capacity, marginal_yhat, mutual_information
from .types_lab import (
    JointType,
    TypeVector,
    anti_concentration_bound,
    conditional_type_mean,
    conditional_type_variance,
    decompose_into_types,
    enumerate_types,
    likelihood_ratio_band,
    quantize_joint_to_type,
    subgaussian_tail,
    type_class_size,
)

KAPPAS = np.arange(0.5, 6.01, 0.25)


def _sum_distribution(f, z, ch):
    """Exact law of sum_i f(z_i, S_i), S_i ~ ch[z_i], by enumerating all S sequences."""
    S = ch.shape[1]
    vals, probs = [], []
    for s in product(range(S), repeat=len(z)):
        vals.append(sum(f[zi, si] for zi, si in zip(z, s)))
        probs.append(math.prod(ch[zi, si] for zi, si in zip(z, s)))
    return np.array(vals), np.array(probs)


def _random_channel(rng, rows, cols):
    return rng.dirichlet(np.ones(cols), size=rows)


def _representative(t: TypeVector):
    return np.repeat(np.arange(len(t.counts)), t.counts)


def conditional_type_checks(seed: int = 0, n_max: int = 5, channels: int = 6):
    """Conditional mean and variance of sums given the type, against enumeration."""
    rng = np.random.default_rng(seed)
    worst_mean = worst_var = 0.0
    cases = 0
    for _ in range(channels):
        for Z, S in ((2, 2), (3, 2), (2, 3)):
            ch = _random_channel(rng, Z, S)
            f = rng.normal(size=(Z, S))
            for n in range(1, n_max + 1):
                for t in enumerate_types(n, Z):
                    vals, probs = _sum_distribution(f, _representative(t), ch)
                    mean = probs @ vals
                    var = probs @ (vals - mean) ** 2
                    worst_mean = max(worst_mean, abs(mean - conditional_type_mean(f, t, ch)))
                    worst_var = max(worst_var, abs(var - conditional_type_variance(f, t, ch)))
                    cases += 1
    return [
        ("conditional mean", worst_mean <= 1e-12, f"max error {worst_mean:.2e} over {cases} types"),
        ("conditional variance", worst_var <= 1e-12, f"max error {worst_var:.2e} over {cases} types"),
    ]


def concentration_checks(seed: int = 0, experiments: int = 20):
    rng = np.random.default_rng(seed)
    out = []
    total_ok = all(
        sum(type_class_size(t) for t in enumerate_types(n, J)) == J**n for n in range(1, 8) for J in (2, 3, 4)
    )
    out.append(("type class sizes sum to J^n", total_ok, "n <= 7, J <= 4"))
    worst_ac = -math.inf
    tail_ok = True
    for _ in range(experiments):
        n = int(rng.integers(1, 11))
        ch = _random_channel(rng, 2, 2)
        f = rng.uniform(-1, 1, size=(2, 2))
        k0 = int(rng.integers(0, n + 1))
        t = TypeVector((k0, n - k0))
        vals, probs = _sum_distribution(f, _representative(t), ch)
        mean = probs @ vals
        var = probs @ (vals - mean) ** 2
        centred = f - (ch * f).sum(axis=1, keepdims=True)
        a, b = centred.min(), centred.max()
        if b <= a:
            continue
        theta = math.sqrt(2.0 / n) / (b - a)
        p_ge = probs[vals >= mean - 1e-12].sum()
        for k in KAPPAS:
            worst_ac = max(worst_ac, anti_concentration_bound(var, theta, k) - p_ge)
        for xi in np.linspace(0, n * (b - a), 9):
            exact = probs[np.abs(vals - mean) >= xi - 1e-12].sum()
            tail_ok &= bool(exact <= subgaussian_tail(n, a, b, xi) + 1e-12)
    out.append(("anti-concentration is a lower bound", worst_ac <= 1e-12, f"max(bound - P[Z >= EZ]) = {worst_ac:.3e}"))
    out.append(("sub-Gaussian tail dominates exact tails", tail_ok, f"{experiments} exhaustive experiments"))
    n, K = 1000, 3
    p = 0.5 * instances.W_EXAMPLE.rows
    p_bar = p.copy()
    p_bar[1, 2] += 1.0 / n
    p_bar[1, 1] -= 1.0 / n
    lo, hi = likelihood_ratio_band(p, p_bar, n, K)
    flat = p.ravel()
    inside = True
    for _ in range(1000):
        idx = rng.choice(flat.size, size=n, p=flat)
        r = np.sum(np.log(flat[idx]) - np.log(p_bar.ravel()[idx]))
        inside &= bool(math.log(lo) <= r <= math.log(hi))
    out.append(("likelihood ratio band", inside, "1000 sampled sequences, n = 1000"))
    return out


def _random_type(rng, shape, n):
    cells = int(np.prod(shape))
    return rng.multinomial(n, rng.dirichlet(np.ones(cells))).reshape(shape)


def decomposition(seed: int = 0, instances_: int = 25):
    rng = np.random.default_rng(seed)
    worst_rec = worst_dist = 0.0
    ok = True
    for _ in range(instances_):
        n = int(rng.integers(1, 7))
        Z, S, U = (int(v) for v in rng.integers(2, 4, size=3))
        zs = _random_type(rng, (Z, S), n)
        su = np.zeros((S, U), dtype=np.int64)
        for s in range(S):
            su[s] = rng.multinomial(zs[:, s].sum(), rng.dirichlet(np.ones(U)))
        dec = decompose_into_types(JointType(zs), JointType(su))
        ok &= abs(sum(w for w, _ in dec.components) - 1.0) <= 1e-12
        for _, t in dec.components:
            ok &= np.array_equal(t.counts.sum(axis=2), zs) and np.array_equal(t.counts.sum(axis=0), su)
        worst_rec = max(worst_rec, dec.recombination_error)
        worst_dist = max(worst_dist, dec.max_component_distance * n)
        q = quantize_joint_to_type(rng.dirichlet(np.ones(Z * U)).reshape(Z, U), n)
        worst_rec = max(worst_rec, q.recombination_error)
        worst_dist = max(worst_dist, q.max_component_distance * n)
    return [
        ("components match their marginals", bool(ok), f"{instances_} instances"),
        ("recombination error <= 1e-12", worst_rec <= 1e-12, f"max {worst_rec:.2e}"),
        ("components within 1/n", worst_dist <= 1 + 1e-9, f"max n * distance {worst_dist:.4f}"),
    ]


def minimax(seed: int = 0, games: int = 20):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(games):
        m, k = (int(v) for v in rng.integers(2, 5, size=2))
        M = rng.normal(size=(m, k))
        g = solve_bilinear_game(M, Polytope.simplex(m), Polytope.simplex(k))
        swapped = solve_bilinear_game(-M.T, Polytope.simplex(k), Polytope.simplex(m))
        worst = max(worst, abs(g.value + swapped.value))
    return [("max-min equals min-max", worst <= 1e-8, f"max difference {worst:.2e} over {games} games")]


SUITES = {"appendixB": concentration_checks, "appendixC": conditional_type_checks, "decomposition": decomposition, "minimax": minimax}


def reproduce_example(quick: bool = False):
    """Recompute the worked example's reference values."""
    w, q = instances.W_EXAMPLE, instances.Q_EXAMPLE
    c = instances.example_coupling()
    u = np.array([0.5, 0.5])
    out = []

    def close(name, value, target, tol):
        out.append((name, abs(value - target) <= tol, f"{value:.4f} vs {target} (tol {tol:g})"))

    close("capacity of W", blahut_arimoto_capacity(w)[0], instances.CAPACITY_W, 1e-3)
    close("capacity of the reference auxiliary channel", blahut_arimoto_capacity(instances.PYHAT_EXAMPLE)[0], instances.COROLLARY_BOUND, 1e-3)
    row = marginal_yhat(c).rows[1]
    out.append(("auxiliary channel row 2", bool(np.allclose(row, [0.1, 0.2044, 0.6956], atol=1e-4)), str(np.round(row, 4).tolist())))
    ok, cert = is_maximal(c, u, q)
    out.append(("coupling maximal at uniform px", cert.slack >= -1e-6, f"slack {cert.slack:.2e}"))
    rep = corollary1_bound(c, w, q, 0.01)
    good = rep.certified and rep.certificates["min_slack"] >= -1e-6
    out.append(("corollary bound", good and abs(rep.value_bits - 0.4999) <= 1e-3, f"{rep.value_bits:.4f}, min slack {rep.certificates['min_slack']:.2e}"))
    s32 = sq_table(q)[(2, 1)]
    out.append(("S_q(3,2) = {1}", s32 == frozenset({0}), f"{sorted(j + 1 for j in s32)}"))
    out.append(("coupling outside the prior set", not is_maximal_prior(c, q), "entry (2,3,2) = 0.1133"))
    if not quick:
        pb = prior_bound(w, q, 0.005)
        close("prior bound", pb.value_bits, instances.PRIOR_BOUND, 5e-3)
    i_star, _, _ = inner_min_mi(u, w, q)
    i_v = mutual_information(u, marginal_yhat(c))
    out.append(("inner minimum at uniform px", i_star <= i_v + 1e-3, f"{i_star:.4f} <= {i_v:.4f}"))
    e0, _, _ = esp(u, w, q, mutual_information(u, w))
    out.append(("exponent vanishes at I(px, W)", e0 == 0.0, f"{e0}"))
    return out
