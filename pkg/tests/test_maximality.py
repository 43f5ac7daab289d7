import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmlab import instances
from mmlab.maximality import (
    MaximalityCertificate,
    additive_td,
    adversary_value,
    in_gamma_rho,
    in_gamma_star,
    in_theta_star,
    in_v_max,
    is_maximal,
    is_maximal_prior,
    is_maximal_td,
    is_maximal_universal,
    mmi_td,
    prior_violations,
    simplex_grid,
    sq_table,
)
from mmlab.probability import DomainError, marginal_yhat

from oracles import (
    adversary_lp_highs,
    binary_adversary_grid,
    binary_input_maximal,
    vmax_maxmin_highs,
    vmax_minmax_highs,
)

UNIFORM2 = np.array([0.5, 0.5])


def random_coupling(rng, J, K, alpha=1.0):
    return rng.dirichlet(np.full(K * K, alpha), size=J).reshape(J, K, K)


def diagonal_coupling(w):
    w = np.asarray(w, dtype=float)
    J, K = w.shape
    c = np.zeros((J, K, K))
    for k in range(K):
        c[:, k, k] = w[:, k]
    return c


def joint_mmi(P):
    """Mutual information in nats of a J x K joint, computed entry by entry."""
    px, py = P.sum(axis=1), P.sum(axis=0)
    total = 0.0
    for x in range(P.shape[0]):
        for y in range(P.shape[1]):
            if P[x, y] > 0:
                total += P[x, y] * np.log(P[x, y] / (px[x] * py[y]))
    return total


class TestAdversaryValue:
    def test_matches_highs_on_random_couplings(self, rng):
        for _ in range(30):
            J, K = (int(v) for v in rng.integers(2, 4, size=2))
            c = random_coupling(rng, J, K)
            px = rng.dirichlet(np.ones(J))
            q = rng.normal(size=(J, K))
            cert = adversary_value(c, px, q)
            value, baseline = adversary_lp_highs(c, px, q)
            assert cert.adversary_value == pytest.approx(value, abs=1e-8)
            assert cert.baseline == pytest.approx(baseline, abs=1e-12)

    def test_binary_closed_form_verdict(self, rng):
        agree = 0
        for _ in range(60):
            c = random_coupling(rng, 2, 2, alpha=0.5)
            q = rng.normal(size=(2, 2))
            assert is_maximal(c, UNIFORM2, q)[0] == binary_input_maximal(c, q, tol=1e-7)
            agree += 1
        assert agree == 60

    def test_lp_below_grid_enumeration(self, rng):
        for _ in range(20):
            c = random_coupling(rng, 2, 2)
            px = rng.dirichlet(np.ones(2))
            q = rng.normal(size=(2, 2))
            lp = adversary_value(c, px, q).adversary_value
            grid = binary_adversary_grid(c, px, q, step=0.01)
            assert lp <= grid + 1e-10
            # each slice is linear in the swap amount, so the grid holds the optimum
            assert grid - lp <= 1e-9

    def test_identity_adversary_bounds_value(self, rng):
        for _ in range(30):
            J, K = (int(v) for v in rng.integers(2, 4, size=2))
            cert = adversary_value(random_coupling(rng, J, K), rng.dirichlet(np.ones(J)), rng.normal(size=(J, K)))
            assert cert.adversary_value <= cert.baseline + 1e-9
            assert cert.slack <= 1e-9

    def test_worst_adversary_is_conditional(self, rng):
        cert = adversary_value(random_coupling(rng, 3, 2), [0.2, 0.3, 0.5], rng.normal(size=(3, 2)))
        assert cert.worst_adversary.shape == (3, 2, 3)
        assert np.allclose(cert.worst_adversary.sum(axis=2), 1.0)

    def test_boundary_letter_dropped(self, rng):
        c = random_coupling(rng, 3, 2)
        q = rng.normal(size=(3, 2))
        cert = adversary_value(c, [0.4, 0.6, 0.0], q)
        value, baseline = adversary_lp_highs(c, [0.4, 0.6, 0.0], q)
        assert cert.adversary_value == pytest.approx(value, abs=1e-8)
        assert np.array_equal(cert.worst_adversary[2], np.eye(3)[[2, 2]])

    def test_shape_mismatch(self):
        with pytest.raises(DomainError):
            adversary_value(np.full((2, 2, 2), 0.25), [1 / 3] * 3, np.zeros((2, 2)))

    def test_certificate_round_trip(self, rng):
        cert = adversary_value(random_coupling(rng, 2, 3), UNIFORM2, rng.normal(size=(2, 3)))
        back = MaximalityCertificate.from_dict(json.loads(json.dumps(cert.to_dict())))
        assert back.adversary_value == cert.adversary_value
        assert back.slack == cert.slack
        assert back.verdict == cert.verdict
        assert np.array_equal(back.worst_adversary, cert.worst_adversary)


class TestExample:
    def test_example_coupling_maximal_at_uniform(self):
        ok, cert = is_maximal(instances.example_coupling(), UNIFORM2, instances.Q_EXAMPLE)
        assert ok
        assert cert.slack >= -1e-6

    def test_example_coupling_universal(self):
        res = is_maximal_universal(instances.example_coupling(), instances.Q_EXAMPLE, grid_step=0.01)
        assert res.member
        assert res.n_points == 101
        assert res.min_slack >= -1e-6
        assert res.caveat == "grid-certified only"

    def test_perturbed_coupling_fails(self):
        c = instances.perturbed_example_coupling(0.1)
        res = is_maximal_universal(c, instances.Q_EXAMPLE, grid_step=0.01)
        assert not res.member
        value, baseline = adversary_lp_highs(c.per_input, res.worst_px, instances.Q_EXAMPLE.values)
        assert value - baseline == pytest.approx(res.min_slack, abs=1e-8)
        assert value - baseline < -1e-6

    def test_sq_entry(self):
        # S_q(3, 2) = {1} in 1-based letters
        assert sq_table(instances.Q_EXAMPLE)[(2, 1)] == frozenset({0})

    def test_example_coupling_outside_prior_set(self):
        c = instances.example_coupling()
        assert not is_maximal_prior(c, instances.Q_EXAMPLE)
        assert (1, 2, 1) in prior_violations(c, instances.Q_EXAMPLE)
        assert c.per_input[1, 2, 1] == pytest.approx(0.1133)

    def test_reference_auxiliary_channel_in_v_max(self):
        for p in np.arange(0.01, 1.0, 0.01):
            res = in_v_max(instances.PYHAT_EXAMPLE, [p, 1 - p], instances.W_EXAMPLE, instances.Q_EXAMPLE)
            assert res.member, p


def test_sq_ties_included():
    q = np.array([[0.0, 1.0], [0.0, 1.0], [0.0, 0.0]])
    assert sq_table(q)[(0, 1)] == frozenset({0, 1})
    assert sq_table(q)[(0, 0)] == frozenset({0, 1, 2})


def test_maximality_depends_only_on_support(rng):
    checked = 0
    for _ in range(15):
        c = random_coupling(rng, 3, 2, alpha=0.3)
        q = rng.normal(size=(3, 2))
        verdicts = {is_maximal(c, rng.dirichlet(np.ones(3)), q, tol=1e-9)[0] for _ in range(4)}
        assert len(verdicts) == 1
        checked += 1
    assert checked == 15


def test_boundary_px_can_restore_membership():
    # inputs 0 and 1 carry the diagonal; the row for input 2 is searched
    # until an adversary through input 2 beats the baseline
    w = np.array([[0.7, 0.3], [0.2, 0.8]])
    q = np.array([[0.0, -1.0], [-1.5, 0.0], [0.5, 0.5]])
    rng = np.random.default_rng(7)
    for _ in range(200):
        c = np.zeros((3, 2, 2))
        c[:2] = diagonal_coupling(w)
        c[2] = rng.dirichlet(np.ones(4)).reshape(2, 2)
        value, baseline = adversary_lp_highs(c, [1 / 3] * 3, q)
        if value - baseline < -1e-3:
            break
    else:
        pytest.fail("no separating example found")
    assert not is_maximal(c, [1 / 3] * 3, q)[0]
    assert is_maximal(c, [0.5, 0.5, 0.0], q)[0]
    res = is_maximal_universal(c, q, grid_step=0.1)
    assert not res.member
    assert res.n_points == 66


def test_simplex_grid():
    g = simplex_grid(3, 0.25)
    assert len(g) == 15
    assert np.allclose(g.sum(axis=1), 1.0)
    with pytest.raises(DomainError):
        simplex_grid(2, 0.3)


class TestInclusions:
    def test_diagonal_in_every_set(self, rng):
        for _ in range(10):
            J, K = (int(v) for v in rng.integers(2, 4, size=2))
            w = rng.dirichlet(np.ones(K), size=J)
            q = rng.normal(size=(J, K))
            px = rng.dirichlet(np.ones(J))
            c = diagonal_coupling(w)
            ok, cert = is_maximal(c, px, q)
            assert ok and abs(cert.slack) <= 1e-9
            assert in_theta_star(c, px, q)
            assert in_gamma_star(c, px, q)

    def test_sets_inside_m_max(self, rng):
        counts = {"prior": 0, "theta": 0, "gamma": 0}
        for i in range(120):
            J, K = (int(v) for v in rng.integers(2, 4, size=2))
            w = rng.dirichlet(np.ones(K), size=J)
            # mix toward the diagonal so the smaller sets are not empty
            lam = 1.0 if i % 4 == 1 else rng.uniform()
            c = lam * diagonal_coupling(w) + (1 - lam) * np.einsum("xy,xh->xyh", w, w)
            if i % 3 == 0:
                c = random_coupling(rng, J, K, alpha=0.2)
            q = rng.normal(size=(J, K))
            px = rng.dirichlet(np.ones(J))
            member = is_maximal(c, px, q)[0]
            for name, inside in (
                ("prior", is_maximal_prior(c, q)),
                ("theta", in_theta_star(c, px, q)),
                ("gamma", in_gamma_star(c, px, q)),
            ):
                if inside:
                    counts[name] += 1
                    assert member, (name, i)
        assert counts["theta"] > 0 and counts["gamma"] > 0

    def test_prior_member_when_supports_follow_sq(self, rng):
        q = rng.normal(size=(3, 2))
        table = sq_table(q)
        c = np.zeros((3, 2, 2))
        for (k1, k2), js in table.items():
            for j in js:
                c[j, k1, k2] = 1.0
        for j in range(3):
            if c[j].sum() == 0:
                c[j, 0, 0] = 1.0 if j in table[(0, 0)] else 0.0
        keep = c.reshape(3, -1).sum(axis=1) > 0
        c = c[keep] / c[keep].sum(axis=(1, 2), keepdims=True)
        q = q[keep]
        assert is_maximal_prior(c, q)
        for px in rng.dirichlet(np.ones(len(c)), size=5):
            assert is_maximal(c, px, q)[0]


class TestGammaRho:
    # rho - q per (y, yhat): (0,0) -> [0, 3], (0,1) -> [2, 0], (1,0) -> [0, 2], (1,1) -> [2, -1]
    # so input 0 may only use yhat = 0 and input 1 only yhat = 1
    Q = np.array([[0.0, 0.0], [0.0, 1.0]])
    RHO = np.array([[0.0, 2.0], [3.0, 0.0]])

    def test_member(self):
        c = np.array([[[0.7, 0.0], [0.3, 0.0]], [[0.0, 0.2], [0.0, 0.8]]])
        assert in_gamma_rho(c, self.RHO, self.Q)

    def test_non_member(self):
        c = np.array([[[0.6, 0.1], [0.3, 0.0]], [[0.0, 0.2], [0.0, 0.8]]])
        assert not in_gamma_rho(c, self.RHO, self.Q)

    def test_ties_exclude_every_maximizer(self):
        c = np.array([[[0.5, 0.0], [0.5, 0.0]], [[0.0, 0.5], [0.0, 0.5]]])
        assert not in_gamma_rho(c, np.zeros((2, 2)), np.zeros((2, 2)))


class TestTypeDependent:
    def test_additive_matches_linear_check(self, rng):
        for _ in range(15):
            J, K = (int(v) for v in rng.integers(2, 4, size=2))
            c = random_coupling(rng, J, K, alpha=0.5)
            px = rng.dirichlet(np.ones(J))
            q = rng.normal(size=(J, K))
            lin = adversary_value(c, px, q)
            ok, cert = is_maximal_td(c, px, additive_td(q))
            assert cert.adversary_value == pytest.approx(lin.adversary_value, abs=1e-8)
            assert ok == lin.is_member

    def test_mmi_diagonal_member(self, rng):
        for _ in range(5):
            w = rng.dirichlet(np.ones(3), size=2)
            ok, cert = is_maximal_td(diagonal_coupling(w), rng.dirichlet(np.ones(2)), mmi_td())
            assert ok
            assert cert.slack >= -1e-9

    def test_mmi_against_exhaustive_grid(self, rng):
        for _ in range(6):
            c = random_coupling(rng, 2, 2)
            px = rng.dirichlet(np.ones(2))
            P = px[:, None, None] * c
            best = np.inf
            m = P.sum(axis=1)  # [x, h]
            lim = [min(1.0, m[1, h] / m[0, h]) for h in range(2)]
            for t0 in np.linspace(0, lim[0], 201):
                for t1 in np.linspace(0, lim[1], 201):
                    J2 = np.zeros((2, 2))
                    for h, t in ((0, t0), (1, t1)):
                        s = t * m[0, h] / m[1, h]
                        J2[0] += (1 - t) * P[0, :, h] + s * P[1, :, h]
                        J2[1] += t * P[0, :, h] + (1 - s) * P[1, :, h]
                    best = min(best, joint_mmi(J2))
            _, cert = is_maximal_td(c, px, mmi_td())
            assert cert.adversary_value <= best + 1e-9
            assert cert.adversary_value >= best - 1e-3
            assert cert.baseline == pytest.approx(joint_mmi(P.sum(axis=2)), abs=1e-12)


class TestVmax:
    def test_w_itself_is_member(self, rng):
        for _ in range(5):
            w = rng.dirichlet(np.ones(3), size=2)
            res = in_v_max(w, rng.dirichlet(np.ones(2)), w, rng.normal(size=(2, 3)))
            assert res.member

    def test_game_value_both_orders(self, rng):
        for _ in range(20):
            J, K = (int(v) for v in rng.integers(2, 4, size=2))
            w = rng.dirichlet(np.ones(K), size=J)
            v = rng.dirichlet(np.ones(K), size=J)
            px = rng.dirichlet(np.ones(J))
            q = rng.normal(size=(J, K))
            res = in_v_max(v, px, w, q)
            assert res.game_value == pytest.approx(vmax_maxmin_highs(v, px, w, q), abs=1e-8)
            assert res.game_value == pytest.approx(vmax_minmax_highs(v, px, w, q), abs=1e-8)

    def test_follows_from_maximal_coupling(self, rng):
        hits = 0
        for _ in range(40):
            J, K = (int(v) for v in rng.integers(2, 4, size=2))
            c = random_coupling(rng, J, K, alpha=0.3)
            px = rng.dirichlet(np.ones(J))
            q = rng.normal(size=(J, K))
            if is_maximal(c, px, q)[0]:
                hits += 1
                w = c.sum(axis=2)
                assert in_v_max(marginal_yhat(c).rows, px, w, q).member
        assert hits > 0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_adversary_value_never_above_baseline(seed):
    rng = np.random.default_rng(seed)
    J, K = (int(v) for v in rng.integers(2, 4, size=2))
    cert = adversary_value(random_coupling(rng, J, K), rng.dirichlet(np.ones(J)), rng.normal(size=(J, K)))
    assert cert.adversary_value <= cert.baseline + 1e-9
