import json
import math

import numpy as np
import pytest

from mmlab import instances
from mmlab.bounds import BoundReport, corollary1_bound, full_bound, inner_min_mi, prior_bound, prior_inner_min
from mmlab.maximality import is_maximal, is_maximal_prior
from mmlab.probability import Coupling, DomainError, blahut_arimoto_capacity, marginal_y, marginal_yhat, mutual_information

from oracles import binary_inner_min_grid, mi_bits

UNIFORM2 = np.array([0.5, 0.5])


def h2(p):
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


def interesting_instances(seed, count):
    """Random 2 x 2 x 2 instances whose inner minimum sits strictly between 0 and I(px, W)."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        w = rng.dirichlet([1, 1], size=2)
        q = rng.normal(2, 2, size=(2, 2))
        px = rng.dirichlet([3, 3])
        if mi_bits(px, w) > 0.05:
            out.append((px, w, q))
    return out


class TestInnerMin:
    def test_against_grid_oracle(self):
        for px, w, q in interesting_instances(11, 5):
            grid, _ = binary_inner_min_grid(px, w, q, step=0.025)
            value, witness, cert = inner_min_mi(px, w, q)
            assert value <= grid + 1e-9
            assert value >= grid - 1e-3
            assert cert.slack >= -1e-6

    def test_matched_metric_gives_mutual_information(self):
        rng = np.random.default_rng(4)
        for _ in range(3):
            w = rng.dirichlet([1, 1], size=2)
            q = np.log(w)
            px = blahut_arimoto_capacity(w)[1].probs
            grid, _ = binary_inner_min_grid(px, w, q, step=0.025)
            assert grid >= mi_bits(px, w) - 1e-9
            value, _, _ = inner_min_mi(px, w, q)
            assert value == pytest.approx(mi_bits(px, w), abs=1e-6)

    def test_never_above_mutual_information(self, rng):
        for _ in range(5):
            J, K = (int(v) for v in rng.integers(2, 4, size=2))
            w = rng.dirichlet(np.ones(K), size=J)
            px = rng.dirichlet(np.ones(J))
            value, witness, cert = inner_min_mi(px, w, rng.normal(size=(J, K)))
            assert value <= mutual_information(px, w) + 1e-9
            assert np.allclose(marginal_y(witness).rows, w, atol=1e-9)
            assert cert.is_member

    def test_witness_reverifies(self, rng):
        w = rng.dirichlet(np.ones(3), size=2)
        q = rng.normal(size=(2, 3))
        px = np.array([0.3, 0.7])
        value, witness, _ = inner_min_mi(px, w, q)
        assert mutual_information(px, marginal_yhat(witness)) == pytest.approx(value, abs=1e-12)
        assert is_maximal(witness, px, q)[0]

    def test_single_output(self):
        value, _, _ = inner_min_mi([0.5, 0.5], [[1.0], [1.0]], [[0.0], [1.0]])
        assert value == 0.0

    def test_example_at_uniform(self):
        value, _, _ = inner_min_mi(UNIFORM2, instances.W_EXAMPLE, instances.Q_EXAMPLE)
        ceiling = mutual_information(UNIFORM2, instances.PYHAT_EXAMPLE)
        assert value <= ceiling + 1e-3

    def test_shape_mismatch(self):
        with pytest.raises(DomainError):
            inner_min_mi([0.5, 0.5], instances.W_EXAMPLE, np.zeros((2, 2)))


class TestSingleCouplingBound:
    def test_example_coupling(self):
        rep = corollary1_bound(instances.example_coupling(), instances.W_EXAMPLE, instances.Q_EXAMPLE, 0.01)
        assert rep.certified
        assert rep.value_bits == pytest.approx(instances.COROLLARY_BOUND, abs=1e-3)
        assert rep.certificates["min_slack"] >= -1e-6
        assert any("deviates" in c for c in rep.caveats)

    def test_diagonal_equals_capacity(self):
        w = instances.W_EXAMPLE
        rep = corollary1_bound(Coupling.diagonal(w), w, instances.Q_EXAMPLE, 0.05)
        assert rep.value_bits == blahut_arimoto_capacity(w)[0]
        assert rep.value_bits == pytest.approx(instances.CAPACITY_W, abs=1e-3)

    def test_matched_bsc(self):
        w = instances.bsc(0.1)
        rep = corollary1_bound(Coupling.diagonal(w), w, instances.matched_metric(w), 0.05)
        assert rep.value_bits == pytest.approx(1 - h2(0.1), abs=1e-3)

    def test_non_maximal_flagged(self):
        rep = corollary1_bound(instances.perturbed_example_coupling(0.1), instances.W_EXAMPLE, instances.Q_EXAMPLE, 0.05, tol_marginal=0.2)
        assert not rep.certified
        assert rep.certificates["min_slack"] < 0

    def test_marginal_tolerance(self):
        with pytest.raises(DomainError):
            corollary1_bound(instances.perturbed_example_coupling(0.1), instances.W_EXAMPLE, instances.Q_EXAMPLE, 0.05)


class TestGridBounds:
    def test_full_bound_matched_bsc(self):
        w = instances.bsc(0.1)
        rep = full_bound(w, instances.matched_metric(w), px_grid_step=0.1)
        assert rep.value_bits == pytest.approx(1 - h2(0.1), abs=2e-3)
        assert rep.caveats

    def test_single_input(self):
        rep = full_bound([[0.2, 0.8]], [[0.0, 1.0]])
        assert rep.value_bits == 0.0

    def test_prior_at_least_full(self):
        w, q = instances.W_EXAMPLE, instances.Q_EXAMPLE
        pb = prior_bound(w, q, 0.25)
        fb = full_bound(w, q, 0.25)
        assert pb.value_bits >= fb.value_bits - 2e-3
        assert fb.value_bits <= instances.PRIOR_BOUND + 5e-3

    def test_prior_witness_in_support_set(self):
        value, witness = prior_inner_min(UNIFORM2, instances.W_EXAMPLE, instances.Q_EXAMPLE)
        assert is_maximal_prior(witness, instances.Q_EXAMPLE)
        assert np.allclose(marginal_y(witness).rows, instances.W_EXAMPLE.rows, atol=1e-9)
        assert mutual_information(UNIFORM2, marginal_yhat(witness)) == pytest.approx(value, abs=1e-12)

    def test_prior_matched_below_capacity(self):
        w = instances.W_EXAMPLE
        rep = prior_bound(w, instances.matched_metric(w), 0.05)
        assert rep.value_bits <= blahut_arimoto_capacity(w)[0] + 1e-3

    def test_diagonal_always_in_support_set(self, rng):
        # S_q(k, k) is every input letter, so the support set is never empty
        for _ in range(5):
            w = rng.dirichlet(np.ones(3), size=2)
            q = rng.normal(size=(2, 3))
            assert is_maximal_prior(Coupling.diagonal(w), q)
            value, witness = prior_inner_min(UNIFORM2, w, q)
            assert witness is not None
            assert value <= mutual_information(UNIFORM2, w) + 1e-9

    def test_report_round_trip(self):
        rep = prior_bound(instances.W_EXAMPLE, instances.Q_EXAMPLE, 0.25)
        back = BoundReport.from_dict(json.loads(json.dumps(rep.to_dict())))
        assert back.value_bits == rep.value_bits
        assert back.mode == rep.mode
        assert np.array_equal(back.witness, rep.witness)
        assert back.caveats == rep.caveats

    def test_report_witness_reverifies(self):
        rep = prior_bound(instances.W_EXAMPLE, instances.Q_EXAMPLE, 0.25)
        recomputed = mutual_information(rep.witness_px, marginal_yhat(rep.witness))
        assert recomputed == pytest.approx(rep.value_bits, abs=1e-9)
