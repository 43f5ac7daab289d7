import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from mmlab.lp import InfeasibleError, LpProblem, Polytope, solve_bilinear_game, solve_lp, solve_lp_general


def highs_maxmin(M, X: Polytope, Y: Polytope):
    """max_x min_y x'My via HiGHS, dualizing the inner problem (independent build)."""
    A, a, B, b = X.A_eq, X.b_eq, Y.A_eq, Y.b_eq
    nx, my = A.shape[1], B.shape[0]
    # variables (x, l) with l free: maximize b.l s.t. B'l <= M'x
    c = np.concatenate([np.zeros(nx), -b])
    A_ub = np.hstack([-M.T, B.T])
    A_eq = np.hstack([A, np.zeros((A.shape[0], my))])
    bounds = [(0, None)] * nx + [(None, None)] * my
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(A_ub.shape[0]), A_eq=A_eq, b_eq=a, bounds=bounds, method="highs")
    assert res.status == 0
    return -res.fun


def random_feasible_lp(rng, m, n):
    A = rng.normal(size=(m, n))
    x0 = rng.uniform(0.1, 1.0, size=n)
    c = rng.uniform(0.0, 1.0, size=n)  # c >= 0 keeps the problem bounded
    return LpProblem(c, A, A @ x0)


class TestSolveLp:
    def test_single_equality(self):
        sol = solve_lp(LpProblem([1.0], [[1.0]], [1.0]))
        assert sol.optimal and sol.objective == pytest.approx(1.0)

    def test_infeasible_pair(self):
        sol = solve_lp(LpProblem([1.0], [[1.0], [1.0]], [1.0, 2.0]))
        assert sol.status == "infeasible"

    def test_unbounded(self):
        sol = solve_lp(LpProblem([-1.0, 0.0], [[1.0, -1.0]], [0.0]))
        assert sol.status == "unbounded"

    def test_simplex_vertex(self):
        c = np.array([0.4, -0.2, 0.9, -0.1])
        sol = solve_lp(LpProblem(c, np.ones((1, 4)), [1.0]))
        assert sol.objective == pytest.approx(c.min())
        assert sol.x[np.argmin(c)] == pytest.approx(1.0)

    def test_beale_cycling_example(self):
        # a classic degenerate LP on which the largest-coefficient rule cycles
        A = np.array(
            [
                [0.25, -60.0, -1 / 25, 9.0, 1, 0, 0],
                [0.5, -90.0, -1 / 50, 3.0, 0, 1, 0],
                [0.0, 0.0, 1.0, 0.0, 0, 0, 1],
            ]
        )
        c = np.array([-0.75, 150.0, -1 / 50, 6.0, 0, 0, 0])
        sol = solve_lp(LpProblem(c, A, [0.0, 0.0, 1.0]))
        assert sol.optimal and sol.objective == pytest.approx(-0.05, abs=1e-12)

    def test_against_highs(self, rng):
        for _ in range(30):
            m, n = int(rng.integers(1, 6)), int(rng.integers(2, 10))
            p = random_feasible_lp(rng, m, n)
            ref = linprog(p.c, A_eq=p.A_eq, b_eq=p.b_eq, bounds=(0, None), method="highs")
            sol = solve_lp(p)
            assert sol.optimal and sol.objective == pytest.approx(ref.fun, abs=1e-8)

    def test_strong_duality_and_certificates(self, rng):
        for _ in range(30):
            p = random_feasible_lp(rng, 4, 8)
            sol = solve_lp(p)
            assert p.b_eq @ sol.duals == pytest.approx(sol.objective, abs=1e-9 * (1 + abs(sol.objective)))
            assert np.all(p.c - p.A_eq.T @ sol.duals >= -1e-9)
            assert np.abs(p.A_eq @ sol.x - p.b_eq).max() <= 1e-9 * (1 + np.abs(p.b_eq).max())

    def test_deterministic(self, rng):
        p = random_feasible_lp(rng, 5, 12)
        a, b = solve_lp(p), solve_lp(p)
        np.testing.assert_array_equal(a.x, b.x)

    def test_redundant_rows(self):
        A = np.array([[1.0, 1.0, 0.0], [2.0, 2.0, 0.0], [0.0, 1.0, 1.0]])
        sol = solve_lp(LpProblem([1.0, 2.0, 0.5], A, [1.0, 2.0, 1.0]))
        ref = linprog([1.0, 2.0, 0.5], A_eq=A, b_eq=[1.0, 2.0, 1.0], method="highs")
        assert sol.objective == pytest.approx(ref.fun, abs=1e-10)

    def test_shape_check(self):
        with pytest.raises(ValueError):
            LpProblem([1.0, 2.0], [[1.0, 1.0, 1.0]], [1.0])


def test_general_form_against_highs(rng):
    for _ in range(20):
        n = 6
        A_ub = rng.normal(size=(3, n))
        b_ub = rng.uniform(1, 2, size=3)
        A_eq = rng.normal(size=(1, n))
        b_eq = np.zeros(1)
        c = rng.normal(size=n)
        free = np.zeros(n, dtype=bool)
        free[[0, 3]] = True
        bounds = [(None, None) if f else (0, None) for f in free]
        # box the free variables so both problems are bounded
        A_ub = np.vstack([A_ub, np.eye(n)[free], -np.eye(n)[free], np.eye(n)])
        b_ub = np.concatenate([b_ub, np.full(2, 5.0), np.full(2, 5.0), np.full(n, 5.0)])
        ref = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
        sol = solve_lp_general(c, A_ub, b_ub, A_eq, b_eq, free=free)
        assert ref.status == 0 and sol.optimal
        assert sol.objective == pytest.approx(ref.fun, abs=1e-8)
        assert np.all(A_ub @ sol.x <= b_ub + 1e-8)


def test_general_form_rejects_index_lists():
    with pytest.raises(ValueError):
        solve_lp_general(np.ones(3), A_eq=np.ones((1, 3)), b_eq=[1.0], free=np.array([0, 2]))


class TestBilinearGame:
    def test_matching_pennies(self):
        g = solve_bilinear_game(np.array([[1.0, -1.0], [-1.0, 1.0]]), Polytope.simplex(2), Polytope.simplex(2))
        assert g.value == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(g.max_strategy, [0.5, 0.5], atol=1e-12)
        np.testing.assert_allclose(g.min_strategy, [0.5, 0.5], atol=1e-12)

    def test_constant_payoff(self):
        g = solve_bilinear_game(np.full((3, 4), 2.5), Polytope.simplex(3), Polytope.simplex(4))
        assert g.value == pytest.approx(2.5)

    def test_random_games_against_highs(self, rng):
        for _ in range(20):
            M = rng.normal(size=(3, 3))
            X, Y = Polytope.simplex(3), Polytope.simplex(3)
            g = solve_bilinear_game(M, X, Y)
            assert g.value == pytest.approx(highs_maxmin(M, X, Y), abs=1e-8)
            # min-max solved as a max-min of the negated transposed game
            assert g.value == pytest.approx(-highs_maxmin(-M.T, Y, X), abs=1e-8)
            assert g.saddle_gap <= 1e-8

    def test_role_swap(self, rng):
        M = rng.normal(size=(4, 2))
        g = solve_bilinear_game(M, Polytope.simplex(4), Polytope.simplex(2))
        h = solve_bilinear_game(-M.T, Polytope.simplex(2), Polytope.simplex(4))
        assert g.value == pytest.approx(-h.value, abs=1e-8)

    def test_empty_polytope(self):
        X = Polytope(np.array([[1.0, 1.0], [1.0, 1.0]]), np.array([1.0, 2.0]))
        with pytest.raises(InfeasibleError):
            solve_bilinear_game(np.eye(2), X, Polytope.simplex(2))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5), st.integers(2, 9))
def test_random_lp_matches_highs(seed, m, n):
    rng = np.random.default_rng(seed)
    p = random_feasible_lp(rng, m, n)
    ref = linprog(p.c, A_eq=p.A_eq, b_eq=p.b_eq, bounds=(0, None), method="highs")
    sol = solve_lp(p)
    assert sol.objective == pytest.approx(ref.fun, abs=1e-7 * (1 + abs(ref.fun)))
