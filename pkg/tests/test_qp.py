import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cartpole_nmpc.qp import (QpSettings, QpSolverError, QpSubproblem, assemble_kkt_matrix, solve_kkt,
                              solve_qp, step_length)
from oracles import active_set_qp, random_qp


class TestStepLength:
    def test_all_nonnegative(self):
        assert step_length([1.0, 2.0], [-1.0, -1.0]) == 1.0

    def test_single_negative(self):
        assert step_length([-2.0], [-1.0]) == 0.5

    def test_mixed(self):
        assert step_length([-4.0, 1.0, -0.5], [-1.0, -3.0, -1.0]) == 0.25

    def test_blocked(self):
        assert step_length([-1.0, 1.0], [0.0, -1.0]) == 0.0

    @given(st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, -1e-3)), min_size=1, max_size=8))
    def test_is_largest_feasible(self, pairs):
        v = np.array([a for a, _ in pairs])
        r = np.array([b for _, b in pairs])
        alpha = step_length(v, r)
        assert 0 < alpha <= 1
        assert np.all(alpha * v >= r - 1e-12)
        if alpha < 1:
            # any longer step breaks some component
            assert np.any((alpha * 1.0001) * v < r)


def random_kkt_instance(rng, n=6, m=4):
    c = rng.normal(size=(n, n))
    sub = QpSubproblem.from_hessian(c @ c.T + np.eye(n), rng.normal(size=n), rng.normal(size=(m, n)), rng.normal(size=m))
    return sub, rng.uniform(0.1, 3, m), rng.uniform(0.1, 3, m), rng.normal(size=n + 2 * m)


class TestKkt:
    def test_unconstrained_identity(self):
        sub = QpSubproblem(np.eye(2), np.zeros(2))
        dp, dy, dl = solve_kkt(sub, [], [], [3.0, -1.0], [], [])
        np.testing.assert_allclose(dp, [3.0, -1.0])
        assert dy.size == 0 and dl.size == 0

    def test_scalar_against_dense(self):
        sub = QpSubproblem([[1.0]], [0.0], [[1.0]], [0.0])
        k = assemble_kkt_matrix(sub, [1.0], [1.0])
        np.testing.assert_allclose(np.linalg.solve(k, [1.0, 0.0, 0.0]), [0.5, 0.5, -0.5])
        dp, dy, dl = solve_kkt(sub, [1.0], [1.0], [1.0], [0.0], [0.0])
        np.testing.assert_allclose([dp[0], dy[0], dl[0]], [0.5, 0.5, -0.5], atol=1e-15)

    def test_random_against_dense(self, rng):
        for _ in range(50):
            sub, lam, y, v = random_kkt_instance(rng)
            n, m = sub.n, sub.m
            dense = np.linalg.solve(assemble_kkt_matrix(sub, lam, y), v)
            got = np.concatenate(solve_kkt(sub, lam, y, v[:n], v[n:n + m], v[n + m:]))
            np.testing.assert_allclose(got, dense, atol=1e-10)

    def test_singular_reduced_system(self):
        sub = QpSubproblem([[1.0]], [0.0], [[1.0]], [0.0])
        with pytest.raises(QpSolverError):
            solve_kkt(sub, [0.0], [0.0], [1.0], [0.0], [0.0])


class TestSolveQp:
    def test_unconstrained(self):
        sol = solve_qp(QpSubproblem(np.eye(2), [2.0, -4.0]))
        np.testing.assert_allclose(sol.step, [-2.0, 4.0])
        assert sol.iterations_used == 0

    def test_scalar_upper_bound(self):
        # min 1/2 p^2 - p  s.t. -p >= -0.5
        sol = solve_qp(QpSubproblem([[1.0]], [-1.0], [[-1.0]], [-0.5]))
        assert sol.step[0] == pytest.approx(0.5, abs=1e-8)
        assert sol.multipliers[0] == pytest.approx(0.5, abs=1e-8)
        assert sol.slacks[0] == pytest.approx(0.0, abs=1e-8)

    def test_inactive_constraint(self):
        sol = solve_qp(QpSubproblem([[1.0]], [-1.0], [[-1.0]], [-5.0]))
        assert sol.step[0] == pytest.approx(1.0, abs=1e-8)
        assert sol.multipliers[0] == pytest.approx(0.0, abs=1e-8)

    def test_matches_active_set_oracle(self, rng):
        for _ in range(100):
            h, g, a, b = random_qp(rng)
            sol = solve_qp(QpSubproblem.from_hessian(h, g, a, b))
            np.testing.assert_allclose(sol.step, active_set_qp(h, g, a, b), atol=1e-6)

    def test_residual_contract_and_positivity(self, rng):
        for _ in range(100):
            h, g, a, b = random_qp(rng)
            sol = solve_qp(QpSubproblem.from_hessian(h, g, a, b))
            p, lam, y = sol.step, sol.multipliers, sol.slacks
            assert np.max(np.abs(h @ p + g - a.T @ lam)) <= 1e-6 * (1 + np.max(np.abs(g)))
            assert np.max(np.abs(y - a @ p + b)) <= 1e-6 * (1 + np.max(np.abs(b)))
            assert np.all(lam > 0) and np.all(y > 0)
            assert sol.mu_history[-1] <= sol.mu_history[0]

    def test_fixed_iteration_mode(self, rng):
        h, g, a, b = random_qp(rng, n=3, m=4)
        sol = solve_qp(QpSubproblem.from_hessian(h, g, a, b), settings=QpSettings(max_iters=30, early_exit=False))
        assert sol.iterations_used == 30
        np.testing.assert_allclose(sol.step, active_set_qp(h, g, a, b), atol=1e-6)

    def test_adaptive_tau(self, rng):
        for _ in range(20):
            h, g, a, b = random_qp(rng)
            sol = solve_qp(QpSubproblem.from_hessian(h, g, a, b), settings=QpSettings(adaptive_tau=True))
            np.testing.assert_allclose(sol.step, active_set_qp(h, g, a, b), atol=1e-6)

    def test_warm_start_floor(self, rng):
        h, g, a, b = random_qp(rng, n=3, m=3)
        sol = solve_qp(QpSubproblem.from_hessian(h, g, a, b), np.zeros(3), np.zeros(3))
        np.testing.assert_allclose(sol.step, active_set_qp(h, g, a, b), atol=1e-6)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.01, 100.0), st.integers(0, 2**32 - 1))
    def test_scale_invariance_unconstrained(self, s, seed):
        rng = np.random.default_rng(seed)
        c = rng.normal(size=(4, 4))
        h, g = c @ c.T + np.eye(4), rng.normal(size=4)
        p1 = solve_qp(QpSubproblem.from_hessian(h, g)).step
        p2 = solve_qp(QpSubproblem.from_hessian(s * h, s * g)).step
        np.testing.assert_allclose(p2, p1, rtol=1e-9, atol=1e-12)

    def test_subproblem_validation(self):
        with pytest.raises(ValueError):
            QpSubproblem(np.eye(2), np.zeros(3))
        with pytest.raises(ValueError):
            QpSettings(tau=1.0)
