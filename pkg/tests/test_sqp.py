import math

import numpy as np
import pytest

from cartpole_nmpc.dynamics import CartPendulum, PlantParams
from cartpole_nmpc.integrator import DiscretizationConfig, LinearModel, rollout, simulate
from cartpole_nmpc.qp import QpSolution, solve_qp
from cartpole_nmpc.sqp import (HorizonProblem, LineSearchSettings, build_constraints, build_jacobian,
                               build_residual, build_sensitivities, build_sqrt_hessian_and_gradient,
                               constraint_values, givens_append_rows, horizon_cost, line_search,
                               linearize, predicted_violation_reduction)
from oracles import central_jacobian

Q = np.diag([1.0, 2.0, 0.1, 5.0])
R = np.array([[0.1]])


def cart_problem(n=4, **kw):
    return HorizonProblem(CartPendulum(), n, DiscretizationConfig(0.05, 5), Q, R, **kw)


class CubicInput:
    """Scalar plant xdot = a u + b u^3 (independent of x)."""

    n_x = n_u = 1

    def __init__(self, a, b):
        self.a, self.b = a, b

    def ode(self, x, u, t=0.0):
        return np.array([self.a * u[0] + self.b * u[0] ** 3])

    def evaluate(self, x, u, t=0.0):
        return self.ode(x, u), np.zeros((1, 1)), np.array([[self.a + 3 * self.b * u[0] ** 2]])


def random_instance(rng, n):
    x0 = rng.uniform([-1, -0.5, -2, -math.pi], [1, 0.5, 2, math.pi])
    u = rng.uniform(-5, 5, size=(n, 1))
    return x0, u


class TestResidual:
    def test_setpoint(self):
        prob = cart_problem(3)
        e = build_residual(prob, np.zeros((3, 4)), np.zeros((3, 1)))
        assert np.all(e == 0) and horizon_cost(prob, np.zeros((3, 4)), np.zeros((3, 1))) == 0

    def test_identity_weights(self):
        prob = HorizonProblem(CartPendulum(), 1, DiscretizationConfig(0.05, 1), np.eye(4), np.eye(1))
        e = build_residual(prob, [[1, 2, 3, 4]], [[5]])
        np.testing.assert_allclose(e, [1, 2, 3, 4, 5])

    def test_cost_sum_identity(self, rng):
        prob = cart_problem(2)
        x, u = rng.normal(size=(2, 4)), rng.normal(size=(2, 1))
        e = build_residual(prob, x, u)
        direct = sum(x[k] @ Q @ x[k] + u[k] @ R @ u[k] for k in range(2))
        assert e @ e == pytest.approx(direct, rel=1e-12)

    def test_non_diagonal_weights(self, rng):
        c = rng.normal(size=(4, 4))
        q = c @ c.T
        r = np.array([[2.0]])
        prob = HorizonProblem(CartPendulum(), 3, DiscretizationConfig(0.05, 2), q, r)
        x, u = rng.normal(size=(3, 4)), rng.normal(size=(3, 1))
        e = build_residual(prob, x, u)
        assert e @ e == pytest.approx(horizon_cost(prob, x, u), rel=1e-12)


class TestJacobian:
    def test_single_block(self, rng):
        prob = cart_problem(1)
        x0, u = random_instance(rng, 1)
        r = rollout(prob.plant, x0, u, prob.disc)
        j = build_jacobian(prob, r)
        np.testing.assert_allclose(j[:4], prob.q_sqrt @ r.jac_inputs[0])
        np.testing.assert_allclose(j[4:], prob.r_sqrt)

    def test_zero_dynamics(self):
        model = LinearModel(np.zeros((4, 4)), np.zeros((4, 1)))
        prob = HorizonProblem(model, 3, DiscretizationConfig(0.1, 2), Q, R)
        j = build_jacobian(prob, rollout(model, np.ones(4), np.ones((3, 1)), prob.disc))
        assert np.all(j[:12] == 0)
        np.testing.assert_allclose(j[12:], np.sqrt(0.1) * np.eye(3))

    def test_finite_differences(self, rng):
        prob = cart_problem(4)
        for _ in range(5):
            x0, u = random_instance(rng, 4)
            j = build_jacobian(prob, rollout(prob.plant, x0, u, prob.disc))
            stacked = lambda z: (simulate(prob.plant, x0, z.reshape(4, 1), prob.disc) @ prob.q_sqrt.T).ravel()
            np.testing.assert_allclose(j[:16], central_jacobian(stacked, u.ravel()), rtol=1e-4, atol=1e-8)

    def test_causality(self, rng):
        prob = cart_problem(5)
        x0, u = random_instance(rng, 5)
        s = build_sensitivities(rollout(prob.plant, x0, u, prob.disc))
        for k in range(5):
            assert np.all(s[4 * k:4 * k + 4, k + 1:] == 0)
        u2 = u.copy()
        u2[-1] += 3.0
        assert np.array_equal(simulate(prob.plant, x0, u, prob.disc)[:-1], simulate(prob.plant, x0, u2, prob.disc)[:-1])


class TestSqrtHessian:
    def test_single_column(self):
        r = np.array([[1.0]])
        givens_append_rows(r, [[1.0]])
        assert r[0, 0] == pytest.approx(math.sqrt(2), rel=1e-15)

    def test_append_matches_gram(self, rng):
        a = rng.normal(size=(3, 3))
        r = np.linalg.cholesky(a @ a.T + np.eye(3)).T
        rows = rng.normal(size=(5, 3))
        before = r.T @ r
        givens_append_rows(r, rows)
        np.testing.assert_allclose(r.T @ r, before + rows.T @ rows, rtol=1e-12, atol=1e-12)
        assert np.allclose(np.tril(r, -1), 0) and np.all(np.diag(r) > 0)

    def test_single_step_cartpole(self, rng):
        prob = cart_problem(1)
        x0, u = random_instance(rng, 1)
        lin = linearize(prob, x0, u)
        j = build_jacobian(prob, rollout(prob.plant, x0, u, prob.disc))
        np.testing.assert_allclose(lin.sqrt_hessian.T @ lin.sqrt_hessian, j.T @ j, rtol=1e-12)

    def test_gradient_three_steps(self, rng):
        prob = cart_problem(3)
        x0, u = random_instance(rng, 3)
        lin = linearize(prob, x0, u)
        j = build_jacobian(prob, rollout(prob.plant, x0, u, prob.disc))
        np.testing.assert_allclose(lin.gradient, j.T @ lin.residual, rtol=1e-12, atol=1e-12 * np.max(np.abs(lin.gradient)))

    def test_nonsingular(self, rng):
        prob = cart_problem(6)
        x0, u = random_instance(rng, 6)
        rf, _ = build_sqrt_hessian_and_gradient(prob, build_sensitivities(rollout(prob.plant, x0, u, prob.disc)),
                                                simulate(prob.plant, x0, u, prob.disc), u)
        assert np.all(np.diag(rf) > 0)
        z = np.linalg.solve(rf, np.ones(6))
        assert np.all(np.isfinite(z))


class TestConstraints:
    def test_input_box(self):
        prob = cart_problem(2, input_lower=[-10], input_upper=[10])
        a, b = build_constraints(prob, np.zeros((2, 4)), [[1.0], [-2.0]], np.zeros((8, 2)))
        np.testing.assert_array_equal(a, np.vstack([np.eye(2), -np.eye(2)]))
        np.testing.assert_array_equal(b, [-11, -8, -9, -12])

    def test_on_lower_bound(self):
        prob = cart_problem(2, input_lower=[-10], input_upper=[10])
        _, b = build_constraints(prob, np.zeros((2, 4)), [[-10.0], [0.0]], np.zeros((8, 2)))
        assert b[0] == 0.0

    def test_unbounded_inputs_give_no_rows(self):
        prob = cart_problem(3)
        a, b = build_constraints(prob, np.zeros((3, 4)), np.zeros((3, 1)), np.zeros((12, 3)))
        assert a.shape == (0, 3) and b.size == 0 and prob.n_constraints == 0

    def test_cart_position_rows(self, rng):
        lo = [-np.inf, -2, -np.inf, -np.inf]
        hi = [np.inf, 2, np.inf, np.inf]
        prob = cart_problem(3, input_lower=[-10], input_upper=[10], state_lower=lo, state_upper=hi)
        x0, u = random_instance(rng, 3)
        lin = linearize(prob, x0, u)
        assert lin.constraint_matrix.shape == (12, 3) == (prob.n_constraints, 3)
        pos = lambda z: simulate(prob.plant, x0, z.reshape(3, 1), prob.disc)[:, 1]
        fd = central_jacobian(pos, u.ravel())
        np.testing.assert_allclose(lin.constraint_matrix[6:9], fd, rtol=1e-4, atol=1e-8)
        np.testing.assert_allclose(lin.constraint_matrix[9:12], -fd, rtol=1e-4, atol=1e-8)
        np.testing.assert_allclose(lin.constraint_rhs[6:9], -2 - lin.trajectory[:, 1])
        np.testing.assert_allclose(lin.constraint_rhs[9:12], lin.trajectory[:, 1] - 2)

    def test_one_sided_state_bound(self):
        prob = cart_problem(2, state_upper=[np.inf, 1.0, np.inf, np.inf])
        assert prob.n_constraints == 2
        c = constraint_values(prob, np.array([[0, 1.5, 0, 0], [0, 0.5, 0, 0]]), np.zeros((2, 1)))
        np.testing.assert_allclose(c, [0.5, -0.5])


class TestPredictedViolation:
    def test_none_violated(self):
        assert predicted_violation_reduction([5, 5], [-1, 0], 1.0) == 0.0

    def test_saturates(self):
        assert predicted_violation_reduction([3.0], [1.0], 0.5) == 1.0

    def test_mixed(self):
        assert predicted_violation_reduction([3, 9, 0.1], [1, -1, 0.2], 0.5) == pytest.approx(1.05, abs=1e-15)


def _run_line_search(prob, x0, u, settings=None):
    lin = linearize(prob, x0, u)
    m = lin.constraint_rhs.size
    sol = solve_qp(lin.subproblem(), np.ones(m), np.ones(m))
    return lin, sol, line_search(prob, x0, u, lin, np.ones(m), np.ones(m), sol, settings)


class TestLineSearch:
    def test_linear_full_step_exact(self, rng):
        model = LinearModel([[0.0, 0.0], [1.0, 0.0]], [[1.0], [0.0]])
        prob = HorizonProblem(model, 5, DiscretizationConfig(0.1, 2), np.diag([1.0, 3.0]), [[0.2]])
        x0, u = np.array([0.5, -1.0]), rng.normal(size=(5, 1))
        lin, sol, res = _run_line_search(prob, x0, u)
        assert res.accepted and res.alpha == 1.0
        lin2 = linearize(prob, x0, res.inputs)
        assert np.max(np.abs(lin2.gradient)) < 1e-10

    def test_zero_step_accepted(self, rng):
        prob = cart_problem(3)
        x0, u = random_instance(rng, 3)
        lin = linearize(prob, x0, u)
        zero = QpSolution(np.zeros(3), np.zeros(0), np.zeros(0))
        res = line_search(prob, x0, u, lin, np.zeros(0), np.zeros(0), zero)
        assert res.accepted and res.alpha == 1.0
        np.testing.assert_array_equal(res.inputs, u)

    def test_backtracks_once_on_cubic(self):
        # x2 = 2 + u + u^3, V = x2^2 + 0.01 u^2, start at u = 0
        prob = HorizonProblem(CubicInput(1.0, 1.0), 1, DiscretizationConfig(1.0, 1), [[1.0]], [[0.01]])
        x0, u = np.array([2.0]), np.array([[0.0]])
        lin, sol, res = _run_line_search(prob, x0, u)
        p = sol.step[0]
        assert p == pytest.approx(-2.0 / 1.01, rel=1e-12)
        v = lambda z: (2 + z + z**3) ** 2 + 0.01 * z**2
        # independent evaluation: full step fails, half step passes
        assert v(p) > v(0.0)
        assert v(0.5 * p) < v(0.0) + 1e-4 * 0.5 * p * lin.gradient[0]
        assert res.accepted and res.alpha == 0.5
        assert res.inputs[0, 0] == pytest.approx(0.5 * p, rel=1e-15)
        assert [t[0] for t in res.trials] == [1.0, 0.5]

    def test_multiplier_interpolation(self):
        prob = HorizonProblem(CubicInput(1.0, 1.0), 1, DiscretizationConfig(1.0, 1), [[1.0]], [[0.01]],
                              input_lower=[-5], input_upper=[5])
        x0, u = np.array([2.0]), np.array([[0.0]])
        lin, sol, res = _run_line_search(prob, x0, u)
        assert res.alpha == 0.5
        np.testing.assert_allclose(res.multipliers, 1 + 0.5 * (sol.multipliers - 1))
        np.testing.assert_allclose(res.slacks, 1 + 0.5 * (sol.slacks - 1))

    def test_infeasible_phase_reduces_violation(self):
        # cart starts beyond its position bound moving outward
        prob = cart_problem(10, input_lower=[-10], input_upper=[10],
                            state_lower=[-np.inf, -0.5, -np.inf, -np.inf], state_upper=[np.inf, 0.5, np.inf, np.inf])
        x0 = np.array([2.0, 0.45, 0.0, 0.0])
        u = np.zeros((10, 1))
        lin, sol, res = _run_line_search(prob, x0, u)
        assert not res.feasible_phase
        before = np.sum(np.maximum(lin.constraint_rhs, 0))
        assert res.accepted and res.violation < before

    def test_all_backtracks_fail_sets_flag(self, rng):
        prob = cart_problem(3)
        x0, u = random_instance(rng, 3)
        lin = linearize(prob, x0, u)
        uphill = QpSolution(np.sign(lin.gradient) * 1.0, np.zeros(0), np.zeros(0))
        res = line_search(prob, x0, u, lin, np.zeros(0), np.zeros(0), uphill, LineSearchSettings(max_backtracks=4))
        assert res.converged and not res.accepted and not res.stalled
        np.testing.assert_array_equal(res.inputs, u)

    def test_descent_direction(self, rng):
        prob = cart_problem(5, input_lower=[-10], input_upper=[10])
        for _ in range(5):
            x0 = rng.uniform([-1, -0.5, -2, -math.pi], [1, 0.5, 2, math.pi])
            u = rng.uniform(-5, 5, size=(5, 1))
            lin = linearize(prob, x0, u)
            sol = solve_qp(lin.subproblem())
            assert sol.step @ lin.gradient < 0

    def test_cost_factorisation(self, rng):
        prob = cart_problem(6)
        x0, u = random_instance(rng, 6)
        lin = linearize(prob, x0, u)
        assert lin.cost == pytest.approx(lin.residual @ lin.residual, rel=1e-12)


class TestProblemValidation:
    def test_rejects_singular_r(self):
        with pytest.raises(ValueError):
            HorizonProblem(CartPendulum(), 2, DiscretizationConfig(), Q, [[0.0]])

    def test_rejects_indefinite_q(self):
        with pytest.raises(ValueError):
            HorizonProblem(CartPendulum(), 2, DiscretizationConfig(), -np.eye(4), R)

    def test_rejects_crossed_bounds(self):
        with pytest.raises(ValueError):
            cart_problem(2, input_lower=[1], input_upper=[0])

    def test_clamp(self):
        prob = cart_problem(3, input_lower=[-1], input_upper=[1])
        np.testing.assert_array_equal(prob.clamp_inputs([5, -5, 0.5]), [[1], [-1], [0.5]])
