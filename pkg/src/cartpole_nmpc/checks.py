"""Quick self-checks run by ``cartpole-nmpc check``.

Each check compares an analytic path against a brute-force one on a handful
of random instances. The full versions live in the test-suite.
"""
from __future__ import annotations

import numpy as np

from .dynamics import CartPendulum, eval_denominator
from .integrator import DiscretizationConfig, euler_step, euler_step_with_sensitivities
from .qp import QpSubproblem, assemble_kkt_matrix, solve_kkt, solve_qp
from .sqp import HorizonProblem, build_jacobian, build_residual, linearize
from .integrator import rollout


def _fd(fun, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        step = h * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        cols.append((fun(xp) - fun(xm)) / (2 * step))
    return np.column_stack(cols)


def _close(a, b, rel, floor=1e-8):
    return bool(np.all(np.abs(a - b) <= rel * np.abs(b) + floor))


def check_dynamics_gradients(rng, n=100):
    plant = CartPendulum()
    ok = True
    for _ in range(n):
        x = rng.uniform([-5, -2, -5, -np.pi], [5, 2, 5, np.pi])
        u = rng.uniform(-10, 10, size=1)
        _, jx, ju = plant.evaluate(x, u)
        ok &= _close(jx, _fd(lambda z: plant.ode(z, u), x), 1e-5, 1e-7)
        ok &= _close(ju, _fd(lambda z: plant.ode(x, z), u), 1e-5, 1e-7)
        ok &= eval_denominator(plant.params, x[3]) > 0
    return ok


def check_discrete_sensitivities(rng, n=20):
    plant, cfg = CartPendulum(), DiscretizationConfig(0.05, 5)
    ok = True
    for _ in range(n):
        x = rng.uniform([-2, -1, -3, -np.pi], [2, 1, 3, np.pi])
        u = rng.uniform(-10, 10, size=1)
        step = euler_step_with_sensitivities(plant, x, u, cfg)
        ok &= _close(step.jac_state, _fd(lambda z: euler_step(plant, z, u, cfg), x), 1e-5, 1e-7)
        ok &= _close(step.jac_input, _fd(lambda z: euler_step(plant, x, z, cfg), u), 1e-5, 1e-7)
    return ok


def check_structured_kkt(rng, n=50):
    worst = 0.0
    for _ in range(n):
        nd, m = 6, 4
        c = rng.normal(size=(nd, nd))
        sub = QpSubproblem.from_hessian(c @ c.T + np.eye(nd), rng.normal(size=nd), rng.normal(size=(m, nd)),
                                        rng.normal(size=m))
        lam, y = rng.uniform(0.1, 2, m), rng.uniform(0.1, 2, m)
        v = rng.normal(size=nd + 2 * m)
        dense = np.linalg.solve(assemble_kkt_matrix(sub, lam, y), v)
        got = np.concatenate(solve_kkt(sub, lam, y, v[:nd], v[nd:nd + m], v[nd + m:]))
        worst = max(worst, float(np.max(np.abs(got - dense))))
    return worst < 1e-10


def check_sqrt_hessian(rng, n=10):
    ok = True
    for _ in range(n):
        prob = HorizonProblem(CartPendulum(), int(rng.integers(1, 8)), DiscretizationConfig(0.05, 5),
                              np.diag([1, 2, 0.1, 5]), [[0.1]], [-10], [10])
        x0 = rng.uniform([-1, -1, -2, -np.pi], [1, 1, 2, np.pi])
        u = rng.uniform(-5, 5, size=(prob.horizon, 1))
        lin = linearize(prob, x0, u)
        jac = build_jacobian(prob, rollout(prob.plant, x0, u, prob.disc))
        e = build_residual(prob, lin.trajectory, u)
        h = jac.T @ jac
        ok &= _close(lin.sqrt_hessian.T @ lin.sqrt_hessian, h, 1e-10, 1e-10 * np.max(np.abs(h)))
        ok &= _close(lin.gradient, jac.T @ e, 1e-10, 1e-10 * np.max(np.abs(jac.T @ e)))
        ok &= abs(lin.cost - e @ e) <= 1e-12 * max(1.0, lin.cost)
    return ok


def check_unconstrained_qp(rng, n=20):
    ok = True
    for _ in range(n):
        c = rng.normal(size=(4, 4))
        h, g = c @ c.T + np.eye(4), rng.normal(size=4)
        ok &= _close(solve_qp(QpSubproblem.from_hessian(h, g)).step, -np.linalg.solve(h, g), 1e-10, 1e-12)
    return ok


CHECKS = {
    "dynamics jacobians vs finite differences": check_dynamics_gradients,
    "euler sensitivities vs finite differences": check_discrete_sensitivities,
    "structured KKT solve vs dense solve": check_structured_kkt,
    "square-root Hessian and gradient vs dense J": check_sqrt_hessian,
    "unconstrained QP fast path": check_unconstrained_qp,
}


def run_checks(seed=0, echo=print) -> bool:
    rng = np.random.default_rng(seed)
    all_ok = True
    for name, fn in CHECKS.items():
        ok = bool(fn(rng))
        all_ok &= ok
        echo(f"[{'PASS' if ok else 'FAIL'}] {name}")
    return all_ok
