"""Gauss-Newton SQP pieces: residual, Jacobian, square-root Hessian, constraints
and the backtracking line search.

The horizon cost ``V(u) = sum x_{k+1}'Q x_{k+1} + u_k'R u_k`` is written as
``e(u)'e(u)`` and linearised as ``e(u + p) ~ e(u) + J p``, giving the local
model ``1/2 p'J'J p + (J'e)'p``. ``J'J`` is never formed; an upper-triangular
``Rf`` with ``Rf'Rf = J'J`` is built by Givens rotations instead.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .integrator import DiscretizationConfig, DivergenceError, rollout, simulate
from .qp import QpSolution, QpSubproblem


def _psd_sqrt(q):
    w, v = np.linalg.eigh(0.5 * (q + q.T))
    if np.min(w) < -1e-12 * max(1.0, np.max(np.abs(w))):
        raise ValueError("state weight must be positive semi-definite")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


@dataclass
class HorizonProblem:
    plant: object
    horizon: int
    disc: DiscretizationConfig
    weights_q: np.ndarray
    weights_r: np.ndarray
    input_lower: Optional[np.ndarray] = None
    input_upper: Optional[np.ndarray] = None
    state_lower: Optional[np.ndarray] = None
    state_upper: Optional[np.ndarray] = None
    divergence_bound: float = 1e6

    def __post_init__(self):
        nx, nu = self.plant.n_x, self.plant.n_u
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.weights_q = np.asarray(self.weights_q, dtype=float).reshape(nx, nx)
        self.weights_r = np.asarray(self.weights_r, dtype=float).reshape(nu, nu)
        self.q_sqrt = _psd_sqrt(self.weights_q)
        try:
            # upper factor S with S'S = R keeps the seeded Rf triangular
            self.r_sqrt = np.linalg.cholesky(self.weights_r).T
        except np.linalg.LinAlgError as exc:
            raise ValueError("input weight must be positive definite") from exc

        def vec(v, n, fill):
            return np.full(n, fill) if v is None else np.asarray(v, dtype=float).reshape(n)

        self.input_lower = vec(self.input_lower, nu, -np.inf)
        self.input_upper = vec(self.input_upper, nu, np.inf)
        self.state_lower = vec(self.state_lower, nx, -np.inf)
        self.state_upper = vec(self.state_upper, nx, np.inf)
        for lo, hi in ((self.input_lower, self.input_upper), (self.state_lower, self.state_upper)):
            both = np.isfinite(lo) & np.isfinite(hi)
            if np.any(lo[both] >= hi[both]):
                raise ValueError("lower bounds must be strictly below upper bounds")

    @property
    def n_x(self):
        return self.plant.n_x

    @property
    def n_u(self):
        return self.plant.n_u

    @property
    def n_dec(self):
        return self.horizon * self.plant.n_u

    @property
    def state_mask(self):
        """State indices carrying at least one finite bound."""
        return np.flatnonzero(np.isfinite(self.state_lower) | np.isfinite(self.state_upper))

    @property
    def n_constraints(self):
        n = self.horizon
        rows = n * (np.isfinite(self.input_lower).sum() + np.isfinite(self.input_upper).sum())
        rows += n * (np.isfinite(self.state_lower).sum() + np.isfinite(self.state_upper).sum())
        return int(rows)

    def clamp_inputs(self, inputs):
        inputs = np.asarray(inputs, dtype=float).reshape(self.horizon, self.n_u)
        return np.clip(inputs, self.input_lower, self.input_upper)


@dataclass
class Linearization:
    residual: np.ndarray
    sqrt_hessian: np.ndarray
    gradient: np.ndarray
    constraint_matrix: np.ndarray
    constraint_rhs: np.ndarray
    cost: float
    trajectory: np.ndarray
    sensitivities: np.ndarray

    def subproblem(self) -> QpSubproblem:
        return QpSubproblem(self.sqrt_hessian, self.gradient, self.constraint_matrix, self.constraint_rhs)


@dataclass
class LineSearchSettings:
    max_backtracks: int = 20
    armijo_eta: float = 1e-4
    violation_eta: float = 0.1
    shrink: float = 0.5
    # summed violation below this counts as feasible (QP solutions satisfy
    # the linear rows only to interior-point accuracy)
    feasibility_tol: float = 1e-7

    def __post_init__(self):
        for name in ("armijo_eta", "violation_eta", "shrink"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.max_backtracks < 1:
            raise ValueError("max_backtracks must be >= 1")


@dataclass
class LineSearchResult:
    inputs: np.ndarray
    multipliers: np.ndarray
    slacks: np.ndarray
    accepted: bool
    alpha: float
    converged: bool
    stalled: bool
    feasible_phase: bool
    cost: float
    violation: float
    trials: list = field(default_factory=list)  # (alpha, V, e'e) per evaluated trial


# ---------------------------------------------------------------- cost pieces

def build_residual(prob: HorizonProblem, trajectory, inputs) -> np.ndarray:
    trajectory = np.asarray(trajectory, dtype=float).reshape(prob.horizon, prob.n_x)
    inputs = np.asarray(inputs, dtype=float).reshape(prob.horizon, prob.n_u)
    top = trajectory @ prob.q_sqrt.T
    bottom = inputs @ prob.r_sqrt.T
    return np.concatenate([top.ravel(), bottom.ravel()])


def horizon_cost(prob: HorizonProblem, trajectory, inputs) -> float:
    """Cost summed term by term, without forming the residual."""
    q, r = prob.weights_q, prob.weights_r
    total = 0.0
    for x, u in zip(np.reshape(trajectory, (-1, prob.n_x)), np.reshape(inputs, (-1, prob.n_u))):
        total += float(x @ q @ x) + float(u @ r @ u)
    return total


def build_sensitivities(rolled) -> np.ndarray:
    """Block lower-triangular ``d x_{k+1} / d u_j``, shape ``(N n_x, N n_u)``."""
    jxs, jus = rolled.jac_states, rolled.jac_inputs
    n, nx, nu = jus.shape
    s = np.zeros((n * nx, n * nu))
    for k in range(n):
        rows = slice(k * nx, (k + 1) * nx)
        if k > 0:
            prev = s[(k - 1) * nx:k * nx, :k * nu]
            s[rows, :k * nu] = jxs[k] @ prev
        s[rows, k * nu:(k + 1) * nu] = jus[k]
    return s


def build_jacobian(prob: HorizonProblem, rolled) -> np.ndarray:
    n, nx, nu = prob.horizon, prob.n_x, prob.n_u
    s = build_sensitivities(rolled)
    top = np.kron(np.eye(n), prob.q_sqrt) @ s
    bottom = np.kron(np.eye(n), prob.r_sqrt)
    return np.vstack([top, bottom])


def givens_append_rows(r, rows, ncols=None):
    """Fold extra rows into the triangular factor ``r`` in place.

    After the call ``r'r`` equals the old ``r'r`` plus ``rows'rows``. Only the
    first ``ncols`` columns of ``rows`` may be nonzero; rotations are applied
    for those columns alone.
    """
    rows = np.array(rows, dtype=float, ndmin=2)
    ncols = r.shape[1] if ncols is None else ncols
    for row in rows:
        for j in range(ncols):
            bj = row[j]
            if bj == 0.0:
                continue
            aj = r[j, j]
            rho = math.hypot(aj, bj)
            c, s = aj / rho, bj / rho
            rj = r[j, j:].copy()
            r[j, j:] = c * rj + s * row[j:]
            row[j:] = c * row[j:] - s * rj
            row[j] = 0.0
    return r


def build_sqrt_hessian_and_gradient(prob: HorizonProblem, sensitivities, trajectory, inputs):
    """Square-root Gauss-Newton Hessian and gradient, streamed band by band."""
    n, nx, nu = prob.horizon, prob.n_x, prob.n_u
    inputs = np.asarray(inputs, dtype=float).reshape(n, nu)
    trajectory = np.asarray(trajectory, dtype=float).reshape(n, nx)
    rf = np.kron(np.eye(n), prob.r_sqrt)
    grad = (inputs @ prob.weights_r.T).ravel()
    for k in range(n):
        band = prob.q_sqrt @ sensitivities[k * nx:(k + 1) * nx]
        grad += band.T @ (prob.q_sqrt @ trajectory[k])
        givens_append_rows(rf, band, (k + 1) * nu)
    return rf, grad


# ---------------------------------------------------------------- constraints

def constraint_values(prob: HorizonProblem, trajectory, inputs) -> np.ndarray:
    """Constraint function ``c`` with ``c <= 0`` meaning satisfied, in row order."""
    n = prob.horizon
    u = np.asarray(inputs, dtype=float).reshape(n, prob.n_u)
    x = np.asarray(trajectory, dtype=float).reshape(n, prob.n_x)
    parts = []
    lo, hi = np.isfinite(prob.input_lower), np.isfinite(prob.input_upper)
    parts.append((prob.input_lower[lo] - u[:, lo]).T.ravel())
    parts.append((u[:, hi] - prob.input_upper[hi]).T.ravel())
    for i in prob.state_mask:
        if np.isfinite(prob.state_lower[i]):
            parts.append(prob.state_lower[i] - x[:, i])
        if np.isfinite(prob.state_upper[i]):
            parts.append(x[:, i] - prob.state_upper[i])
    return np.concatenate(parts) if parts else np.zeros(0)


def build_constraints(prob: HorizonProblem, trajectory, inputs, sensitivities):
    """Linearised constraints ``A p >= b`` about the current inputs.

    Row order: input lower bounds, input upper bounds, then per constrained
    state its lower rows followed by its upper rows. Infinite bounds produce
    no rows.
    """
    n, nx, nu = prob.horizon, prob.n_x, prob.n_u
    eye = np.eye(n * nu)
    blocks = []
    lo, hi = np.isfinite(prob.input_lower), np.isfinite(prob.input_upper)
    # decision vector is u_1..u_N stacked, so input i of step k is column k*nu+i
    for i in np.flatnonzero(lo):
        blocks.append(eye[i::nu])
    for i in np.flatnonzero(hi):
        blocks.append(-eye[i::nu])
    for i in prob.state_mask:
        sens_i = sensitivities[i::nx]
        if np.isfinite(prob.state_lower[i]):
            blocks.append(sens_i)
        if np.isfinite(prob.state_upper[i]):
            blocks.append(-sens_i)
    a = np.vstack(blocks) if blocks else np.zeros((0, n * nu))
    b = constraint_values(prob, trajectory, inputs)
    return a, b


def positive_violation(c) -> float:
    c = np.asarray(c, dtype=float)
    return float(np.sum(c[c > 0.0]))


def predicted_violation_reduction(a_times_p, b, alpha) -> float:
    """Sum of ``min(b_i, alpha a_i)`` over the currently violated rows."""
    b = np.asarray(b, dtype=float)
    viol = b > 0.0
    return float(np.sum(np.minimum(b[viol], alpha * np.asarray(a_times_p)[viol])))


# ---------------------------------------------------------------- linearise

def linearize(prob: HorizonProblem, x0, inputs) -> Linearization:
    inputs = np.asarray(inputs, dtype=float).reshape(prob.horizon, prob.n_u)
    rolled = rollout(prob.plant, x0, inputs, prob.disc, bound=prob.divergence_bound)
    sens = build_sensitivities(rolled)
    e = build_residual(prob, rolled.states, inputs)
    rf, grad = build_sqrt_hessian_and_gradient(prob, sens, rolled.states, inputs)
    a, b = build_constraints(prob, rolled.states, inputs, sens)
    cost = horizon_cost(prob, rolled.states, inputs)
    return Linearization(e, rf, grad, a, b, cost, rolled.states, sens)


def evaluate(prob: HorizonProblem, x0, inputs):
    """Trajectory, cost, residual and constraint values without sensitivities."""
    traj = simulate(prob.plant, x0, inputs, prob.disc, bound=prob.divergence_bound)
    return traj, horizon_cost(prob, traj, inputs), build_residual(prob, traj, inputs), \
        constraint_values(prob, traj, inputs)


def dump_linearization(lin: Linearization, directory, tag):
    """Write ``e, J'J factor, g, A, b, V`` of one iteration as CSV files."""
    os.makedirs(directory, exist_ok=True)
    fmt = "%.17g"
    np.savetxt(os.path.join(directory, f"{tag}_e.csv"), lin.residual[None], delimiter=",", fmt=fmt)
    np.savetxt(os.path.join(directory, f"{tag}_R.csv"), lin.sqrt_hessian, delimiter=",", fmt=fmt)
    np.savetxt(os.path.join(directory, f"{tag}_H.csv"), lin.sqrt_hessian.T @ lin.sqrt_hessian,
               delimiter=",", fmt=fmt)
    np.savetxt(os.path.join(directory, f"{tag}_g.csv"), lin.gradient[None], delimiter=",", fmt=fmt)
    np.savetxt(os.path.join(directory, f"{tag}_A.csv"), lin.constraint_matrix, delimiter=",", fmt=fmt)
    np.savetxt(os.path.join(directory, f"{tag}_b.csv"), lin.constraint_rhs[None], delimiter=",", fmt=fmt)
    with open(os.path.join(directory, f"{tag}_V.csv"), "w") as fh:
        fh.write(f"{lin.cost:.17g}\n")


# ---------------------------------------------------------------- line search

def line_search(prob: HorizonProblem, x0, inputs, lin: Linearization, lam, y,
                qp_out: QpSolution, settings: LineSearchSettings | None = None) -> LineSearchResult:
    """Backtracking search along the QP step with split cost/violation tests.

    While the current iterate violates constraints a trial is accepted when
    the positive-part violation drops by at least ``violation_eta`` times the
    reduction the linear model predicts. Once feasible, a trial must stay
    feasible and pass the Armijo test on the cost.
    """
    settings = settings or LineSearchSettings()
    u0 = np.asarray(inputs, dtype=float).reshape(prob.horizon, prob.n_u)
    p = qp_out.step.reshape(u0.shape)
    a_p = lin.constraint_matrix @ qp_out.step
    slope = float(qp_out.step @ lin.gradient)
    v_cur = positive_violation(lin.constraint_rhs)
    feasible = v_cur <= settings.feasibility_tol
    trials = []

    alpha = 1.0
    for _ in range(settings.max_backtracks):
        trial = u0 + alpha * p
        try:
            _, cost, e, c = evaluate(prob, x0, trial)
        except DivergenceError:
            alpha *= settings.shrink
            continue
        trials.append((alpha, cost, float(e @ e)))
        v_trial = positive_violation(c)
        if feasible:
            ok = v_trial <= settings.feasibility_tol and cost <= lin.cost + settings.armijo_eta * alpha * slope
        else:
            v_bar = predicted_violation_reduction(a_p, lin.constraint_rhs, alpha)
            ok = v_trial <= v_cur - settings.violation_eta * v_bar
        if ok:
            return LineSearchResult(
                trial, lam + alpha * (qp_out.multipliers - lam), y + alpha * (qp_out.slacks - y),
                True, alpha, False, False, feasible, cost, v_trial, trials)
        alpha *= settings.shrink

    return LineSearchResult(u0, lam, y, False, 0.0, True, not feasible, feasible, lin.cost, v_cur, trials)
