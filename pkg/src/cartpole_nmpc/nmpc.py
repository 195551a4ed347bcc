"""Receding-horizon controller: one SQP solve per control tick."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .integrator import DivergenceError
from .qp import QpSettings, QpSolverError, solve_qp
from .sqp import (HorizonProblem, LineSearchSettings, dump_linearization, line_search,
                  linearize, positive_violation)

OPTIMAL = "optimal"
ITER_LIMIT = "iter-limit"
STALLED = "stalled-infeasible"
QP_FAILURE = "qp-failure"


@dataclass
class NmpcSettings:
    max_sqp_iters: int = 15
    qp: QpSettings = field(default_factory=QpSettings)
    line_search: LineSearchSettings = field(default_factory=LineSearchSettings)
    step_tol: float = 1e-8
    warm_start_multipliers: bool = False
    dump_dir: str | None = None

    def __post_init__(self):
        if self.max_sqp_iters < 1:
            raise ValueError("max_sqp_iters must be >= 1")


@dataclass
class TickDiagnostics:
    iterations: int = 0  # SQP iterations that moved the inputs
    qp_solves: int = 0
    qp_iterations: int = 0
    alphas: list = field(default_factory=list)
    accepted_costs: list = field(default_factory=list)  # (cost, feasible_phase)
    evaluations: list = field(default_factory=list)  # (V summed, e'e) for every evaluated iterate
    cost: float = float("nan")
    violation: float = 0.0
    wall_ms: float = 0.0


@dataclass
class ControllerState:
    best_inputs: np.ndarray
    multipliers: np.ndarray | None = None
    slacks: np.ndarray | None = None
    last_cost: float = float("nan")
    last_iterations: int = 0
    status: str = OPTIMAL
    diagnostics: TickDiagnostics = field(default_factory=TickDiagnostics)

    @classmethod
    def initial(cls, prob: HorizonProblem, inputs=None):
        if inputs is None:
            inputs = np.zeros((prob.horizon, prob.n_u))
        return cls(best_inputs=prob.clamp_inputs(inputs))


def shift_hotstart(inputs) -> np.ndarray:
    """Drop the issued first input and repeat the last one."""
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim == 1:
        inputs = inputs[:, None]
    return np.concatenate([inputs[1:], inputs[-1:]], axis=0)


def solve_tick(ctrl: ControllerState, prob: HorizonProblem, x0, settings: NmpcSettings | None = None,
               tick: int = 0):
    """Run one SQP solve from the hot start held in ``ctrl``.

    Returns the first input to apply and a fresh :class:`ControllerState`. If
    the QP solver fails, the hot start's first input is returned unchanged and
    the status is ``qp-failure``.
    """
    settings = settings or NmpcSettings()
    started = time.perf_counter()
    x0 = np.asarray(x0, dtype=float)
    hot = prob.clamp_inputs(ctrl.best_inputs)
    u = hot.copy()
    m = prob.n_constraints
    if settings.warm_start_multipliers and ctrl.multipliers is not None and ctrl.multipliers.size == m:
        lam, y = ctrl.multipliers.copy(), ctrl.slacks.copy()
    else:
        lam, y = np.ones(m), np.ones(m)

    diag = TickDiagnostics()
    status = ITER_LIMIT
    lin = None
    for it in range(settings.max_sqp_iters):
        try:
            lin = linearize(prob, x0, u)
        except DivergenceError:
            status = QP_FAILURE
            break
        diag.evaluations.append((lin.cost, float(lin.residual @ lin.residual)))
        if it == 0 and positive_violation(lin.constraint_rhs) <= settings.line_search.feasibility_tol:
            diag.accepted_costs.append((lin.cost, True))
        if settings.dump_dir:
            dump_linearization(lin, settings.dump_dir, f"tick{tick:05d}_it{it:02d}")
        try:
            sol = solve_qp(lin.subproblem(), lam, y, settings.qp)
        except QpSolverError:
            status = QP_FAILURE
            break
        diag.qp_solves += 1
        diag.qp_iterations += sol.iterations_used

        ls = line_search(prob, x0, u, lin, lam, y, sol, settings.line_search)
        diag.evaluations.extend((v, ee) for _, v, ee in ls.trials)
        if ls.converged:
            status = STALLED if ls.stalled else OPTIMAL
            break
        u, lam, y = ls.inputs, ls.multipliers, ls.slacks
        diag.alphas.append(ls.alpha)
        diag.accepted_costs.append((ls.cost, ls.feasible_phase))
        diag.cost, diag.violation = ls.cost, ls.violation
        if np.max(np.abs(ls.alpha * sol.step), initial=0.0) <= settings.step_tol:
            status = OPTIMAL
            break
        diag.iterations += 1

    if status == QP_FAILURE:
        u = hot
        diag.cost, diag.violation = float("nan"), float("nan")
    elif lin is not None and not diag.alphas:
        diag.cost, diag.violation = lin.cost, positive_violation(lin.constraint_rhs)
    diag.wall_ms = (time.perf_counter() - started) * 1e3
    new = ControllerState(
        best_inputs=u,
        multipliers=lam,
        slacks=y,
        last_cost=diag.cost,
        last_iterations=diag.iterations,
        status=status,
        diagnostics=diag,
    )
    return u[0].copy(), new


class NmpcController:
    """Stateful wrapper pairing a problem with its controller state."""

    def __init__(self, prob: HorizonProblem, settings: NmpcSettings | None = None, initial_inputs=None):
        self.prob = prob
        self.settings = settings or NmpcSettings()
        self.state = ControllerState.initial(prob, initial_inputs)
        self.ticks = 0

    def step(self, x0):
        u1, self.state = solve_tick(self.state, self.prob, x0, self.settings, tick=self.ticks)
        self.ticks += 1
        return u1

    def shift(self):
        self.state = replace(self.state, best_inputs=shift_hotstart(self.state.best_inputs))
