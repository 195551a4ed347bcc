"""Nonlinear MPC for a cart-pendulum: Gauss-Newton SQP over an Euler-discretised
model, with an interior-point QP solver written from scratch."""
from .dynamics import CartPendulum, PlantParams, eval_denominator, eval_jac_u, eval_jac_x, eval_ode
from .harness import ScenarioConfig, SimLog, emit_outputs, run_episode
from .integrator import (DiscretizationConfig, DivergenceError, LinearModel, StepResult,
                         euler_step, euler_step_with_sensitivities, rollout, simulate)
from .nmpc import ControllerState, NmpcController, NmpcSettings, shift_hotstart, solve_tick
from .qp import QpSettings, QpSolution, QpSolverError, QpSubproblem, solve_kkt, solve_qp, step_length
from .sqp import HorizonProblem, LineSearchSettings, Linearization, line_search, linearize

__version__ = "0.1.0"
