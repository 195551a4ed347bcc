"""Fixed-step Euler discretisation with forward sensitivity propagation.

A control interval ``dt`` is cut into ``slices`` equal Euler substeps with the
input held constant. Alongside the state, the transition Jacobians
``d x_{k+1} / d x_k`` and ``d x_{k+1} / d u_k`` are accumulated substep by
substep, so no finite differencing or symbolic work is needed.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class DivergenceError(RuntimeError):
    """A propagated state left the admissible magnitude box."""

    def __init__(self, message, step=None, state=None):
        super().__init__(message)
        self.step = step
        self.state = state


@dataclass(frozen=True)
class DiscretizationConfig:
    dt: float = 0.05
    slices: int = 5

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if int(self.slices) != self.slices or self.slices < 1:
            raise ValueError(f"slices must be an integer >= 1, got {self.slices}")

    @property
    def delta(self) -> float:
        return self.dt / self.slices


class StepResult(NamedTuple):
    next_state: np.ndarray
    jac_state: np.ndarray
    jac_input: np.ndarray


class Rollout(NamedTuple):
    states: np.ndarray  # (N, n_x): x_2 .. x_{N+1}
    jac_states: np.ndarray  # (N, n_x, n_x)
    jac_inputs: np.ndarray  # (N, n_x, n_u)


class LinearModel:
    """Continuous LTI model ``xdot = A x + B u``; handy as an oracle plant."""

    def __init__(self, a, b):
        self.a = np.atleast_2d(np.asarray(a, dtype=float))
        self.b = np.asarray(b, dtype=float).reshape(self.a.shape[0], -1)
        self.n_x, self.n_u = self.b.shape

    def ode(self, x, u, t=0.0):
        return self.a @ x + self.b @ u

    def evaluate(self, x, u, t=0.0):
        return self.ode(x, u, t), self.a, self.b


def euler_step_with_sensitivities(model, x, u, cfg: DiscretizationConfig, t0: float = 0.0) -> StepResult:
    delta = cfg.delta
    x = np.array(x, dtype=float)
    u = np.asarray(u, dtype=float)
    eye = np.eye(model.n_x)
    X = eye.copy()
    U = np.zeros((model.n_x, model.n_u))
    for i in range(cfg.slices):
        xdot, gx, gu = model.evaluate(x, u, t0 + i * delta)
        A = eye + delta * gx
        X = A @ X
        U = A @ U + delta * gu
        x = x + delta * xdot
    return StepResult(x, X, U)


def euler_step(model, x, u, cfg: DiscretizationConfig, t0: float = 0.0) -> np.ndarray:
    """State-only version of :func:`euler_step_with_sensitivities`.

    Uses the identical update expression so both paths agree bit for bit.
    """
    delta = cfg.delta
    x = np.array(x, dtype=float)
    u = np.asarray(u, dtype=float)
    for i in range(cfg.slices):
        x = x + delta * model.ode(x, u, t0 + i * delta)
    return x


def _check(x, k, bound):
    if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > bound:
        raise DivergenceError(f"state diverged at step {k + 1}: {x}", step=k, state=x)


def rollout(model, x0, inputs, cfg: DiscretizationConfig, bound: float = 1e6, t0: float = 0.0) -> Rollout:
    """Propagate ``x0`` under ``inputs`` (shape ``(N, n_u)``) with sensitivities."""
    inputs = np.asarray(inputs, dtype=float).reshape(-1, model.n_u)
    n = inputs.shape[0]
    if n < 1:
        raise ValueError("rollout needs at least one input")
    states = np.empty((n, model.n_x))
    jxs = np.empty((n, model.n_x, model.n_x))
    jus = np.empty((n, model.n_x, model.n_u))
    x = np.asarray(x0, dtype=float)
    for k in range(n):
        x, jxs[k], jus[k] = euler_step_with_sensitivities(model, x, inputs[k], cfg, t0 + k * cfg.dt)
        _check(x, k, bound)
        states[k] = x
    return Rollout(states, jxs, jus)


def simulate(model, x0, inputs, cfg: DiscretizationConfig, bound: float = 1e6, t0: float = 0.0) -> np.ndarray:
    """Trajectory ``x_2 .. x_{N+1}`` without sensitivities (line-search trials)."""
    inputs = np.asarray(inputs, dtype=float).reshape(-1, model.n_u)
    states = np.empty((inputs.shape[0], model.n_x))
    x = np.asarray(x0, dtype=float)
    for k in range(inputs.shape[0]):
        x = euler_step(model, x, inputs[k], cfg, t0 + k * cfg.dt)
        _check(x, k, bound)
        states[k] = x
    return states
