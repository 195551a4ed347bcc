"""Closed-loop simulation harness: config ingestion, episodes and outputs."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import CartPendulum, PlantParams
from .integrator import DiscretizationConfig, euler_step
from .nmpc import NmpcController, NmpcSettings
from .qp import QpSettings
from .sqp import HorizonProblem, LineSearchSettings

log = logging.getLogger(__name__)

CSV_COLUMNS = ("t", "p", "p_dot", "theta", "theta_dot", "F", "V", "viol",
               "sqp_iters", "qp_iters", "solve_ms", "status")
VIOLATION_TOL = 1e-6
TIMING_TARGET_MS = 25.0


class ConfigError(ValueError):
    pass


class OutputError(OSError):
    pass


@dataclass
class ScenarioConfig:
    name: str = "default"
    # plant
    cart_mass: float = 0.5
    pend_mass: float = 0.2
    pend_length: float = 0.3
    cart_damping: float = 0.1
    pend_damping: float = 0.01
    gravity: float = 9.8
    # horizon and discretisation
    horizon: int = 40
    dt: float = 0.05
    slices: int = 5
    q_diag: tuple = (1.0, 2.0, 0.1, 5.0)
    r_diag: tuple = (0.1,)
    input_lower: tuple = (-10.0,)
    input_upper: tuple = (10.0,)
    state_lower: tuple = (-math.inf, -2.0, -math.inf, -math.inf)
    state_upper: tuple = (math.inf, 2.0, math.inf, math.inf)
    # episode
    x0: tuple = (0.0, 0.0, 0.0, math.pi)
    episode_length: float = 10.0
    refinement: int = 10
    divergence_bound: float = 1e6
    # SQP / QP / line search
    max_sqp_iters: int = 15
    step_tol: float = 1e-8
    warm_start_multipliers: bool = False
    qp_max_iters: int = 30
    qp_tau: float = 0.995
    qp_adaptive_tau: bool = False
    qp_residual_tol: float = 1e-9
    qp_mu_tol: float = 1e-12
    qp_early_exit: bool = True
    ls_max_backtracks: int = 20
    ls_armijo_eta: float = 1e-4
    ls_violation_eta: float = 0.1
    ls_shrink: float = 0.5
    ls_feasibility_tol: float = 1e-7
    # outputs
    out_dir: str = "out"
    plot_data: bool = True
    dump_dir: str = ""

    def __post_init__(self):
        if not self.episode_length > 0:
            raise ConfigError("episode_length must be positive")
        if self.refinement < 1:
            raise ConfigError("refinement must be >= 1")

    # -- parsing ---------------------------------------------------------
    @classmethod
    def from_text(cls, text: str, **overrides) -> "ScenarioConfig":
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key] = value
        values.update(overrides)
        return cls.from_mapping(values)

    @classmethod
    def from_file(cls, path, **overrides) -> "ScenarioConfig":
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise OutputError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text, **overrides)

    @classmethod
    def from_mapping(cls, values: dict) -> "ScenarioConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in values.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = _convert(key, known[key].default, value)
        return cls(**kwargs)

    def replace(self, **changes) -> "ScenarioConfig":
        return self.from_mapping({**dataclasses.asdict(self), **changes})

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ", ".join(repr(float(x)) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    # -- builders --------------------------------------------------------
    def plant_params(self) -> PlantParams:
        return PlantParams(self.cart_mass, self.pend_mass, self.pend_length,
                           self.cart_damping, self.pend_damping, self.gravity)

    def problem(self) -> HorizonProblem:
        return HorizonProblem(
            plant=CartPendulum(self.plant_params()),
            horizon=self.horizon,
            disc=DiscretizationConfig(self.dt, self.slices),
            weights_q=np.diag(self.q_diag),
            weights_r=np.diag(self.r_diag),
            input_lower=np.array(self.input_lower),
            input_upper=np.array(self.input_upper),
            state_lower=np.array(self.state_lower),
            state_upper=np.array(self.state_upper),
            divergence_bound=self.divergence_bound,
        )

    def nmpc_settings(self) -> NmpcSettings:
        return NmpcSettings(
            max_sqp_iters=self.max_sqp_iters,
            qp=QpSettings(self.qp_max_iters, self.qp_tau, self.qp_adaptive_tau,
                          self.qp_residual_tol, self.qp_mu_tol, self.qp_early_exit),
            line_search=LineSearchSettings(self.ls_max_backtracks, self.ls_armijo_eta,
                                           self.ls_violation_eta, self.ls_shrink,
                                           self.ls_feasibility_tol),
            step_tol=self.step_tol,
            warm_start_multipliers=self.warm_start_multipliers,
            dump_dir=self.dump_dir or None,
        )


def _convert(key, default, value):
    if not isinstance(value, str):
        if isinstance(default, tuple):
            return tuple(float(v) for v in np.atleast_1d(value))
        return value
    try:
        if isinstance(default, bool):
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            return tuple(float(v) for v in value.split(",") if v.strip())
        return value
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {value!r}") from exc


# ---------------------------------------------------------------- episode

@dataclass
class SimLog:
    rows: list = field(default_factory=list)  # dicts keyed by CSV_COLUMNS
    mismatch: list = field(default_factory=list)  # |plant - model prediction| per tick
    diagnostics: list = field(default_factory=list)
    final_state: Optional[np.ndarray] = None
    dt: float = 0.0
    completed: bool = True
    error: str = ""

    def __len__(self):
        return len(self.rows)

    def column(self, name) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    def summary(self) -> dict:
        solve = self.column("solve_ms") if self.rows else np.zeros(0)
        if self.rows and self.final_state is not None:
            fs = self.final_state
            terminal = float(max(abs(fs[1]), abs(fs[3])))
        else:
            terminal = None
        avg = float(np.mean(solve)) if solve.size else None
        return {
            "terminal_error": terminal,
            "avg_solve_ms": avg,
            "max_solve_ms": float(np.max(solve)) if solve.size else None,
            "constraint_violations_count": int(sum(r["viol"] > VIOLATION_TOL for r in self.rows)),
            "ticks": len(self.rows),
            "completed": self.completed,
            "error": self.error,
            "terminal_state": None if self.final_state is None else [float(v) for v in self.final_state],
            "max_model_mismatch": float(max(self.mismatch)) if self.mismatch else None,
            "timing_target_ms": TIMING_TARGET_MS,
            "meets_timing_target": None if avg is None else bool(avg < TIMING_TARGET_MS),
        }


def _violation(prob: HorizonProblem, x, u) -> float:
    parts = [0.0]
    parts += list(np.maximum(prob.input_lower - u, 0.0)) + list(np.maximum(u - prob.input_upper, 0.0))
    parts += list(np.maximum(prob.state_lower - x, 0.0)) + list(np.maximum(x - prob.state_upper, 0.0))
    return float(max(parts))


def run_episode(cfg: ScenarioConfig, ticks: int | None = None, keep_diagnostics: bool = False) -> SimLog:
    """Closed loop: solve, apply the first input to the plant, shift, log.

    The plant is the same ODE integrated with ``refinement`` times more Euler
    slices than the controller's model.
    """
    prob = cfg.problem()
    controller = NmpcController(prob, cfg.nmpc_settings())
    plant = prob.plant
    fine = DiscretizationConfig(cfg.dt, cfg.slices * cfg.refinement)
    n_ticks = int(round(cfg.episode_length / cfg.dt)) if ticks is None else int(ticks)

    x = np.array(cfg.x0, dtype=float)
    out = SimLog(dt=cfg.dt, final_state=x.copy())
    for k in range(n_ticks):
        u = controller.step(x)
        state = controller.state
        d = state.diagnostics
        prediction = euler_step(plant, x, u, prob.disc)
        x_next = euler_step(plant, x, u, fine)
        out.rows.append({
            "t": k * cfg.dt,
            "p": float(x[1]),
            "p_dot": float(x[0]),
            "theta": float(x[3]),
            "theta_dot": float(x[2]),
            "F": float(u[0]),
            "V": float(d.cost),
            "viol": _violation(prob, x, u),
            "sqp_iters": int(d.iterations),
            "qp_iters": int(d.qp_iterations),
            "solve_ms": float(d.wall_ms),
            "status": state.status,
        })
        out.mismatch.append(float(np.max(np.abs(x_next - prediction))))
        if keep_diagnostics:
            out.diagnostics.append(d)
        log.debug("t=%.3f x=%s F=%.4f status=%s sqp=%d qp=%d %.1fms", k * cfg.dt, x, u[0],
                  state.status, d.iterations, d.qp_iterations, d.wall_ms)
        if not np.all(np.isfinite(x_next)) or np.max(np.abs(x_next)) > cfg.divergence_bound:
            out.completed = False
            out.error = f"plant diverged at t={(k + 1) * cfg.dt:.3f}"
            out.final_state = x_next
            log.error(out.error)
            return out
        x = x_next
        out.final_state = x.copy()
        controller.shift()
    return out


# ---------------------------------------------------------------- outputs

def _fmt(value):
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{value:.17g}"


def write_csv(log_: SimLog, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in log_.rows:
            writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])


def read_csv(path) -> list:
    """Parse a trajectory CSV back into row dicts with native types."""
    ints = {"sqp_iters", "qp_iters"}
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            rows.append({k: (v if k == "status" else int(v) if k in ints else float(v)) for k, v in rec.items()})
    return rows


def emit_outputs(log_: SimLog, out_dir, plot_data: bool = True) -> dict:
    """Write ``trajectory.csv``, ``summary.json`` and optional gnuplot data."""
    paths = {
        "csv": os.path.join(out_dir, "trajectory.csv"),
        "summary": os.path.join(out_dir, "summary.json"),
    }
    try:
        os.makedirs(out_dir, exist_ok=True)
        write_csv(log_, paths["csv"])
        with open(paths["summary"], "w") as fh:
            json.dump(log_.summary(), fh, indent=2)
        if plot_data:
            paths["plot"] = os.path.join(out_dir, "trajectory.dat")
            with open(paths["plot"], "w") as fh:
                fh.write("# t p p_dot theta theta_dot F V viol mismatch\n")
                for row, mm in zip(log_.rows, log_.mismatch):
                    vals = [row[c] for c in CSV_COLUMNS[:8]] + [mm]
                    fh.write(" ".join(_fmt(v) for v in vals) + "\n")
    except OSError as exc:
        raise OutputError(f"cannot write outputs to {out_dir}: {exc}") from exc
    return paths
