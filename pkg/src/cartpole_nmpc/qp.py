"""Dense convex QP solver: Mehrotra predictor-corrector interior point.

Solves ``min 1/2 p'Hp + g'p  s.t.  A p >= b`` where the Hessian is supplied
through an upper-triangular square root ``R`` with ``R'R = H``. Every
application of ``H^-1`` is a pair of triangular solves.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, LinAlgWarning, lu_factor, lu_solve, solve_triangular

INTERIOR_FLOOR = 1e-8


class QpSolverError(RuntimeError):
    """Interior-point iteration could not continue (singular system or blocked step)."""

    def __init__(self, message, p=None, lam=None, y=None):
        super().__init__(message)
        self.p, self.lam, self.y = p, lam, y


@dataclass
class QpSubproblem:
    hessian_factor: np.ndarray
    gradient: np.ndarray
    constraint_matrix: np.ndarray = None
    constraint_rhs: np.ndarray = None

    def __post_init__(self):
        self.hessian_factor = np.atleast_2d(np.asarray(self.hessian_factor, dtype=float))
        self.gradient = np.asarray(self.gradient, dtype=float).ravel()
        n = self.gradient.size
        if self.constraint_matrix is None:
            self.constraint_matrix = np.zeros((0, n))
        if self.constraint_rhs is None:
            self.constraint_rhs = np.zeros(0)
        self.constraint_matrix = np.asarray(self.constraint_matrix, dtype=float).reshape(-1, n)
        self.constraint_rhs = np.asarray(self.constraint_rhs, dtype=float).ravel()
        if self.hessian_factor.shape != (n, n):
            raise ValueError("hessian_factor must be square and match the gradient")
        if self.constraint_rhs.size != self.constraint_matrix.shape[0]:
            raise ValueError("constraint_rhs length must match constraint_matrix rows")

    @property
    def n(self) -> int:
        return self.gradient.size

    @property
    def m(self) -> int:
        return self.constraint_rhs.size

    @classmethod
    def from_hessian(cls, hessian, gradient, a=None, b=None):
        return cls(np.linalg.cholesky(np.asarray(hessian, dtype=float)).T, gradient, a, b)

    def hessian(self) -> np.ndarray:
        return self.hessian_factor.T @ self.hessian_factor

    def hinv(self, v):
        """``H^-1 v`` by forward then back substitution."""
        r = self.hessian_factor
        return solve_triangular(r, solve_triangular(r, v, trans="T"), trans="N")


@dataclass
class QpSettings:
    max_iters: int = 30
    tau: float = 0.995
    adaptive_tau: bool = False
    residual_tol: float = 1e-9
    # p* error on degenerate constraints scales like sqrt(mu)
    mu_tol: float = 1e-12
    early_exit: bool = True

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class QpSolution:
    step: np.ndarray
    multipliers: np.ndarray
    slacks: np.ndarray
    iterations_used: int = 0
    kkt_residual: float = 0.0
    mu_history: list = field(default_factory=list)


def step_length(v, r) -> float:
    """Largest ``alpha`` in (0, 1] with ``alpha * v >= r`` for ``r <= 0``.

    Only components with ``v_i < 0`` bound the step, each by ``r_i / v_i``.
    A zero return means some ``r_i = 0`` blocks any movement.
    """
    v = np.asarray(v, dtype=float)
    r = np.asarray(r, dtype=float)
    neg = v < 0
    if not np.any(neg):
        return 1.0
    with np.errstate(over="ignore"):
        return float(min(1.0, np.min(r[neg] / v[neg])))


def kkt_residuals(sub: QpSubproblem, p, lam, y):
    """Dual and primal infinity-norm residuals."""
    a = sub.constraint_matrix
    dual = sub.hessian() @ p + sub.gradient - a.T @ lam
    primal = y - a @ p + sub.constraint_rhs
    rd = float(np.max(np.abs(dual))) if dual.size else 0.0
    rp = float(np.max(np.abs(primal))) if primal.size else 0.0
    return rd, rp


class KktSolver:
    """Structured solve of the interior-point Newton system.

    The system matrix is::

        [ H   0        -A'     ] [dp ]   [v1]
        [ A  -I         0      ] [dy ] = [v2]
        [ 0   diag(l)   diag(y)] [dl ]   [v3]

    Rows are eliminated so only the m x m matrix
    ``diag(y) + diag(l) A H^-1 A'`` is factorised. ``A H^-1 A'`` is fixed for a
    given subproblem, so it is formed once per instance.
    """

    def __init__(self, sub: QpSubproblem):
        self.sub = sub
        a = sub.constraint_matrix
        # W = R^-T A', so A H^-1 A' = W'W and H^-1 A' = R^-1 W
        self._w = solve_triangular(sub.hessian_factor, a.T, trans="T") if a.size else np.zeros((sub.n, 0))
        self._ahat = self._w.T @ self._w
        self._lu = None
        self._lam = None

    def factor(self, lam, y):
        m = self.sub.m
        self._lam = np.asarray(lam, dtype=float)
        if m == 0:
            self._lu = None
            return
        k = np.diag(np.asarray(y, dtype=float)) + self._lam[:, None] * self._ahat
        if not np.all(np.isfinite(k)):
            raise QpSolverError("non-finite reduced KKT matrix")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", LinAlgWarning)
            self._lu = lu_factor(k, check_finite=False)
        if np.any(np.diag(self._lu[0]) == 0.0):
            raise QpSolverError("singular reduced KKT matrix")

    def solve(self, v1, v2, v3):
        sub = self.sub
        h1 = sub.hinv(v1)
        if sub.m == 0:
            return h1, np.zeros(0), np.zeros(0)
        a = sub.constraint_matrix
        t = a @ h1 - v2
        zeta = lu_solve(self._lu, v3 - self._lam * t, check_finite=False)
        dp = h1 + sub.hinv(a.T @ zeta)
        dy = a @ dp - v2
        return dp, dy, zeta


def solve_kkt(sub: QpSubproblem, lam, y, v1, v2, v3):
    """One-off structured KKT solve returning ``(dp, dy, dlambda)``."""
    lam = np.asarray(lam, dtype=float)
    y = np.asarray(y, dtype=float)
    ks = KktSolver(sub)
    try:
        ks.factor(lam, y)
    except (LinAlgError, ValueError) as exc:
        raise QpSolverError(f"KKT factorisation failed: {exc}") from exc
    return ks.solve(np.asarray(v1, float), np.asarray(v2, float), np.asarray(v3, float))


def assemble_kkt_matrix(sub: QpSubproblem, lam, y) -> np.ndarray:
    """Explicit Newton matrix; only used by tests and diagnostics."""
    n, m = sub.n, sub.m
    a = sub.constraint_matrix
    k = np.zeros((n + 2 * m, n + 2 * m))
    k[:n, :n] = sub.hessian()
    k[:n, n + m:] = -a.T
    k[n:n + m, :n] = a
    k[n:n + m, n:n + m] = -np.eye(m)
    k[n + m:, n:n + m] = np.diag(lam)
    k[n + m:, n + m:] = np.diag(y)
    return k


def solve_qp(sub: QpSubproblem, lam0=None, y0=None, settings: QpSettings | None = None) -> QpSolution:
    settings = settings or QpSettings()
    n, m = sub.n, sub.m
    g, a, b = sub.gradient, sub.constraint_matrix, sub.constraint_rhs

    if m == 0:
        p = -sub.hinv(g)
        return QpSolution(p, np.zeros(0), np.zeros(0), 0, kkt_residuals(sub, p, np.zeros(0), np.zeros(0))[0])

    lam = np.ones(m) if lam0 is None else np.maximum(np.asarray(lam0, dtype=float), INTERIOR_FLOOR)
    y = np.ones(m) if y0 is None else np.maximum(np.asarray(y0, dtype=float), INTERIOR_FLOOR)
    p = np.zeros(n)
    h = sub.hessian()
    ks = KktSolver(sub)

    def residual(p, lam, y):
        rd = a.T @ lam - g - h @ p
        rp = y - a @ p + b
        return rd, rp

    scale = 1.0 + max(np.max(np.abs(g), initial=0.0), np.max(np.abs(b), initial=0.0))
    mu = float(y @ lam) / m
    history = [mu]
    iters = 0
    for it in range(settings.max_iters):
        rd, rp = residual(p, lam, y)
        kkt = max(np.max(np.abs(rd)), np.max(np.abs(rp)))
        if settings.early_exit and mu < settings.mu_tol and kkt < settings.residual_tol * scale:
            break
        try:
            ks.factor(lam, y)
        except (LinAlgError, ValueError) as exc:
            raise QpSolverError(f"KKT factorisation failed: {exc}", p, lam, y) from exc

        # affine predictor (sigma = 0)
        dp_a, dy_a, dl_a = ks.solve(rd, rp, -lam * y)
        alpha_aff = min(step_length(dy_a, -y), step_length(dl_a, -lam))
        mu_aff = float((y + alpha_aff * dy_a) @ (lam + alpha_aff * dl_a)) / m
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0

        # centred corrector
        dp, dy, dl = ks.solve(rd, rp, -lam * y - dl_a * dy_a + sigma * mu)
        tau = max(settings.tau, 1.0 - mu) if settings.adaptive_tau else settings.tau
        alpha = min(step_length(dy, -tau * y), step_length(dl, -tau * lam))
        if not np.isfinite(alpha):
            raise QpSolverError("non-finite step length", p, lam, y)
        if alpha <= 0.0:
            if mu < 1e-6:
                break
            raise QpSolverError(f"blocked step at mu={mu:.3e}", p, lam, y)
        p = p + alpha * dp
        y = y + alpha * dy
        lam = lam + alpha * dl
        mu = float(y @ lam) / m
        history.append(mu)
        iters = it + 1
        if not np.isfinite(mu):
            raise QpSolverError("non-finite iterate", p, lam, y)

    rd, rp = residual(p, lam, y)
    kkt = float(max(np.max(np.abs(rd)), np.max(np.abs(rp))))
    return QpSolution(p, lam, y, iters, kkt, history)
