"""Continuous-time cart-pendulum model with analytic Jacobians.

State ordering is ``[p_dot, p, theta_dot, theta]`` and the input is the
horizontal force ``[F]`` on the cart. ``theta = 0`` is the upright position.
The angle is never wrapped here; the linearisation upstream needs it
continuous.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

N_STATE = 4
N_INPUT = 1


@dataclass(frozen=True)
class PlantParams:
    cart_mass: float = 0.5  # M [kg]
    pend_mass: float = 0.2  # m [kg]
    pend_length: float = 0.3  # l [m]
    cart_damping: float = 0.1  # b [N s/m]
    pend_damping: float = 0.01  # c [N m s]
    gravity: float = 9.8

    def __post_init__(self):
        for name in ("cart_mass", "pend_mass", "pend_length", "gravity"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("cart_damping", "pend_damping"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")


def eval_denominator(params: PlantParams, pend_angle: float) -> float:
    """Common denominator ``(M+m) m l^2 - m^2 l^2 cos^2(theta)``."""
    M, m, l = params.cart_mass, params.pend_mass, params.pend_length
    c = math.cos(pend_angle)
    return (M + m) * m * l * l - m * m * l * l * c * c


def _terms(params: PlantParams, x, u):
    M, m, l = params.cart_mass, params.pend_mass, params.pend_length
    b, c, g = params.cart_damping, params.pend_damping, params.gravity
    v, _, w, th = float(x[0]), float(x[1]), float(x[2]), float(x[3])
    F = float(u[0])
    s, co = math.sin(th), math.cos(th)
    psi = (M + m) * m * l * l - m * m * l * l * co * co
    force = F + m * l * w * w * s - b * v  # generalised force on the cart
    torque = m * l * g * s - c * w  # generalised torque on the pendulum
    beta_p = m * l * l * force - m * l * co * torque
    beta_th = -m * l * co * force + (M + m) * torque
    return M, m, l, b, c, g, v, w, th, s, co, psi, force, torque, beta_p, beta_th


def eval_ode(params: PlantParams, x, u) -> np.ndarray:
    """State derivative ``[p_ddot, p_dot, theta_ddot, theta_dot]``."""
    *_, v, w, th, s, co, psi, force, torque, beta_p, beta_th = _terms(params, x, u)
    return np.array([beta_p / psi, v, beta_th / psi, w])


def _jacobians(params: PlantParams, x, u):
    (M, m, l, b, c, g, v, w, th, s, co, psi, force, torque,
     beta_p, beta_th) = _terms(params, x, u)
    inv_psi = 1.0 / psi
    dinv_psi = -math.sin(2.0 * th) / (l * l * (M + m - m * co * co) ** 2)

    dbp_dth = m * m * l**3 * w * w * co - m * l * c * w * s - m * m * l * l * g * math.cos(2.0 * th)
    dbt_dth = m * l * s * force - (m * l * w * co) ** 2 + (M + m) * m * l * g * co

    jx = np.zeros((N_STATE, N_STATE))
    jx[0, 0] = -b * m * l * l * inv_psi
    jx[0, 2] = (2.0 * m * m * l**3 * w * s + c * m * l * co) * inv_psi
    jx[0, 3] = inv_psi * dbp_dth + beta_p * dinv_psi
    jx[1, 0] = 1.0
    jx[2, 0] = m * l * b * co * inv_psi
    jx[2, 2] = (-m * m * l * l * w * math.sin(2.0 * th) - c * (M + m)) * inv_psi
    jx[2, 3] = inv_psi * dbt_dth + beta_th * dinv_psi
    jx[3, 2] = 1.0

    ju = np.zeros((N_STATE, N_INPUT))
    ju[0, 0] = 1.0 / (M + m * (1.0 - co * co))
    ju[2, 0] = -m * l * co * inv_psi
    return jx, ju


def eval_jac_x(params: PlantParams, x, u) -> np.ndarray:
    return _jacobians(params, x, u)[0]


def eval_jac_u(params: PlantParams, x, u) -> np.ndarray:
    return _jacobians(params, x, u)[1]


class CartPendulum:
    """Plant model bundling the ODE and its Jacobians.

    Any object exposing ``n_x``, ``n_u`` and ``evaluate(x, u, t)`` returning
    ``(xdot, g_x, g_u)`` (plus ``ode(x, u, t)``) can be driven by the
    integrator; this is the cart-pendulum instance.
    """

    n_x = N_STATE
    n_u = N_INPUT

    def __init__(self, params: PlantParams | None = None):
        self.params = params if params is not None else PlantParams()

    def ode(self, x, u, t: float = 0.0) -> np.ndarray:
        return eval_ode(self.params, x, u)

    def evaluate(self, x, u, t: float = 0.0):
        jx, ju = _jacobians(self.params, x, u)
        return eval_ode(self.params, x, u), jx, ju

    def __repr__(self):
        return f"CartPendulum({self.params!r})"
