"""Kinematic bicycle dynamics, analytic Jacobians and free-final-time
first-order-hold discretization of trajectory segments."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# State component indices: position, velocity, acceleration, heading, steering.
X, Y, V, A, THETA, PHI = range(6)
# Control component indices: jerk and steering rate.
JERK, STEER_RATE = range(2)

N_STATES = 6
N_CONTROLS = 2

DEFAULT_SUBSTEPS = 10


class SteeringSingularityError(ValueError):
    """Steering angle reached +/- pi/2, where tan(phi) blows up."""

    def __init__(self, phi: float, tau: float | None = None):
        where = "" if tau is None else f" at tau={tau:.6f}"
        super().__init__(f"steering angle {phi:.6f} rad outside (-pi/2, pi/2){where}")
        self.phi = phi
        self.tau = tau


@dataclass(frozen=True)
class SegmentMatrices:
    """Linearized single-interval transition x_{k+1} = A x_k + Bm u_k + Bp u_{k+1} + E t_f + r."""

    A: np.ndarray
    B_minus: np.ndarray
    B_plus: np.ndarray
    E: np.ndarray
    r: np.ndarray

    def predict(self, x_k: np.ndarray, u_k: np.ndarray, u_k1: np.ndarray, t_f: float) -> np.ndarray:
        return self.A @ x_k + self.B_minus @ u_k + self.B_plus @ u_k1 + self.E * t_f + self.r


@dataclass(frozen=True)
class DiscretizedDynamics:
    """Per-interval matrices linearized about a reference trajectory."""

    n_waypoints: int
    segments: list[SegmentMatrices]
    ref_states: np.ndarray
    ref_controls: np.ndarray
    ref_t_f: float

    def __post_init__(self) -> None:
        if self.n_waypoints < 2 or len(self.segments) != self.n_waypoints - 1:
            raise ValueError("need exactly n_waypoints - 1 segments")


def _check_phi(phi: float, tau: float | None = None) -> None:
    if not abs(phi) < 0.5 * math.pi:
        raise SteeringSingularityError(phi, tau)


def dynamics(state, control, wheel_base: float) -> np.ndarray:
    """Time derivative of the kinematic state.

    [x, y, v, a, theta, phi]' = [v cos(theta), v sin(theta), a, j,
    v tan(phi) / L, omega].
    """
    x = np.asarray(state, dtype=float)
    u = np.asarray(control, dtype=float)
    _check_phi(float(x[PHI]))
    return np.array(
        [
            x[V] * math.cos(x[THETA]),
            x[V] * math.sin(x[THETA]),
            x[A],
            u[JERK],
            x[V] * math.tan(x[PHI]) / wheel_base,
            u[STEER_RATE],
        ]
    )


def jacobians(state, control, wheel_base: float):
    """Analytic (A, B, E) of the dynamics.

    A and B are the state and control Jacobians. E is the sensitivity of the
    time-dilated dynamics dx/dtau = t_f * f to the duration parameter, which
    is the dynamics value itself.
    """
    x = np.asarray(state, dtype=float)
    u = np.asarray(control, dtype=float)
    _check_phi(float(x[PHI]))
    sin_t, cos_t = math.sin(x[THETA]), math.cos(x[THETA])
    tan_p = math.tan(x[PHI])
    sec2_p = 1.0 + tan_p * tan_p

    A_mat = np.zeros((N_STATES, N_STATES))
    A_mat[X, V] = cos_t
    A_mat[X, THETA] = -x[V] * sin_t
    A_mat[Y, V] = sin_t
    A_mat[Y, THETA] = x[V] * cos_t
    A_mat[V, A] = 1.0
    A_mat[THETA, V] = tan_p / wheel_base
    A_mat[THETA, PHI] = x[V] * sec2_p / wheel_base

    B_mat = np.zeros((N_STATES, N_CONTROLS))
    B_mat[A, JERK] = 1.0
    B_mat[PHI, STEER_RATE] = 1.0

    E_vec = dynamics(x, u, wheel_base)
    return A_mat, B_mat, E_vec


# Layout of the joint integration state: reference state, STM, inverse STM and
# the four running integrals needed for the segment matrices.
_IX = slice(0, 6)
_IPHI = slice(6, 42)
_IPHI_INV = slice(42, 78)
_IBM = slice(78, 90)
_IBP = slice(90, 102)
_IE = slice(102, 108)
_IR = slice(108, 114)
_VLEN = 114


def _segment_ode(v: np.ndarray, tau: float, u_k, u_k1, t_f: float, delta_tau: float, wheel_base: float) -> np.ndarray:
    eta_plus = tau / delta_tau
    eta_minus = 1.0 - eta_plus
    u = eta_minus * np.asarray(u_k) + eta_plus * np.asarray(u_k1)
    x = v[_IX]
    _check_phi(float(x[PHI]), tau)
    A_mat, B_mat, f = jacobians(x, u, wheel_base)
    A_dil = t_f * A_mat
    B_dil = t_f * B_mat
    phi = v[_IPHI].reshape(6, 6)
    phi_inv = v[_IPHI_INV].reshape(6, 6)

    dv = np.empty(_VLEN)
    dv[_IX] = t_f * f
    dv[_IPHI] = (A_dil @ phi).ravel()
    dv[_IPHI_INV] = (-phi_inv @ A_dil).ravel()
    dv[_IBM] = (phi_inv @ B_dil).ravel() * eta_minus
    dv[_IBP] = (phi_inv @ B_dil).ravel() * eta_plus
    dv[_IE] = phi_inv @ f
    dv[_IR] = -phi_inv @ (A_dil @ x + B_dil @ u)
    return dv


def discretize_segment(
    ref_x_k,
    ref_u_k,
    ref_u_k1,
    t_f: float,
    delta_tau: float,
    wheel_base: float,
    substeps: int = DEFAULT_SUBSTEPS,
    stm_check_tol: float | None = None,
) -> SegmentMatrices:
    """First-order-hold discretization of one interval of normalized length
    delta_tau, linearized about a reference propagated nonlinearly alongside.

    The state transition matrix and its inverse are integrated jointly with
    fixed-step RK4; the inverse follows the adjoint equation instead of being
    refactored each substep. With stm_check_tol set, Phi * Phi_inv is checked
    against identity after every substep.
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    if t_f <= 0.0 or delta_tau <= 0.0:
        raise ValueError("t_f and delta_tau must be positive")

    v = np.zeros(_VLEN)
    v[_IX] = np.asarray(ref_x_k, dtype=float)
    v[_IPHI] = np.eye(6).ravel()
    v[_IPHI_INV] = np.eye(6).ravel()

    h = delta_tau / substeps
    tau = 0.0
    for _ in range(substeps):
        k1 = _segment_ode(v, tau, ref_u_k, ref_u_k1, t_f, delta_tau, wheel_base)
        k2 = _segment_ode(v + 0.5 * h * k1, tau + 0.5 * h, ref_u_k, ref_u_k1, t_f, delta_tau, wheel_base)
        k3 = _segment_ode(v + 0.5 * h * k2, tau + 0.5 * h, ref_u_k, ref_u_k1, t_f, delta_tau, wheel_base)
        k4 = _segment_ode(v + h * k3, tau + h, ref_u_k, ref_u_k1, t_f, delta_tau, wheel_base)
        v = v + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        tau += h
        if stm_check_tol is not None:
            dev = v[_IPHI].reshape(6, 6) @ v[_IPHI_INV].reshape(6, 6) - np.eye(6)
            if np.max(np.abs(dev)) > stm_check_tol:
                raise ArithmeticError(f"STM inverse drifted by {np.max(np.abs(dev)):.3e}")

    A_k = v[_IPHI].reshape(6, 6)
    return SegmentMatrices(
        A=A_k,
        B_minus=A_k @ v[_IBM].reshape(6, 2),
        B_plus=A_k @ v[_IBP].reshape(6, 2),
        E=A_k @ v[_IE],
        r=A_k @ v[_IR],
    )


def discretize_trajectory(
    states: np.ndarray,
    controls: np.ndarray,
    t_f: float,
    wheel_base: float,
    substeps: int = DEFAULT_SUBSTEPS,
) -> DiscretizedDynamics:
    """Discretize every interval of an N-waypoint reference on a uniform
    normalized grid (delta_tau = 1 / (N - 1))."""
    states = np.asarray(states, dtype=float)
    controls = np.asarray(controls, dtype=float)
    n = states.shape[0]
    if n < 2:
        raise ValueError("need at least two waypoints")
    delta_tau = 1.0 / (n - 1)
    segments = [
        discretize_segment(states[k], controls[k], controls[k + 1], t_f, delta_tau, wheel_base, substeps)
        for k in range(n - 1)
    ]
    return DiscretizedDynamics(n, segments, states.copy(), controls.copy(), t_f)


def propagate(
    s0,
    controls: np.ndarray,
    t_f: float,
    wheel_base: float,
    substeps: int = DEFAULT_SUBSTEPS,
) -> np.ndarray:
    """Nonlinear rollout under first-order-hold controls; returns N states."""
    controls = np.asarray(controls, dtype=float)
    n = controls.shape[0]
    if n < 2:
        raise ValueError("control profile needs at least two knots")
    states = np.empty((n, N_STATES))
    states[0] = np.asarray(s0, dtype=float)
    dt = t_f / (n - 1)
    for k in range(n - 1):
        states[k + 1] = propagate_segment(states[k], controls[k], controls[k + 1], dt, wheel_base, substeps)
    return states


def propagate_segment(
    x_k,
    u_k,
    u_k1,
    dt: float,
    wheel_base: float,
    substeps: int = DEFAULT_SUBSTEPS,
) -> np.ndarray:
    """RK4 integration of one interval of duration dt with linearly
    interpolated controls."""
    x = np.asarray(x_k, dtype=float).copy()
    u_k = np.asarray(u_k, dtype=float)
    u_k1 = np.asarray(u_k1, dtype=float)
    h = dt / substeps

    def f(xi, t_frac):
        u = (1.0 - t_frac) * u_k + t_frac * u_k1
        return dynamics(xi, u, wheel_base)

    t = 0.0
    for _ in range(substeps):
        frac0 = t / dt
        frac_h = (t + 0.5 * h) / dt
        frac1 = (t + h) / dt
        k1 = f(x, frac0)
        k2 = f(x + 0.5 * h * k1, frac_h)
        k3 = f(x + 0.5 * h * k2, frac_h)
        k4 = f(x + h * k3, frac1)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t += h
    return x
