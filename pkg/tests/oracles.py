"""Independent oracles used across the test suite.

Everything here is computed by enumeration, sampling or closed forms, never
by calling the code paths under test.
"""

import itertools
import math

import numpy as np


def solve_qp_by_enumeration(P, q, A_eq, b_eq, A_in, b_in, lb, ub):
    """Globally solve a strictly convex QP by enumerating active sets.

    Box bounds are expanded to inequality rows; every subset of inequality
    rows is tried as the active set of a dense KKT system. Returns
    (z, objective). Intended for small problems only.
    """
    P = np.asarray(P, dtype=float)
    q = np.asarray(q, dtype=float)
    n = len(q)
    rows = [np.asarray(A_in, dtype=float).reshape(-1, n)] if len(b_in) else []
    offs = [np.asarray(b_in, dtype=float)] if len(b_in) else []
    for i in range(n):
        if np.isfinite(ub[i]):
            e = np.zeros(n)
            e[i] = 1.0
            rows.append(e[None, :])
            offs.append(np.array([-ub[i]]))
        if np.isfinite(lb[i]):
            e = np.zeros(n)
            e[i] = -1.0
            rows.append(e[None, :])
            offs.append(np.array([lb[i]]))
    G = np.vstack(rows) if rows else np.zeros((0, n))
    h = np.concatenate(offs) if offs else np.zeros(0)
    A_eq = np.asarray(A_eq, dtype=float).reshape(-1, n)
    b_eq = np.asarray(b_eq, dtype=float)
    me = len(b_eq)
    mi = len(h)

    best = None
    for active in itertools.product((False, True), repeat=mi):
        idx = [i for i, a in enumerate(active) if a]
        na = len(idx)
        size = n + me + na
        kkt = np.zeros((size, size))
        kkt[:n, :n] = P
        kkt[:n, n : n + me] = A_eq.T
        kkt[n : n + me, :n] = A_eq
        if na:
            kkt[:n, n + me :] = G[idx].T
            kkt[n + me :, :n] = G[idx]
        rhs = np.concatenate([-q, -b_eq, -h[idx]])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            continue
        z = sol[:n]
        mu = sol[n + me :]
        if np.any(mu < -1e-9):
            continue
        if mi and np.any(G @ z + h > 1e-8):
            continue
        if me and np.max(np.abs(A_eq @ z + b_eq)) > 1e-8:
            continue
        obj = 0.5 * z @ P @ z + q @ z
        if best is None or obj < best[1]:
            best = (z, obj)
    if best is None:
        raise ValueError("enumeration found no feasible KKT point")
    return best


def random_strictly_convex_qp(rng, n, m_eq, m_in, n_boxed):
    """Random feasible strictly convex QP with a strictly interior point."""
    M = rng.normal(size=(n, n))
    P = M.T @ M + 0.5 * np.eye(n)
    q = rng.normal(size=n)
    z0 = rng.normal(size=n)
    A_eq = rng.normal(size=(m_eq, n))
    b_eq = -(A_eq @ z0)
    A_in = rng.normal(size=(m_in, n))
    b_in = -(A_in @ z0) - rng.uniform(0.1, 1.0, size=m_in)
    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)
    boxed = rng.choice(n, size=min(n_boxed, n), replace=False)
    for i in boxed:
        lb[i] = z0[i] - rng.uniform(0.2, 2.0)
        ub[i] = z0[i] + rng.uniform(0.2, 2.0)
    return P, q, A_eq, b_eq, A_in, b_in, lb, ub


def jerk_limited_min_time(distance, v_max, a_max, j_max):
    """Minimum time of a rest-to-rest 1D jerk-limited point-to-point motion.

    Classic symmetric S-curve case analysis; returns total time in seconds.
    """
    d = abs(distance)
    if d == 0.0:
        return 0.0
    v_ramp = a_max * a_max / j_max

    def accel_time(v_peak):
        if v_peak >= v_ramp:
            return v_peak / a_max + a_max / j_max
        return 2.0 * math.sqrt(v_peak / j_max)

    # Distance consumed accelerating 0 -> v_peak equals v_peak*T_a/2; the
    # symmetric stop doubles it.
    def cruise_deficit(v_peak):
        return d - v_peak * accel_time(v_peak)

    if cruise_deficit(v_max) >= 0.0:
        return 2.0 * accel_time(v_max) + cruise_deficit(v_max) / v_max
    # No cruise; find the peak velocity that exactly covers the distance.
    if v_ramp <= v_max:
        # Try the trapezoidal-acceleration branch first.
        a, j = a_max, j_max
        # d = v_p^2/a + v_p*a/j  =>  quadratic in v_p.
        v_p = (-a * a / j + math.sqrt((a * a / j) ** 2 + 4.0 * a * d)) / 2.0
        if v_ramp <= v_p <= v_max:
            return 2.0 * accel_time(v_p)
    # Triangular jerk profile.
    v_p = (d * math.sqrt(j_max) / 2.0) ** (2.0 / 3.0)
    return 2.0 * accel_time(v_p)


def bang_bang_profile(distance, v_max, a_max, j_max, n, t_total=None):
    """Jerk knots of the S-curve motion sampled on n uniform points."""
    t_f = t_total if t_total is not None else jerk_limited_min_time(distance, v_max, a_max, j_max)
    # Recover phase durations by replaying the case analysis.
    v_ramp = a_max * a_max / j_max
    d = abs(distance)

    def accel_time(v_peak):
        if v_peak >= v_ramp:
            return v_peak / a_max + a_max / j_max
        return 2.0 * math.sqrt(v_peak / j_max)

    if d - v_max * accel_time(v_max) >= 0.0:
        v_p = v_max
    else:
        a, j = a_max, j_max
        v_p = (-a * a / j + math.sqrt((a * a / j) ** 2 + 4.0 * a * d)) / 2.0
        if not (v_ramp <= v_p):
            v_p = (d * math.sqrt(j_max) / 2.0) ** (2.0 / 3.0)
    if v_p >= v_ramp:
        t_j = a_max / j_max
        t_a = v_p / a_max - t_j
    else:
        t_j = math.sqrt(v_p / j_max)
        t_a = 0.0
    t_acc = 2 * t_j + t_a
    t_cruise = max(t_f - 2 * t_acc, 0.0)
    sign = 1.0 if distance >= 0 else -1.0

    def jerk_at(t):
        if t < t_acc:
            tau = t
            if tau < t_j:
                return sign * j_max
            if tau < t_j + t_a:
                return 0.0
            return -sign * j_max
        if t < t_acc + t_cruise:
            return 0.0
        tau = t - t_acc - t_cruise
        if tau < t_j:
            return -sign * j_max
        if tau < t_j + t_a:
            return 0.0
        return sign * j_max

    times = np.linspace(0.0, t_f, n)
    return np.array([[jerk_at(t), 0.0] for t in times]), t_f
