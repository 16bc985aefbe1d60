"""Self-contained sparse convex QP solver.

Operator-splitting (ADMM) method in the style of OSQP: diagonal Ruiz
equilibration, a vector penalty parameter with stiffer weights on equality
rows, over-relaxation, infeasibility certificates from the iterate
differences, and an optional active-set polishing solve. Fully deterministic
for identical inputs and configuration.

Problem form:

    minimize    0.5 z' P z + q' z
    subject to  Aeq z + beq  = 0
                Ain z + bin <= 0
                lb <= z <= ub
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

INF = np.inf

_PSD_TOL = 1e-8
_RHO_EQ_SCALE = 1e3
_RHO_MIN, _RHO_MAX = 1e-6, 1e6


class QpInputError(ValueError):
    """Inconsistent dimensions or an invalid cost matrix."""


@dataclass(frozen=True)
class QpConfig:
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    eps_infeasible: float = 1e-8
    max_iters: int = 20000
    rho: float = 0.1
    sigma: float = 1e-6
    alpha_relax: float = 1.6
    scaling_iters: int = 10
    check_every: int = 25
    adaptive_rho: bool = True
    polish: bool = True


@dataclass
class QpProblem:
    P: sp.csc_matrix
    q: np.ndarray
    A_eq: sp.csc_matrix
    b_eq: np.ndarray
    A_in: sp.csc_matrix
    b_in: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    @staticmethod
    def build(n, P, q, A_eq=None, b_eq=None, A_in=None, b_in=None, lb=None, ub=None) -> "QpProblem":
        """Normalize inputs (dense or sparse, possibly absent) to the canonical form."""
        P = sp.csc_matrix(P)
        q = np.asarray(q, dtype=float)
        A_eq = sp.csc_matrix((0, n)) if A_eq is None else sp.csc_matrix(A_eq)
        b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
        A_in = sp.csc_matrix((0, n)) if A_in is None else sp.csc_matrix(A_in)
        b_in = np.zeros(0) if b_in is None else np.asarray(b_in, dtype=float)
        lb = np.full(n, -INF) if lb is None else np.asarray(lb, dtype=float)
        ub = np.full(n, INF) if ub is None else np.asarray(ub, dtype=float)
        return QpProblem(P, q, A_eq, b_eq, A_in, b_in, lb, ub)

    def __post_init__(self) -> None:
        n = self.P.shape[0]
        if self.P.shape != (n, n) or self.q.shape != (n,):
            raise QpInputError("P must be square and q must match its size")
        for A, b, name in ((self.A_eq, self.b_eq, "eq"), (self.A_in, self.b_in, "in")):
            if A.shape[1] != n or A.shape[0] != b.shape[0]:
                raise QpInputError(f"{name} system dimensions are inconsistent")
        if self.lb.shape != (n,) or self.ub.shape != (n,):
            raise QpInputError("box bounds must have one entry per variable")
        if np.any(self.lb > self.ub):
            raise QpInputError("lb > ub for some variable")
        sym_err = abs(self.P - self.P.T).max() if self.P.nnz else 0.0
        if sym_err > _PSD_TOL:
            raise QpInputError(f"P is not symmetric (deviation {sym_err:.2e})")
        if n:
            eigmin = float(np.linalg.eigvalsh(self.P.toarray()).min())
            if eigmin < -_PSD_TOL:
                raise QpInputError(f"P is not positive semidefinite (min eig {eigmin:.2e})")

    @property
    def n(self) -> int:
        return self.P.shape[0]

    def objective(self, z: np.ndarray) -> float:
        return float(0.5 * z @ (self.P @ z) + self.q @ z)


@dataclass
class QpSolution:
    z: np.ndarray
    y_eq: np.ndarray
    y_in: np.ndarray
    y_box: np.ndarray
    status: str  # optimal | max_iters | primal_infeasible | dual_infeasible
    iterations: int
    primal_res: float
    dual_res: float
    objective: float
    polished: bool = False


def _stack_osqp_form(p: QpProblem):
    """Stack equality, inequality and finite box rows into l <= A z <= u."""
    n = p.n
    boxed = np.where(np.isfinite(p.lb) | np.isfinite(p.ub))[0]
    eye_rows = sp.csc_matrix(
        (np.ones(len(boxed)), (np.arange(len(boxed)), boxed)), shape=(len(boxed), n)
    )
    A = sp.vstack([p.A_eq, p.A_in, eye_rows], format="csc")
    l = np.concatenate([-p.b_eq, np.full(p.A_in.shape[0], -INF), p.lb[boxed]])
    u = np.concatenate([-p.b_eq, -p.b_in, p.ub[boxed]])
    return A, l, u, boxed


def _ruiz_equilibrate(P, q, A, iters):
    """Modified Ruiz equilibration of the (P, A) pair plus cost scaling."""
    n, m = P.shape[0], A.shape[0]
    d = np.ones(n)
    e = np.ones(m)
    c = 1.0
    P_s, q_s, A_s = P.copy(), q.copy(), A.copy()
    for _ in range(iters):
        # Column norms of [P; A] for variables, row norms of A for constraints.
        col_norm = np.maximum(
            np.abs(P_s).max(axis=0).toarray().ravel() if P_s.nnz else np.zeros(n),
            np.abs(A_s).max(axis=0).toarray().ravel() if A_s.nnz else np.zeros(n),
        )
        row_norm = np.abs(A_s).max(axis=1).toarray().ravel() if A_s.nnz else np.zeros(m)
        d_step = 1.0 / np.sqrt(np.where(col_norm > 1e-12, col_norm, 1.0))
        e_step = 1.0 / np.sqrt(np.where(row_norm > 1e-12, row_norm, 1.0))
        D = sp.diags(d_step)
        E = sp.diags(e_step)
        P_s = (D @ P_s @ D).tocsc()
        A_s = (E @ A_s @ D).tocsc()
        q_s = d_step * q_s
        d *= d_step
        e *= e_step
        # Cost scaling keeps the objective comparable to the constraints.
        p_col = np.abs(P_s).max(axis=0).toarray().ravel() if P_s.nnz else np.zeros(n)
        gamma_terms = [np.mean(p_col)] if n else [0.0]
        q_norm = np.abs(q_s).max() if n else 0.0
        gamma = 1.0 / max(np.mean(gamma_terms), q_norm, 1e-12)
        P_s = (gamma * P_s).tocsc()
        q_s = gamma * q_s
        c *= gamma
    return P_s, q_s, A_s, d, e, c


class _Workspace:
    def __init__(self, p: QpProblem, cfg: QpConfig):
        self.p = p
        self.cfg = cfg
        A, l, u, self.boxed = _stack_osqp_form(p)
        self.m = A.shape[0]
        self.n = p.n
        if cfg.scaling_iters > 0 and self.m > 0:
            P_s, q_s, A_s, d, e, c = _ruiz_equilibrate(p.P, p.q, A, cfg.scaling_iters)
        else:
            P_s, q_s, A_s = p.P.copy(), p.q.copy(), A
            d, e, c = np.ones(self.n), np.ones(self.m), 1.0
        self.P_s, self.q_s, self.A_s = P_s, q_s, A_s
        self.d, self.e, self.c = d, e, c
        self.l_s = e * l
        self.u_s = e * u
        self.is_eq = np.isfinite(self.l_s) & np.isfinite(self.u_s) & (self.u_s - self.l_s < 1e-12)
        self.rho = np.empty(0)
        self._factor = None
        self.set_rho(cfg.rho)

    def set_rho(self, rho_scalar: float) -> None:
        rho = np.full(self.m, rho_scalar)
        rho[self.is_eq] = rho_scalar * _RHO_EQ_SCALE
        self.rho = np.clip(rho, _RHO_MIN, _RHO_MAX)
        self.rho_scalar = rho_scalar
        kkt = sp.vstack(
            [
                sp.hstack([self.P_s + self.cfg.sigma * sp.eye(self.n), self.A_s.T]),
                sp.hstack([self.A_s, -sp.diags(1.0 / self.rho)]),
            ],
            format="csc",
        )
        self._factor = spla.splu(kkt)

    def solve_kkt(self, rhs: np.ndarray) -> np.ndarray:
        return self._factor.solve(rhs)


def _unscaled_residuals(ws: _Workspace, x, z, y):
    """Residual norms and tolerance scales of the original problem."""
    Ax = ws.A_s @ x
    e_inv = 1.0 / ws.e if ws.m else ws.e
    d_inv = 1.0 / ws.d
    prim_vec = e_inv * (Ax - z) if ws.m else np.zeros(0)
    dual_vec = d_inv * (ws.P_s @ x + ws.q_s + ws.A_s.T @ y) / ws.c
    r_prim = np.abs(prim_vec).max() if ws.m else 0.0
    r_dual = np.abs(dual_vec).max() if ws.n else 0.0
    prim_scale = max(
        np.abs(e_inv * Ax).max() if ws.m else 0.0,
        np.abs(e_inv * z).max() if ws.m else 0.0,
    )
    dual_scale = (
        max(
            np.abs(d_inv * (ws.A_s.T @ y)).max() if ws.m else 0.0,
            np.abs(d_inv * (ws.P_s @ x)).max(),
            np.abs(d_inv * ws.q_s).max(),
        )
        / ws.c
    )
    return r_prim, r_dual, prim_scale, dual_scale


def _check_primal_infeasible(ws: _Workspace, dy: np.ndarray, eps: float) -> bool:
    dy_un = ws.e * dy / ws.c
    norm = np.abs(dy_un).max() if ws.m else 0.0
    if norm <= 1e-14:
        return False
    # Translate A_s' dy back to the original A' dy.
    Atdy = np.abs((1.0 / ws.d) * (ws.A_s.T @ dy) / ws.c)
    if Atdy.max() > eps * norm:
        return False
    l = ws.l_s / ws.e
    u = ws.u_s / ws.e
    pos = np.maximum(dy_un, 0.0)
    neg = np.minimum(dy_un, 0.0)
    support = np.where(pos > 0, u, 0.0) * pos + np.where(neg < 0, l, 0.0) * neg
    if not np.all(np.isfinite(support)):
        return False
    return float(support.sum()) < -eps * norm


def _check_dual_infeasible(ws: _Workspace, dx: np.ndarray, eps: float) -> bool:
    dx_un = ws.d * dx
    norm = np.abs(dx_un).max() if ws.n else 0.0
    if norm <= 1e-14:
        return False
    if np.abs((1.0 / ws.d) * (ws.P_s @ dx)).max() / ws.c > eps * norm:
        return False
    if float(ws.q_s @ dx) / ws.c > -eps * norm:
        return False
    Adx = (1.0 / ws.e) * (ws.A_s @ dx) if ws.m else np.zeros(0)
    l = ws.l_s / ws.e
    u = ws.u_s / ws.e
    upper_ok = np.isinf(u) | (Adx <= eps * norm)
    lower_ok = np.isinf(l) | (Adx >= -eps * norm)
    return bool(np.all(upper_ok & lower_ok))


def _polish(p: QpProblem, lower: np.ndarray, upper: np.ndarray, delta: float = 1e-9):
    """Solve the KKT system restricted to the given active rows."""
    A, l, u, boxed = _stack_osqp_form(p)
    active = lower | upper
    if not np.any(active):
        A_act = sp.csc_matrix((0, p.n))
        b_act = np.zeros(0)
    else:
        A_act = A[active]
        b_act = np.where(lower[active], l[active], u[active])
    n_act = A_act.shape[0]
    kkt = sp.vstack(
        [
            sp.hstack([p.P + delta * sp.eye(p.n), A_act.T]),
            sp.hstack([A_act, -delta * sp.eye(n_act) if n_act else sp.csc_matrix((0, 0))]),
        ],
        format="csc",
    )
    rhs = np.concatenate([-p.q, b_act])
    try:
        factor = spla.splu(kkt)
    except RuntimeError:
        return None
    sol = factor.solve(rhs)
    # A few steps of iterative refinement against the unregularized system.
    kkt_exact = sp.vstack(
        [sp.hstack([p.P, A_act.T]), sp.hstack([A_act, sp.csc_matrix((n_act, n_act))])],
        format="csc",
    )
    for _ in range(3):
        sol = sol + factor.solve(rhs - kkt_exact @ sol)
    if not np.all(np.isfinite(sol)):
        return None
    z_pol = sol[: p.n]
    y_pol = np.zeros(A.shape[0])
    y_pol[active] = sol[p.n :]
    return z_pol, y_pol


def _split_duals(p: QpProblem, boxed: np.ndarray, y_full: np.ndarray):
    me = p.A_eq.shape[0]
    mi = p.A_in.shape[0]
    y_eq = y_full[:me]
    y_in = y_full[me : me + mi]
    y_box = np.zeros(p.n)
    y_box[boxed] = y_full[me + mi :]
    return y_eq, y_in, y_box


def solve_qp(p: QpProblem, cfg: QpConfig | None = None, warm_start: np.ndarray | None = None) -> QpSolution:
    """Solve the QP; status "optimal" certifies KKT residuals within tolerance.

    warm_start, when given, seeds the primal iterate (deterministically).
    """
    cfg = cfg or QpConfig()
    if p.n == 0:
        return QpSolution(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0), "optimal", 0, 0.0, 0.0, 0.0)

    ws = _Workspace(p, cfg)
    n, m = ws.n, ws.m

    if m == 0:
        # Unconstrained: a single regularized Newton solve with refinement.
        factor = spla.splu((p.P + cfg.sigma * sp.eye(n)).tocsc())
        z = factor.solve(-p.q)
        for _ in range(3):
            z = z + factor.solve(-(p.P @ z + p.q))
        r_dual = float(np.abs(p.P @ z + p.q).max())
        scale = max(float(np.abs(p.P @ z).max()), float(np.abs(p.q).max()), 1.0)
        status = "optimal" if r_dual <= cfg.eps_abs + cfg.eps_rel * scale else "dual_infeasible"
        return QpSolution(
            z, np.zeros(0), np.zeros(0), np.zeros(p.n), status, 1, 0.0, r_dual, p.objective(z)
        )

    if warm_start is not None:
        x = np.asarray(warm_start, dtype=float) / ws.d
        z = np.clip(ws.A_s @ x, ws.l_s, ws.u_s)
    else:
        x = np.zeros(n)
        z = np.zeros(m)
    y = np.zeros(m)
    status = "max_iters"
    iters = cfg.max_iters
    r_prim = r_dual = np.inf

    for it in range(1, cfg.max_iters + 1):
        x_prev, z_prev, y_prev = x, z, y
        rhs = np.concatenate([cfg.sigma * x - ws.q_s, z - y / ws.rho])
        sol = ws.solve_kkt(rhs)
        x_tilde = sol[:n]
        nu = sol[n:]
        z_tilde = z + (nu - y) / ws.rho
        x = cfg.alpha_relax * x_tilde + (1.0 - cfg.alpha_relax) * x_prev
        z_relaxed = cfg.alpha_relax * z_tilde + (1.0 - cfg.alpha_relax) * z_prev
        z = np.clip(z_relaxed + y / ws.rho, ws.l_s, ws.u_s)
        y = y + ws.rho * (z_relaxed - z)

        if it % cfg.check_every == 0 or it == cfg.max_iters:
            r_prim, r_dual, prim_scale, dual_scale = _unscaled_residuals(ws, x, z, y)
            eps_prim = cfg.eps_abs + cfg.eps_rel * prim_scale
            eps_dual = cfg.eps_abs + cfg.eps_rel * dual_scale
            if r_prim <= eps_prim and r_dual <= eps_dual:
                status = "optimal"
                iters = it
                break
            if _check_primal_infeasible(ws, y - y_prev, cfg.eps_infeasible):
                status = "primal_infeasible"
                iters = it
                break
            if _check_dual_infeasible(ws, x - x_prev, cfg.eps_infeasible):
                status = "dual_infeasible"
                iters = it
                break
            if cfg.adaptive_rho and it % (cfg.check_every * 2) == 0:
                num = r_prim / max(prim_scale, 1e-12)
                den = r_dual / max(dual_scale, 1e-12)
                if num > 1e-14 and den > 1e-14:
                    new_rho = ws.rho_scalar * np.sqrt(num / den)
                    new_rho = float(np.clip(new_rho, _RHO_MIN, _RHO_MAX))
                    if new_rho > 5.0 * ws.rho_scalar or new_rho < ws.rho_scalar / 5.0:
                        ws.set_rho(new_rho)

    z_out = ws.d * x
    y_full = ws.e * y / ws.c

    if status == "optimal" and cfg.polish:
        A, l, u, _ = _stack_osqp_form(p)
        Az = A @ z_out
        tol_act = 1e-6 * (1.0 + np.abs(np.where(np.isfinite(u), u, 0.0)))
        candidates = [
            ((y_full < 0) & np.isfinite(l), (y_full > 0) & np.isfinite(u)),
            (np.isfinite(l) & (Az - l <= tol_act), np.isfinite(u) & (u - Az <= tol_act)),
        ]
        old = _kkt_residual_norms(p, z_out, *_split_duals(p, ws.boxed, y_full))
        for lower, upper in candidates:
            polished = _polish(p, lower, upper)
            if polished is None:
                continue
            z_pol, y_pol = polished
            new = _kkt_residual_norms(p, z_pol, *_split_duals(p, ws.boxed, y_pol))
            if max(new) <= max(old):
                y_eq, y_in, y_box = _split_duals(p, ws.boxed, y_pol)
                return QpSolution(
                    z_pol, y_eq, y_in, y_box, status, iters, new[0], new[1],
                    p.objective(z_pol), polished=True,
                )

    y_eq, y_in, y_box = _split_duals(p, ws.boxed, y_full)
    return QpSolution(
        z_out, y_eq, y_in, y_box, status, iters, float(r_prim), float(r_dual), p.objective(z_out)
    )


def _kkt_residual_norms(p: QpProblem, z, y_eq, y_in, y_box):
    stationarity = p.P @ z + p.q
    if p.A_eq.shape[0]:
        stationarity = stationarity + p.A_eq.T @ y_eq
    if p.A_in.shape[0]:
        stationarity = stationarity + p.A_in.T @ y_in
    stationarity = stationarity + y_box
    r_dual = float(np.abs(stationarity).max()) if p.n else 0.0
    # Dual feasibility: inequality multipliers are signed, and a box
    # multiplier may only push against a finite bound.
    if p.A_in.shape[0]:
        r_dual = max(r_dual, float(np.maximum(-y_in, 0.0).max()))
    bad_upper = np.where(~np.isfinite(p.ub), np.maximum(y_box, 0.0), 0.0)
    bad_lower = np.where(~np.isfinite(p.lb), np.maximum(-y_box, 0.0), 0.0)
    if p.n:
        r_dual = max(r_dual, float(bad_upper.max()), float(bad_lower.max()))

    parts = [np.zeros(0)]
    if p.A_eq.shape[0]:
        parts.append(np.abs(p.A_eq @ z + p.b_eq))
    if p.A_in.shape[0]:
        parts.append(np.maximum(p.A_in @ z + p.b_in, 0.0))
    lb_viol = np.where(np.isfinite(p.lb), np.maximum(p.lb - z, 0.0), 0.0)
    ub_viol = np.where(np.isfinite(p.ub), np.maximum(z - p.ub, 0.0), 0.0)
    parts.extend([lb_viol, ub_viol])
    r_prim = float(max((v.max() if len(v) else 0.0) for v in parts))

    comp_terms = [0.0]
    if p.A_in.shape[0]:
        comp_terms.append(float(np.abs(y_in * (p.A_in @ z + p.b_in)).max()))
    box_gap = np.where(
        y_box >= 0,
        np.where(np.isfinite(p.ub), z - p.ub, 0.0),
        np.where(np.isfinite(p.lb), z - p.lb, 0.0),
    )
    comp_terms.append(float(np.abs(y_box * box_gap).max()) if p.n else 0.0)
    comp = max(comp_terms)
    return r_prim, r_dual, comp


def kkt_residuals(p: QpProblem, sol: QpSolution):
    """Infinity norms of (primal feasibility, stationarity, complementarity)."""
    return _kkt_residual_norms(p, sol.z, sol.y_eq, sol.y_in, sol.y_box)


def dump_problem(p: QpProblem, path) -> None:
    """Write the problem as a text sparse-triplet file for offline debugging."""
    with open(path, "w") as fh:
        fh.write("qp-triplet 1\n")
        fh.write(f"dims {p.n} {p.A_eq.shape[0]} {p.A_in.shape[0]}\n")
        for name, mat in (("P", p.P), ("Aeq", p.A_eq), ("Ain", p.A_in)):
            coo = mat.tocoo()
            for i, j, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{name} {i} {j} {float(v)!r}\n")
        for name, vec in (("q", p.q), ("beq", p.b_eq), ("bin", p.b_in), ("lb", p.lb), ("ub", p.ub)):
            for i, v in enumerate(vec):
                fh.write(f"{name} {i} {float(v)!r}\n")


def load_problem(path) -> QpProblem:
    """Read back a problem written by :func:`dump_problem`."""
    with open(path) as fh:
        header = fh.readline().split()
        if header[:2] != ["qp-triplet", "1"]:
            raise QpInputError("unrecognized dump header")
        dims = fh.readline().split()
        n, me, mi = int(dims[1]), int(dims[2]), int(dims[3])
        mats = {"P": ([], (n, n)), "Aeq": ([], (me, n)), "Ain": ([], (mi, n))}
        vecs = {
            "q": np.zeros(n),
            "beq": np.zeros(me),
            "bin": np.zeros(mi),
            "lb": np.full(n, -INF),
            "ub": np.full(n, INF),
        }
        for line in fh:
            fields = line.split()
            if fields[0] in mats:
                mats[fields[0]][0].append((int(fields[1]), int(fields[2]), float(fields[3])))
            else:
                vecs[fields[0]][int(fields[1])] = float(fields[2])
    built = {}
    for name, (triplets, shape) in mats.items():
        if triplets:
            rows, cols, vals = zip(*triplets)
            built[name] = sp.csc_matrix((vals, (rows, cols)), shape=shape)
        else:
            built[name] = sp.csc_matrix(shape)
    return QpProblem(
        built["P"], vecs["q"], built["Aeq"], vecs["beq"], built["Ain"], vecs["bin"],
        vecs["lb"], vecs["ub"],
    )
