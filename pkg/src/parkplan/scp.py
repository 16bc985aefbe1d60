"""Sequential convex programming loop: linearize about the current reference,
solve the convex subproblem, accept or shrink the trust region, repeat."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import blindspot as bsp
from . import bruteforce, collision, kinematics as kin
from .geometry import ObstacleRect, Pose2, VehicleGeometry, polygon_rect_closest, vehicle_rectangle
from .kinematics import A as IA, JERK, N_CONTROLS, N_STATES, PHI, STEER_RATE, THETA, V, X, Y
from .qpsolver import QpConfig, QpProblem, QpSolution, solve_qp

_STATE_FIELDS = ("x", "y", "v", "a", "theta", "phi")
_CONTROL_FIELDS = ("jerk", "steer_rate")


class InfeasibleScenarioError(ValueError):
    """Boundary conditions cannot possibly be satisfied."""


class SubproblemError(RuntimeError):
    """The convex subproblem failed to solve."""

    def __init__(self, iteration: int, status: str):
        super().__init__(f"subproblem at iteration {iteration} returned status '{status}'")
        self.iteration = iteration
        self.qp_status = status


@dataclass(frozen=True)
class ScenarioBounds:
    state_min: np.ndarray
    state_max: np.ndarray
    control_min: np.ndarray
    control_max: np.ndarray
    t_f_min: float
    t_f_max: float

    def __post_init__(self) -> None:
        if np.any(self.state_min > self.state_max) or np.any(self.control_min > self.control_max):
            raise ValueError("bounds must satisfy min <= max componentwise")
        if not 0.0 < self.t_f_min <= self.t_f_max:
            raise ValueError("need 0 < t_f_min <= t_f_max")
        if self.state_max[PHI] >= 0.5 * math.pi or self.state_min[PHI] <= -0.5 * math.pi:
            raise ValueError("steering bounds must stay inside (-pi/2, pi/2)")


@dataclass(frozen=True)
class BoundaryConditions:
    x_init: np.ndarray
    x_final: np.ndarray
    u_init: np.ndarray
    u_final: np.ndarray

    def check_within(self, bounds: ScenarioBounds) -> None:
        for name, value, lo, hi in (
            ("initial state", self.x_init, bounds.state_min, bounds.state_max),
            ("final state", self.x_final, bounds.state_min, bounds.state_max),
            ("initial control", self.u_init, bounds.control_min, bounds.control_max),
            ("final control", self.u_final, bounds.control_min, bounds.control_max),
        ):
            if np.any(value < lo - 1e-12) or np.any(value > hi + 1e-12):
                raise InfeasibleScenarioError(f"{name} violates the variable bounds")


@dataclass(frozen=True)
class BlindspotSetup:
    mask: bsp.VisibilityMask
    init_margin: float = bsp.DEFAULT_INIT_MARGIN
    grid_resolution: float = bsp.DEFAULT_GRID_RESOLUTION


@dataclass(frozen=True)
class ScpConfig:
    n_waypoints: int = 30
    max_iterations: int = 50
    convergence_tol: float = 1e-3
    defect_tol: float = 1e-3
    defect_cap: float = 0.5
    trust_retries: int = 6
    substeps: int = 10
    regularizer_jerk: float = 1e-2
    regularizer_steer_rate: float = 1e-1
    regularizer_accel: float = 1e-2
    collision_penalty: float = 1e4
    virtual_control_penalty: float = 1e5
    safety_margin: float = collision.DEFAULT_SAFETY_MARGIN
    corner_eps: float = 0.05
    blindspot_enabled: bool = False
    trust_scale: float = 1.0
    qp: QpConfig = field(default_factory=QpConfig)

    def __post_init__(self) -> None:
        if self.n_waypoints < 2:
            raise ValueError("need at least two waypoints")
        for name in (
            "regularizer_jerk", "regularizer_steer_rate", "regularizer_accel",
            "collision_penalty", "trust_scale",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class Scenario:
    vehicle: VehicleGeometry
    obstacles: list[ObstacleRect]
    workspace: tuple[float, float, float, float]
    bounds: ScenarioBounds
    boundary: BoundaryConditions
    config: ScpConfig = field(default_factory=ScpConfig)
    blindspot: BlindspotSetup | None = None


@dataclass
class Trajectory:
    states: np.ndarray  # (N, 6)
    controls: np.ndarray  # (N, 2)
    t_f: float

    def __post_init__(self) -> None:
        self.states = np.asarray(self.states, dtype=float)
        self.controls = np.asarray(self.controls, dtype=float)
        n = self.states.shape[0]
        if n < 2 or self.states.shape != (n, N_STATES) or self.controls.shape != (n, N_CONTROLS):
            raise ValueError("trajectory arrays must be (N,6) states and (N,2) controls, N >= 2")
        if not (np.all(np.isfinite(self.states)) and np.all(np.isfinite(self.controls))):
            raise ValueError("trajectory contains non-finite values")
        if not (np.isfinite(self.t_f) and self.t_f > 0):
            raise ValueError("t_f must be positive and finite")

    @property
    def n_waypoints(self) -> int:
        return self.states.shape[0]

    def pose(self, k: int) -> Pose2:
        return Pose2(self.states[k, X], self.states[k, Y], self.states[k, THETA])


@dataclass(frozen=True)
class IterationReport:
    iteration: int
    objective: float
    step_norm: float
    max_defect: float
    min_clearance: float
    t_f: float
    trust_retries: int = 0


@dataclass(frozen=True)
class ValidationReport:
    max_defect: float
    min_clearance: float
    max_bound_violation: float
    blindspot_overlap_cells: int
    ok: bool


@dataclass(frozen=True)
class PlanResult:
    trajectory: Trajectory
    reports: list[IterationReport]
    status: str  # converged | max_iters | failed
    message: str = ""


class _Layout:
    """Index bookkeeping for the stacked decision vector: states, controls,
    duration, clearance slacks, then per-segment virtual controls."""

    def __init__(self, n_wp: int, n_obs: int):
        self.n_wp = n_wp
        self.n_obs = n_obs
        self.n_state = N_STATES * n_wp
        self.n_control = N_CONTROLS * n_wp
        self.i_tf = self.n_state + self.n_control
        self.i_slack = self.i_tf + 1
        self.n_slack = n_wp * n_obs
        self.i_virtual = self.i_slack + self.n_slack
        self.n_virtual = N_STATES * (n_wp - 1)
        self.n_vars = self.i_virtual + self.n_virtual

    def state(self, k: int) -> slice:
        return slice(N_STATES * k, N_STATES * (k + 1))

    def control(self, k: int) -> slice:
        return slice(self.n_state + N_CONTROLS * k, self.n_state + N_CONTROLS * (k + 1))

    def slack(self, k: int, j: int) -> int:
        return self.i_slack + k * self.n_obs + j

    def virtual(self, k: int, i: int) -> int:
        return self.i_virtual + N_STATES * k + i

    def pack(self, traj: Trajectory) -> np.ndarray:
        z = np.zeros(self.n_vars)
        z[: self.n_state] = traj.states.ravel()
        z[self.n_state : self.i_tf] = traj.controls.ravel()
        z[self.i_tf] = traj.t_f
        return z

    def unpack(self, z: np.ndarray) -> Trajectory:
        states = z[: self.n_state].reshape(self.n_wp, N_STATES).copy()
        controls = z[self.n_state : self.i_tf].reshape(self.n_wp, N_CONTROLS).copy()
        return Trajectory(states, controls, float(z[self.i_tf]))


def trust_weights(bounds: ScenarioBounds, layout: _Layout, scale: float = 1.0) -> np.ndarray:
    """Per-variable trust weights 1/range^2, normalizing each step component
    to its span of valid values. Slack variables carry no trust penalty."""
    w = np.zeros(layout.n_vars)
    state_range = np.maximum(bounds.state_max - bounds.state_min, 1e-6)
    control_range = np.maximum(bounds.control_max - bounds.control_min, 1e-6)
    for k in range(layout.n_wp):
        w[layout.state(k)] = 1.0 / state_range**2
        w[layout.control(k)] = 1.0 / control_range**2
    w[layout.i_tf] = 1.0 / max(bounds.t_f_max - bounds.t_f_min, 1e-6) ** 2
    return scale * w


def initial_guess(scenario: Scenario, n_waypoints: int | None = None) -> Trajectory:
    """Componentwise linear interpolation between the boundary states; zero
    controls; mid-range duration."""
    n = n_waypoints or scenario.config.n_waypoints
    alpha = np.linspace(0.0, 1.0, n)[:, None]
    states = (1.0 - alpha) * scenario.boundary.x_init + alpha * scenario.boundary.x_final
    controls = np.zeros((n, N_CONTROLS))
    controls[0] = scenario.boundary.u_init
    controls[-1] = scenario.boundary.u_final
    t_f = 0.5 * (scenario.bounds.t_f_min + scenario.bounds.t_f_max)
    return Trajectory(states, controls, t_f)


def build_subproblem(
    ref: Trajectory,
    scenario: Scenario,
    cfg: ScpConfig,
    alpha: np.ndarray,
    tight_bounds: list[bsp.WaypointBounds] | None = None,
):
    """Assemble the convex QP about the reference.

    Decision vector: stacked states, stacked controls, duration, one
    non-negative slack per (waypoint, obstacle) clearance row, then a free
    virtual-control defect per dynamics row. Clearance rows are soft (linear
    penalty) so early penetrating references stay solvable; the
    quadratically penalized virtual control removes the artificial
    infeasibility of references whose linearization loses heading
    controllability (any rest-to-rest interpolation guess does) and shrinks
    below the defect tolerance as the loop converges. Boundary and box
    constraints are hard.
    """
    n = ref.n_waypoints
    layout = _Layout(n, len(scenario.obstacles))
    z_ref = layout.pack(ref)
    bounds = scenario.bounds

    disc = kin.discretize_trajectory(
        ref.states, ref.controls, ref.t_f, scenario.vehicle.wheel_base, cfg.substeps
    )
    colsys = collision.assemble_constraints(
        ref.states, scenario.vehicle, scenario.obstacles, cfg.safety_margin, cfg.corner_eps
    )

    # Quadratic cost: trust region plus smoothness regularizers.
    p_diag = 2.0 * alpha.copy()
    q = -2.0 * alpha * z_ref
    for k in range(n):
        p_diag[layout.state(k).start + IA] += 2.0 * cfg.regularizer_accel
        p_diag[layout.control(k).start + JERK] += 2.0 * cfg.regularizer_jerk
        p_diag[layout.control(k).start + STEER_RATE] += 2.0 * cfg.regularizer_steer_rate
    q[layout.i_tf] += 1.0  # minimize duration
    q[layout.i_slack : layout.i_virtual] += cfg.collision_penalty
    p_diag[layout.i_virtual :] += 2.0 * cfg.virtual_control_penalty

    # Dynamics equality rows.
    rows, cols, vals = [], [], []
    beq = np.zeros(N_STATES * (n - 1))
    for k, seg in enumerate(disc.segments):
        r0 = N_STATES * k
        for i in range(N_STATES):
            rows.append(r0 + i)
            cols.append(layout.state(k + 1).start + i)
            vals.append(1.0)
        for i in range(N_STATES):
            for j in range(N_STATES):
                if seg.A[i, j] != 0.0:
                    rows.append(r0 + i)
                    cols.append(layout.state(k).start + j)
                    vals.append(-seg.A[i, j])
            for j in range(N_CONTROLS):
                if seg.B_minus[i, j] != 0.0:
                    rows.append(r0 + i)
                    cols.append(layout.control(k).start + j)
                    vals.append(-seg.B_minus[i, j])
                if seg.B_plus[i, j] != 0.0:
                    rows.append(r0 + i)
                    cols.append(layout.control(k + 1).start + j)
                    vals.append(-seg.B_plus[i, j])
            if seg.E[i] != 0.0:
                rows.append(r0 + i)
                cols.append(layout.i_tf)
                vals.append(-seg.E[i])
            rows.append(r0 + i)
            cols.append(layout.virtual(k, i))
            vals.append(-1.0)
        beq[r0 : r0 + N_STATES] = -seg.r
    a_eq = sp.csc_matrix((vals, (rows, cols)), shape=(len(beq), layout.n_vars))

    # Soft clearance rows: -grad . x_k - s_kj + (grad . x_ref_k - d + margin) <= 0.
    n_rows = layout.n_slack
    b_in = np.zeros(n_rows)
    if n_rows:
        rows, cols, vals = [], [], []
        for k in range(n):
            for j in range(layout.n_obs):
                r = k * layout.n_obs + j
                grad = colsys.blocks[k, j]
                for i in range(N_STATES):
                    if grad[i] != 0.0:
                        rows.append(r)
                        cols.append(layout.state(k).start + i)
                        vals.append(-grad[i])
                rows.append(r)
                cols.append(layout.slack(k, j))
                vals.append(-1.0)
                b_in[r] = grad @ ref.states[k] - colsys.offsets[k, j]
        a_in = sp.csc_matrix((vals, (rows, cols)), shape=(n_rows, layout.n_vars))
    else:
        a_in = sp.csc_matrix((0, layout.n_vars))

    # Box bounds: global variable limits, per-waypoint tightening, slacks >= 0.
    lb = np.empty(layout.n_vars)
    ub = np.empty(layout.n_vars)
    for k in range(n):
        lo = bounds.state_min.copy()
        hi = bounds.state_max.copy()
        if tight_bounds is not None:
            tb = tight_bounds[k]
            lo[X], hi[X] = max(lo[X], tb.x_min), min(hi[X], tb.x_max)
            lo[Y], hi[Y] = max(lo[Y], tb.y_min), min(hi[Y], tb.y_max)
            lo[THETA], hi[THETA] = max(lo[THETA], tb.theta_min), min(hi[THETA], tb.theta_max)
        lb[layout.state(k)] = lo
        ub[layout.state(k)] = hi
        lb[layout.control(k)] = bounds.control_min
        ub[layout.control(k)] = bounds.control_max
    lb[layout.i_tf] = bounds.t_f_min
    ub[layout.i_tf] = bounds.t_f_max
    lb[layout.i_slack : layout.i_virtual] = 0.0
    ub[layout.i_slack : layout.i_virtual] = np.inf
    lb[layout.i_virtual :] = -np.inf
    ub[layout.i_virtual :] = np.inf

    # Fixed endpoints.
    bc = scenario.boundary
    lb[layout.state(0)] = ub[layout.state(0)] = bc.x_init
    lb[layout.state(n - 1)] = ub[layout.state(n - 1)] = bc.x_final
    lb[layout.control(0)] = ub[layout.control(0)] = bc.u_init
    lb[layout.control(n - 1)] = ub[layout.control(n - 1)] = bc.u_final

    problem = QpProblem(
        P=sp.diags(p_diag, format="csc"),
        q=q,
        A_eq=a_eq,
        b_eq=beq,
        A_in=a_in,
        b_in=b_in,
        lb=lb,
        ub=ub,
    )
    return problem, layout, disc, colsys


def segment_defects(traj: Trajectory, wheel_base: float, substeps: int = 30) -> np.ndarray:
    """Componentwise defect of each interval against the nonlinear rollout."""
    n = traj.n_waypoints
    dt = traj.t_f / (n - 1)
    defects = np.zeros((n - 1, N_STATES))
    for k in range(n - 1):
        pred = kin.propagate_segment(
            traj.states[k], traj.controls[k], traj.controls[k + 1], dt, wheel_base, substeps
        )
        defects[k] = np.abs(traj.states[k + 1] - pred)
    return defects


def min_clearance(traj: Trajectory, scenario: Scenario, cfg: ScpConfig) -> float:
    """Smallest signed clearance over all waypoint polygons and obstacles."""
    if not scenario.obstacles:
        return math.inf
    worst = math.inf
    for k in range(traj.n_waypoints):
        for obs in scenario.obstacles:
            res = collision.signed_distance(k, traj.states, scenario.vehicle, obs, cfg.corner_eps)
            worst = min(worst, res.distance)
    return worst


def _blindspot_bounds(
    ref: Trajectory, scenario: Scenario, setup: BlindspotSetup
) -> list[bsp.WaypointBounds]:
    """Per-waypoint x/y/theta limits recomputed from the reference trajectory."""
    bounds = scenario.bounds
    global_wb = bsp.WaypointBounds(
        x_min=float(bounds.state_min[X]),
        x_max=float(bounds.state_max[X]),
        y_min=float(bounds.state_min[Y]),
        y_max=float(bounds.state_max[Y]),
        theta_min=float(bounds.state_min[THETA]),
        theta_max=float(bounds.state_max[THETA]),
    )
    grid = bsp.init_checked(
        scenario.workspace, ref.pose(0), scenario.vehicle, setup.init_margin, setup.grid_resolution
    )
    out = []
    for k in range(ref.n_waypoints):
        grid = bsp.update_checked(grid, ref.pose(k), setup.mask)
        out.append(
            bsp.waypoint_bounds(grid.unchecked(), grid, ref.pose(k), scenario.vehicle, global_wb, k)
        )
    return out


def iterate(
    ref: Trajectory,
    scenario: Scenario,
    cfg: ScpConfig,
    alpha: np.ndarray,
    tight_bounds: list[bsp.WaypointBounds] | None = None,
    iteration: int = 0,
) -> tuple[Trajectory, IterationReport, QpSolution]:
    """One convex step from the reference; raises SubproblemError on QP failure."""
    problem, layout, _, _ = build_subproblem(ref, scenario, cfg, alpha, tight_bounds)
    warm = np.clip(layout.pack(ref), problem.lb, problem.ub)
    sol = solve_qp(problem, cfg.qp, warm_start=warm)
    if sol.status != "optimal":
        raise SubproblemError(iteration, sol.status)
    # Strip solver-tolerance box violations before the candidate becomes the
    # next reference.
    z_clamped = np.clip(sol.z, problem.lb, problem.ub)
    candidate = layout.unpack(z_clamped)
    z_ref = layout.pack(ref)
    step = sol.z[: layout.i_tf + 1] - z_ref[: layout.i_tf + 1]
    step_norm = float(np.sqrt(np.sum(alpha[: layout.i_tf + 1] * step**2)))
    defect = float(segment_defects(candidate, scenario.vehicle.wheel_base, cfg.substeps).max())
    report = IterationReport(
        iteration=iteration,
        objective=float(sol.objective),
        step_norm=step_norm,
        max_defect=defect,
        min_clearance=min_clearance(candidate, scenario, cfg),
        t_f=candidate.t_f,
    )
    return candidate, report, sol


def prevalidate(scenario: Scenario, cfg: ScpConfig) -> None:
    """Reject boundary poses whose footprints already penetrate an obstacle."""
    scenario.boundary.check_within(scenario.bounds)
    for name, state in (("initial", scenario.boundary.x_init), ("final", scenario.boundary.x_final)):
        rect = vehicle_rectangle(Pose2(state[X], state[Y], state[THETA]), scenario.vehicle)
        for j, obs in enumerate(scenario.obstacles):
            res = polygon_rect_closest(rect, obs, cfg.corner_eps)
            if res.distance < 0.0:
                raise InfeasibleScenarioError(
                    f"{name} pose penetrates obstacle {j} by {-res.distance:.3f} m"
                )


def plan(scenario: Scenario, cfg: ScpConfig | None = None, report_sink=None) -> PlanResult:
    """Run the full planning loop to convergence or the iteration cap."""
    cfg = cfg or scenario.config
    prevalidate(scenario, cfg)

    ref = initial_guess(scenario, cfg.n_waypoints)
    layout = _Layout(cfg.n_waypoints, len(scenario.obstacles))
    alpha_base = trust_weights(scenario.bounds, layout, cfg.trust_scale)
    reports: list[IterationReport] = []
    ref_defect = float(segment_defects(ref, scenario.vehicle.wheel_base, cfg.substeps).max())

    setup = scenario.blindspot if (cfg.blindspot_enabled and scenario.blindspot) else None

    for it in range(1, cfg.max_iterations + 1):
        try:
            tight = _blindspot_bounds(ref, scenario, setup) if setup else None
        except bsp.TighteningInfeasibleError as err:
            return PlanResult(ref, reports, "failed", str(err))

        alpha = alpha_base.copy()
        retries = 0
        candidate = report = None
        failure: SubproblemError | None = None
        while retries <= cfg.trust_retries:
            try:
                candidate, report, _ = iterate(ref, scenario, cfg, alpha, tight, it)
            except SubproblemError as err:
                # A wandering reference can make the QP degenerate; a stiffer
                # trust region reconditions it.
                failure = err
                candidate = None
            if candidate is not None:
                blown_up = report.max_defect > 10.0 * max(ref_defect, cfg.defect_tol)
                if not blown_up and report.max_defect <= cfg.defect_cap:
                    break
            # Linearization went sour: shrink the trust radius and retry.
            alpha[: layout.i_tf + 1] *= 4.0
            retries += 1
        if candidate is None:
            return PlanResult(ref, reports, "failed", str(failure))
        report = replace(report, trust_retries=retries)

        reports.append(report)
        if report_sink is not None:
            report_sink(report)
        ref = candidate
        ref_defect = report.max_defect
        if (
            report.step_norm <= cfg.convergence_tol
            and report.max_defect <= cfg.defect_tol
            and report.min_clearance >= 0.0
        ):
            return PlanResult(ref, reports, "converged")

    return PlanResult(ref, reports, "max_iters")


def validate_trajectory(traj: Trajectory, scenario: Scenario, cfg: ScpConfig | None = None) -> ValidationReport:
    """Independent check of a trajectory: nonlinear defects, densely sampled
    clearances, bound violations and blind-spot overlap cells."""
    cfg = cfg or scenario.config
    defect = float(segment_defects(traj, scenario.vehicle.wheel_base, substeps=40).max())

    clearance = math.inf
    for k in range(traj.n_waypoints):
        poly = collision.waypoint_polygon(k, traj.states, scenario.vehicle)
        for obs in scenario.obstacles:
            # Cheap reject: circumradius bound before dense sampling.
            gap_bound = (
                math.hypot(obs.cx - traj.states[k, X], obs.cy - traj.states[k, Y])
                - math.hypot(obs.half_length, obs.half_width)
                - scenario.vehicle.circumradius
                - 1.0
            )
            if gap_bound > clearance:
                continue
            clearance = min(clearance, bruteforce.signed_clearance(poly, obs, spacing=5e-3))

    bounds = scenario.bounds
    viol = 0.0
    for k in range(traj.n_waypoints):
        viol = max(viol, float(np.max(bounds.state_min - traj.states[k])))
        viol = max(viol, float(np.max(traj.states[k] - bounds.state_max)))
        viol = max(viol, float(np.max(bounds.control_min - traj.controls[k])))
        viol = max(viol, float(np.max(traj.controls[k] - bounds.control_max)))
    viol = max(viol, bounds.t_f_min - traj.t_f, traj.t_f - bounds.t_f_max, 0.0)

    overlap_cells = 0
    if scenario.blindspot is not None:
        setup = scenario.blindspot
        grid = bsp.init_checked(
            scenario.workspace, traj.pose(0), scenario.vehicle, setup.init_margin, setup.grid_resolution
        )
        for k in range(traj.n_waypoints):
            grid = bsp.update_checked(grid, traj.pose(k), setup.mask)
            overlap_cells += bsp.overlap_cell_count(
                grid.unchecked(), grid, traj.pose(k), scenario.vehicle
            )

    ok = (
        defect <= cfg.defect_tol
        and clearance >= -1e-4
        and viol <= 1e-6
        and overlap_cells == 0
    )
    return ValidationReport(defect, clearance, viol, overlap_cells, ok)
