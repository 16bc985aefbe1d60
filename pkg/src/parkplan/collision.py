"""Per-waypoint linearized clearance constraints against rectangular obstacles."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import (
    ClosestResult,
    ConvexPolygon,
    ObstacleRect,
    Pose2,
    VehicleGeometry,
    polygon_rect_closest,
    rotation,
    swept_hull,
    vehicle_rectangle,
)
from .kinematics import THETA, X, Y

DEFAULT_SAFETY_MARGIN = 0.05


@dataclass(frozen=True)
class CollisionConstraint:
    """Signed clearance of waypoint k against obstacle j and its state gradient."""

    distance: float
    grad: np.ndarray
    waypoint_index: int
    obstacle_index: int


@dataclass(frozen=True)
class StackedCollisionSystem:
    """Block-diagonal clearance linearization over all waypoints.

    blocks[k] is the J x 6 matrix of clearance gradients at waypoint k and
    offsets[k] the corresponding margin-adjusted clearances, so the safety
    constraint on the state changes dx_k reads blocks[k] @ dx_k + offsets[k] >= 0.
    """

    blocks: np.ndarray  # (N, J, 6)
    offsets: np.ndarray  # (N, J)
    constraints: list[CollisionConstraint]

    @property
    def n_rows(self) -> int:
        return self.offsets.size

    def to_dense(self):
        """Expanded (N*J, 6N) block-diagonal matrix and stacked offsets."""
        n, j, _ = self.blocks.shape
        m = np.zeros((n * j, 6 * n))
        for k in range(n):
            m[k * j : (k + 1) * j, 6 * k : 6 * k + 6] = self.blocks[k]
        return m, self.offsets.ravel()


def waypoint_polygon(k: int, states: np.ndarray, geom: VehicleGeometry) -> ConvexPolygon:
    """Swept hull of waypoints k and k+1; the last waypoint has no successor
    and degenerates to its single rectangle."""
    pose_k = Pose2(states[k, X], states[k, Y], states[k, THETA])
    if k == len(states) - 1:
        return vehicle_rectangle(pose_k, geom)
    pose_k1 = Pose2(states[k + 1, X], states[k + 1, Y], states[k + 1, THETA])
    return swept_hull(pose_k, pose_k1, geom)


def signed_distance(
    k: int,
    states: np.ndarray,
    geom: VehicleGeometry,
    obs: ObstacleRect,
    corner_eps: float = 0.05,
) -> ClosestResult:
    """Closest-point query between waypoint k's swept polygon and an obstacle."""
    return polygon_rect_closest(waypoint_polygon(k, states, geom), obs, corner_eps)


def distance_gradient(direction: np.ndarray, obstacle_angle: float, theta_k: float) -> np.ndarray:
    """State-space clearance gradient from an obstacle-frame push direction."""
    n_world = rotation(obstacle_angle) @ direction
    grad = np.zeros(6)
    grad[X] = n_world[0]
    grad[Y] = n_world[1]
    grad[THETA] = n_world[1] * math.cos(theta_k) - n_world[0] * math.sin(theta_k)
    return grad


def assemble_constraints(
    states: np.ndarray,
    geom: VehicleGeometry,
    obstacles: list[ObstacleRect],
    safety_margin: float = DEFAULT_SAFETY_MARGIN,
    corner_eps: float = 0.05,
) -> StackedCollisionSystem:
    """Linearize every (waypoint, obstacle) clearance about the reference."""
    states = np.asarray(states, dtype=float)
    n = len(states)
    j = len(obstacles)
    blocks = np.zeros((n, j, 6))
    offsets = np.zeros((n, j))
    constraints: list[CollisionConstraint] = []
    for k in range(n):
        for jj, obs in enumerate(obstacles):
            res = signed_distance(k, states, geom, obs, corner_eps)
            grad = distance_gradient(res.direction, obs.angle, float(states[k, THETA]))
            blocks[k, jj] = grad
            offsets[k, jj] = res.distance - safety_margin
            constraints.append(CollisionConstraint(res.distance, grad, k, jj))
    return StackedCollisionSystem(blocks, offsets, constraints)
