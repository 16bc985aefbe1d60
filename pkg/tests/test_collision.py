import math

import numpy as np
import pytest

from parkplan import bruteforce
from parkplan import collision
from parkplan.geometry import ObstacleRect, Pose2, VehicleGeometry, polygon_rect_closest, rotation, vehicle_rectangle
from parkplan.kinematics import THETA, X, Y

GEOM = VehicleGeometry(wheel_base=2.9, front_overhang=1.0, rear_overhang=1.1, width=1.9)


def states_from_poses(poses):
    states = np.zeros((len(poses), 6))
    for k, (x, y, theta) in enumerate(poses):
        states[k, X] = x
        states[k, Y] = y
        states[k, THETA] = theta
    return states


class TestSignedDistance:
    def test_far_waypoint_triangle_bound(self):
        states = states_from_poses([(0, 0, 0.2), (0.5, 0.1, 0.25), (1.0, 0.2, 0.3)])
        obs = ObstacleRect(14.0, 0.0, 1.0, 1.0, 0.0)
        res = collision.signed_distance(0, states, GEOM, obs)
        # Obstacle boundary is 13 m out; the swept hull reaches at most the
        # circumradius plus the half-step to the next waypoint.
        reach = GEOM.circumradius + math.hypot(0.5, 0.1)
        assert res.distance >= 13.0 - reach

    def test_face_penetration_matches_oracle(self):
        states = states_from_poses([(0, 0, 0), (0, 0, 0)])
        obs = ObstacleRect(4.7, 0.0, 1.0, 2.0, 0.0)
        res = collision.signed_distance(0, states, GEOM, obs)
        assert res.distance == pytest.approx(-0.2, abs=1e-9)
        hull = collision.waypoint_polygon(0, states, GEOM)
        assert res.distance == pytest.approx(bruteforce.signed_clearance(hull, obs), abs=0.02)

    def test_last_waypoint_uses_single_rectangle(self):
        states = states_from_poses([(0, 0, 0.1), (2.0, 0.5, 0.4)])
        obs = ObstacleRect(6.0, 1.0, 1.0, 0.8, 0.2)
        res = collision.signed_distance(1, states, GEOM, obs)
        direct = polygon_rect_closest(vehicle_rectangle(Pose2(2.0, 0.5, 0.4), GEOM), obs)
        assert res.distance == direct.distance
        assert np.array_equal(res.direction, direct.direction)

    def test_identical_adjacent_poses_degenerate_hull(self):
        states = states_from_poses([(1.0, -0.5, 0.3), (1.0, -0.5, 0.3)])
        obs = ObstacleRect(5.0, 0.0, 1.0, 1.0, 0.1)
        res = collision.signed_distance(0, states, GEOM, obs)
        direct = polygon_rect_closest(vehicle_rectangle(Pose2(1.0, -0.5, 0.3), GEOM), obs)
        assert res.distance == pytest.approx(direct.distance, abs=1e-12)


class TestDistanceGradient:
    def test_plus_x(self):
        grad = collision.distance_gradient(np.array([1.0, 0.0]), 0.0, 0.0)
        assert np.allclose(grad, [1, 0, 0, 0, 0, 0])

    def test_plus_y(self):
        grad = collision.distance_gradient(np.array([0.0, 1.0]), 0.0, 0.0)
        assert np.allclose(grad, [0, 1, 0, 0, 1, 0])

    def test_obstacle_rotation_carries_direction(self):
        grad = collision.distance_gradient(np.array([1.0, 0.0]), math.pi / 2, 0.0)
        assert np.allclose(grad, [0, 1, 0, 0, 1, 0], atol=1e-15)

    def test_velocity_channels_zero(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            n = rng.normal(size=2)
            n /= np.hypot(*n)
            grad = collision.distance_gradient(n, rng.uniform(-3, 3), rng.uniform(-3, 3))
            assert grad[2] == 0 and grad[3] == 0 and grad[5] == 0
            assert np.hypot(grad[X], grad[Y]) <= 1 + 1e-9


class TestAssembleConstraints:
    def test_no_obstacles(self):
        states = states_from_poses([(0, 0, 0), (1, 0, 0)])
        system = collision.assemble_constraints(states, GEOM, [])
        assert system.n_rows == 0
        m, b = system.to_dense()
        assert m.shape == (0, 12)
        assert b.shape == (0,)

    def test_shapes_n3_j2(self):
        states = states_from_poses([(0, 0, 0), (1, 0, 0), (2, 0, 0)])
        obstacles = [ObstacleRect(8, 3, 1, 1, 0), ObstacleRect(8, -3, 1, 1, 0)]
        system = collision.assemble_constraints(states, GEOM, obstacles)
        assert system.blocks.shape == (3, 2, 6)
        m, b = system.to_dense()
        assert m.shape == (6, 18)
        assert b.shape == (6,)
        # Off-block entries stay zero.
        assert np.count_nonzero(m[:2, 6:]) == 0
        assert np.count_nonzero(m[2:4, :6]) == 0

    def test_penetrating_waypoint_marks_its_rows(self):
        states = states_from_poses([(0, 0, 0), (6, 0, 0), (12, 0, 0)])
        obstacles = [ObstacleRect(8.6, 0.0, 1.0, 2.0, 0.0), ObstacleRect(6, 9, 1, 1, 0)]
        system = collision.assemble_constraints(states, GEOM, obstacles, safety_margin=0.0)
        negative = system.offsets < 0
        # Waypoint 1 reaches into obstacle 0 (rect front at 9.9 m versus the
        # obstacle face at 7.6 m); every other pair stays clear.
        assert negative[1, 0]
        assert not negative[0, 1] and not negative[1, 1] and not negative[2, 1]

    def test_margin_shifts_offsets(self):
        states = states_from_poses([(0, 0, 0), (1, 0, 0)])
        obstacles = [ObstacleRect(10, 0, 1, 1, 0)]
        loose = collision.assemble_constraints(states, GEOM, obstacles, safety_margin=0.0)
        tight = collision.assemble_constraints(states, GEOM, obstacles, safety_margin=0.25)
        assert np.allclose(loose.offsets - tight.offsets, 0.25)

    def test_deterministic(self):
        states = states_from_poses([(0, 0, 0.2), (1, 0.5, 0.5), (2, 1.5, 0.9)])
        obstacles = [ObstacleRect(4, 2, 1.2, 0.8, 0.4)]
        a = collision.assemble_constraints(states, GEOM, obstacles)
        b = collision.assemble_constraints(states, GEOM, obstacles)
        assert np.array_equal(a.blocks, b.blocks)
        assert np.array_equal(a.offsets, b.offsets)


class TestGradientFidelity:
    def test_hull_translation_first_order(self):
        rng = np.random.default_rng(13)
        checked = 0
        while checked < 40:
            theta = rng.uniform(-math.pi, math.pi)
            states = states_from_poses(
                [
                    (rng.uniform(-8, 8), rng.uniform(-8, 8), theta),
                    (0, 0, theta + rng.uniform(-0.3, 0.3)),
                ]
            )
            states[1, :2] = states[0, :2] + rng.uniform(-0.6, 0.6, size=2)
            obs = ObstacleRect(0, 0, 1.5, 1.0, rng.uniform(-1, 1))
            res = collision.signed_distance(0, states, GEOM, obs)
            if res.distance < 0.2:
                continue
            grad = collision.distance_gradient(res.direction, obs.angle, states[0, THETA])
            delta = 1e-4
            direction = rng.normal(size=2)
            direction /= np.hypot(*direction)
            moved = states.copy()
            moved[0, :2] += delta * direction
            moved[1, :2] += delta * direction
            res2 = collision.signed_distance(0, moved, GEOM, obs)
            predicted = grad[:2] @ (delta * direction)
            actual = res2.distance - res.distance
            if abs(predicted) < 0.2 * delta:
                continue  # nearly tangent motion, relative error ill-posed
            assert actual == pytest.approx(predicted, rel=0.05)
            checked += 1

    def test_last_waypoint_position_gradient(self):
        states = states_from_poses([(0, 0, 0.0), (0.0, 2.0, 0.4)])
        obs = ObstacleRect(6.0, 3.0, 1.0, 1.0, 0.3)
        res = collision.signed_distance(1, states, GEOM, obs)
        grad = collision.distance_gradient(res.direction, obs.angle, states[1, THETA])
        delta = 1e-4
        n_world = rotation(obs.angle) @ res.direction
        moved = states.copy()
        moved[1, :2] += delta * n_world
        res2 = collision.signed_distance(1, moved, GEOM, obs)
        assert (res2.distance - res.distance) == pytest.approx(delta, rel=0.05)
