import json
import math

import numpy as np
import pytest

from parkplan import blindspot as bs
from parkplan.geometry import Pose2, VehicleGeometry, rotation

GEOM = VehicleGeometry(wheel_base=2.9, front_overhang=1.0, rear_overhang=1.1, width=1.9)
SMALL = VehicleGeometry(wheel_base=0.5, front_overhang=0.3, rear_overhang=0.2, width=0.6)
WORKSPACE = (-10.0, 10.0, -5.0, 5.0)


def all_ones_mask(half_extent=12.0, resolution=0.5):
    n = int(2 * half_extent / resolution)
    return bs.VisibilityMask(
        grid=np.ones((n, n), dtype=np.uint8),
        resolution=resolution,
        origin_x=-half_extent,
        origin_y=-half_extent,
    )


def half_plane_mask(resolution=0.25, half_extent=6.0):
    """Visible only where local x >= 0."""
    n = int(2 * half_extent / resolution)
    grid = np.zeros((n, n), dtype=np.uint8)
    grid[:, n // 2 :] = 1
    return bs.VisibilityMask(grid, resolution, -half_extent, -half_extent)


class TestInitChecked:
    def test_zero_margin_covers_footprint(self):
        pose = Pose2(0.0, 0.0, 0.0)
        grid = bs.init_checked(WORKSPACE, pose, GEOM, margin=0.0)
        centers = grid.cell_centers(grid.grid.astype(bool))
        # Every checked center lies within one cell of the rectangle.
        assert len(centers) > 0
        body = rotation(0.0).T @ (centers - np.array([0.0, 0.0])).T
        assert np.all(body[0] >= -GEOM.rear_overhang - grid.resolution)
        assert np.all(body[0] <= GEOM.front_extent + grid.resolution)
        assert np.all(np.abs(body[1]) <= 0.5 * GEOM.width + grid.resolution)
        area = GEOM.total_length * GEOM.width
        assert len(centers) * grid.resolution**2 == pytest.approx(area, rel=0.1)

    def test_margin_dilates(self):
        pose = Pose2(0.0, 0.0, 0.3)
        tight = bs.init_checked(WORKSPACE, pose, GEOM, margin=0.0)
        wide = bs.init_checked(WORKSPACE, pose, GEOM, margin=1.0)
        assert wide.grid.sum() > tight.grid.sum()
        # Dilated area approximately footprint + perimeter*margin + pi*margin^2.
        expected = GEOM.total_length * GEOM.width + 2 * (GEOM.total_length + GEOM.width) + math.pi
        assert wide.grid.sum() * wide.resolution**2 == pytest.approx(expected, rel=0.05)

    def test_empty_workspace_rejected(self):
        with pytest.raises(bs.GridConfigurationError):
            bs.init_checked((0.0, 0.0, -1.0, 1.0), Pose2(0, 0, 0), GEOM)


class TestUpdateChecked:
    def test_all_zero_mask_is_noop(self):
        grid = bs.init_checked(WORKSPACE, Pose2(0, 0, 0), GEOM)
        mask = bs.VisibilityMask(np.zeros((10, 10), np.uint8), 0.5, -2.5, -2.5)
        updated = bs.update_checked(grid, Pose2(3.0, 1.0, 0.4), mask)
        assert np.array_equal(updated.grid, grid.grid)

    def test_all_ones_mask_unions_footprint(self):
        grid = bs.init_checked(WORKSPACE, Pose2(-8, 0, 0), GEOM, margin=0.0)
        mask = all_ones_mask(half_extent=2.0, resolution=0.5)
        pose = Pose2(5.0, 2.0, 0.0)
        updated = bs.update_checked(grid, pose, mask)
        centers = grid.cell_centers(np.ones_like(grid.grid, dtype=bool))
        in_mask = (np.abs(centers[:, 0] - 5.0) < 1.9) & (np.abs(centers[:, 1] - 2.0) < 1.9)
        flat = updated.grid.ravel()
        assert np.all(flat[in_mask] == 1)
        assert np.all(updated.grid >= grid.grid)  # monotone

    def test_half_plane_rotated_pi_reflects(self):
        base = bs.init_checked(WORKSPACE, Pose2(-9, -4, 0), SMALL, margin=0.0)
        mask = half_plane_mask()
        pose = Pose2(1.0, 0.5, math.pi)
        updated = bs.update_checked(base, pose, mask)
        # Per-cell oracle: apply the inverse transform and sample the mask.
        rng = np.random.default_rng(0)
        h, w = base.grid.shape
        for _ in range(400):
            r = rng.integers(0, h)
            c = rng.integers(0, w)
            cx = base.origin_x + (c + 0.5) * base.resolution
            cy = base.origin_y + (r + 0.5) * base.resolution
            local = rotation(pose.theta).T @ np.array([cx - pose.x, cy - pose.y])
            mc = math.floor((local[0] - mask.origin_x) / mask.resolution)
            mr = math.floor((local[1] - mask.origin_y) / mask.resolution)
            expected = 0
            if 0 <= mr < mask.grid.shape[0] and 0 <= mc < mask.grid.shape[1]:
                expected = int(mask.grid[mr, mc])
            expected = max(expected, int(base.grid[r, c]))
            assert updated.grid[r, c] == expected

    def test_checked_count_monotone_along_trajectory(self):
        grid = bs.init_checked(WORKSPACE, Pose2(-8, 0, 0), GEOM)
        mask = half_plane_mask()
        counts = [int(grid.grid.sum())]
        for k in range(8):
            grid = bs.update_checked(grid, Pose2(-8 + k, 0, 0.1 * k), mask)
            counts.append(int(grid.grid.sum()))
        assert all(b >= a for a, b in zip(counts, counts[1:]))


GLOBAL_BOUNDS = bs.WaypointBounds(-10, 10, -5, 5, -math.pi, math.pi)


class TestWaypointBounds:
    def test_no_unchecked_cells_gives_global(self):
        grid = bs.init_checked(WORKSPACE, Pose2(0, 0, 0), SMALL)
        grid.grid[:] = 1
        wb = bs.waypoint_bounds(grid.unchecked(), grid, Pose2(0, 0, 0), SMALL, GLOBAL_BOUNDS)
        assert wb == GLOBAL_BOUNDS

    def test_half_plane_ahead(self):
        grid = bs.init_checked(WORKSPACE, Pose2(0, 0, 0), SMALL)
        grid.grid[:] = 1
        centers = grid.cell_centers(np.ones_like(grid.grid, dtype=bool))
        blocked = (centers[:, 0] >= 2.0).reshape(grid.grid.shape)
        grid.grid[blocked] = 0
        wb = bs.waypoint_bounds(grid.unchecked(), grid, Pose2(0, 0, 0), SMALL, GLOBAL_BOUNDS)
        expected = 2.0 - SMALL.front_extent
        assert wb.x_max - 0.0 == pytest.approx(expected, abs=2 * grid.resolution)
        assert wb.x_min == GLOBAL_BOUNDS.x_min
        # Sideways or rotating motion never reaches the wall ahead.
        assert wb.y_max == GLOBAL_BOUNDS.y_max
        assert wb.theta_min == GLOBAL_BOUNDS.theta_min

    def test_everything_unchecked_pins_waypoint(self):
        pose = Pose2(0, 0, 0)
        grid = bs.init_checked(WORKSPACE, pose, SMALL, margin=0.3)
        wb = bs.waypoint_bounds(grid.unchecked(), grid, pose, SMALL, GLOBAL_BOUNDS)
        assert wb.x_max - pose.x <= 0.4
        assert pose.x - wb.x_min <= 0.4
        assert wb.y_max - pose.y <= 0.4
        assert wb.theta_max - pose.theta <= 0.5

    def test_reference_overlap_raises(self):
        grid = bs.init_checked(WORKSPACE, Pose2(-8, 0, 0), SMALL, margin=0.0)
        with pytest.raises(bs.TighteningInfeasibleError):
            bs.waypoint_bounds(grid.unchecked(), grid, Pose2(5.0, 0.0, 0.0), SMALL, GLOBAL_BOUNDS, waypoint=3)


class TestMaskLoading:
    def test_inline_json_grid(self):
        mask = bs.load_mask({"grid": [[0, 1], [1, 1]], "resolution_m": 0.5, "origin_x_m": -0.5, "origin_y_m": -0.5})
        assert mask.grid.shape == (2, 2)
        assert mask.grid[0, 0] == 0 and mask.grid[1, 1] == 1

    def test_pgm_p5_with_sidecar(self, tmp_path):
        path = tmp_path / "cone.pgm"
        raster = np.array([[0, 255, 255], [0, 0, 255]], dtype=np.uint8)
        path.write_bytes(b"P5\n3 2\n255\n" + raster.tobytes())
        (tmp_path / "cone.json").write_text(
            json.dumps({"resolution_m": 0.25, "origin_x_m": 0.0, "origin_y_m": -0.25})
        )
        mask = bs.load_mask(path)
        # File rows are top-down; loader flips so row 0 is the lowest y.
        assert np.array_equal(mask.grid, [[0, 0, 1], [0, 1, 1]])
        assert mask.resolution == 0.25

    def test_pgm_p2_threshold(self, tmp_path):
        path = tmp_path / "m.pgm"
        path.write_text("P2\n# comment\n2 2\n255\n0 200\n127 128\n")
        (tmp_path / "m.json").write_text(
            json.dumps({"resolution_m": 0.1, "origin_x_m": 0.0, "origin_y_m": 0.0})
        )
        mask = bs.load_mask(path)
        assert np.array_equal(mask.grid, [[0, 1], [0, 1]])

    def test_missing_sidecar_raises(self, tmp_path):
        path = tmp_path / "m.pgm"
        path.write_bytes(b"P5\n1 1\n255\n\x00")
        with pytest.raises(bs.GridConfigurationError):
            bs.load_mask(path)
