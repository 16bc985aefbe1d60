"""Checked-region bookkeeping along a trajectory and per-waypoint bound
tightening that keeps the vehicle out of space no sensor has swept yet."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .geometry import Pose2, VehicleGeometry, rotation, vehicle_rectangle

DEFAULT_GRID_RESOLUTION = 0.1
DEFAULT_INIT_MARGIN = 0.5
THETA_SEARCH_STEP = 0.01


class GridConfigurationError(ValueError):
    """Workspace extent or grid geometry is unusable."""


class TighteningInfeasibleError(RuntimeError):
    """The reference pose already overlaps unchecked space."""

    def __init__(self, waypoint: int):
        super().__init__(f"waypoint {waypoint} already overlaps the unchecked region")
        self.waypoint = waypoint


@dataclass(frozen=True)
class VisibilityMask:
    """Sensor field-of-view in the vehicle's local frame.

    grid[r, c] == 1 marks visible space; cell centers sit at
    (origin + (index + 0.5) * resolution) with row 0 at the lowest y.
    """

    grid: np.ndarray
    resolution: float
    origin_x: float
    origin_y: float

    def __post_init__(self) -> None:
        if self.grid.ndim != 2 or self.grid.size == 0:
            raise GridConfigurationError("mask grid must be a non-empty 2D array")
        if self.resolution <= 0:
            raise GridConfigurationError("mask resolution must be positive")

    @property
    def extent_radius(self) -> float:
        """Radius of a vehicle-frame circle covering the whole mask."""
        h, w = self.grid.shape
        corners_x = (self.origin_x, self.origin_x + w * self.resolution)
        corners_y = (self.origin_y, self.origin_y + h * self.resolution)
        return max(math.hypot(x, y) for x in corners_x for y in corners_y)


@dataclass
class CheckedRegionGrid:
    """Global-frame raster of space already swept by the sensor footprint."""

    grid: np.ndarray
    resolution: float
    origin_x: float
    origin_y: float

    def cell_centers(self, mask: np.ndarray) -> np.ndarray:
        rows, cols = np.nonzero(mask)
        return np.stack(
            [
                self.origin_x + (cols + 0.5) * self.resolution,
                self.origin_y + (rows + 0.5) * self.resolution,
            ],
            axis=1,
        )

    def copy(self) -> "CheckedRegionGrid":
        return CheckedRegionGrid(self.grid.copy(), self.resolution, self.origin_x, self.origin_y)

    def unchecked(self) -> np.ndarray:
        return 1 - self.grid


@dataclass(frozen=True)
class WaypointBounds:
    """Tightened per-waypoint limits on x, y and heading."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    theta_min: float
    theta_max: float


def load_mask(source, base_dir: Path | None = None) -> VisibilityMask:
    """Load a visibility mask from an inline JSON grid or a PGM file.

    PGM (P2 or P5) pixels are thresholded at 128; metadata comes from a JSON
    sidecar next to the image (same name, .json extension) unless the inline
    form carries it directly. PGM rows are stored top-down and are flipped so
    that row 0 is the lowest y.
    """
    if isinstance(source, dict) and "grid" in source:
        grid = np.asarray(source["grid"], dtype=np.uint8)
        return VisibilityMask(
            grid=(grid > 0).astype(np.uint8),
            resolution=float(source["resolution_m"]),
            origin_x=float(source["origin_x_m"]),
            origin_y=float(source["origin_y_m"]),
        )
    if isinstance(source, dict):
        path = Path(source["file"])
    else:
        path = Path(source)
    if base_dir is not None and not path.is_absolute():
        path = base_dir / path
    sidecar = path.with_suffix(".json")
    if not sidecar.exists():
        raise GridConfigurationError(f"mask sidecar {sidecar} not found")
    meta = json.loads(sidecar.read_text())
    pixels = _read_pgm(path)
    grid = (pixels >= 128).astype(np.uint8)[::-1]  # flip to y-up rows
    return VisibilityMask(
        grid=grid,
        resolution=float(meta["resolution_m"]),
        origin_x=float(meta["origin_x_m"]),
        origin_y=float(meta["origin_y_m"]),
    )


def _read_pgm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    # Header tokens: magic, width, height, maxval; comments start with '#'.
    tokens: list[bytes] = []
    i = 0
    while len(tokens) < 4:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if i < len(data) and data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < len(data) and not data[i : i + 1].isspace():
            i += 1
        tokens.append(data[start:i])
    magic = tokens[0]
    width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic == b"P5":
        i += 1  # single whitespace after maxval
        raster = np.frombuffer(data[i : i + width * height], dtype=np.uint8)
    elif magic == b"P2":
        raster = np.array(data[i:].split()[: width * height], dtype=np.uint8)
    else:
        raise GridConfigurationError(f"unsupported PGM magic {magic!r}")
    if raster.size != width * height:
        raise GridConfigurationError("PGM raster is truncated")
    if maxval != 255:
        raster = (raster.astype(np.float64) * (255.0 / maxval)).astype(np.uint8)
    return raster.reshape(height, width)


def init_checked(
    workspace: tuple[float, float, float, float],
    pose0: Pose2,
    geom: VehicleGeometry,
    margin: float = DEFAULT_INIT_MARGIN,
    resolution: float = DEFAULT_GRID_RESOLUTION,
) -> CheckedRegionGrid:
    """Initial checked region: the starting footprint dilated by margin."""
    x_min, x_max, y_min, y_max = workspace
    if not (x_max > x_min and y_max > y_min):
        raise GridConfigurationError("workspace extent is empty")
    if margin < 0:
        raise GridConfigurationError("margin must be non-negative")
    nx = int(math.ceil((x_max - x_min) / resolution))
    ny = int(math.ceil((y_max - y_min) / resolution))
    if nx < 1 or ny < 1:
        raise GridConfigurationError("workspace is smaller than one grid cell")
    grid = CheckedRegionGrid(np.zeros((ny, nx), dtype=np.uint8), resolution, x_min, y_min)
    centers = grid.cell_centers(np.ones((ny, nx), dtype=bool))
    # Exact dilation: distance from cell center to the footprint <= margin.
    body = rotation(pose0.theta).T @ (centers - np.array([pose0.x, pose0.y])).T
    dx = np.maximum(
        np.maximum(-geom.rear_overhang - body[0], body[0] - geom.front_extent), 0.0
    )
    dy = np.maximum(np.abs(body[1]) - 0.5 * geom.width, 0.0)
    close = np.hypot(dx, dy) <= margin
    grid.grid.ravel()[close] = 1
    return grid


def update_checked(c_prev: CheckedRegionGrid, pose_k: Pose2, mask: VisibilityMask) -> CheckedRegionGrid:
    """Union the mask footprint at pose_k into the checked region.

    Nearest-cell sampling: each global cell center is pulled back into the
    vehicle frame and reads the mask cell it lands in.
    """
    out = c_prev.copy()
    h, w = out.grid.shape
    res = out.resolution
    reach = mask.extent_radius
    c_lo = max(0, int((pose_k.x - reach - out.origin_x) / res) - 1)
    c_hi = min(w, int((pose_k.x + reach - out.origin_x) / res) + 2)
    r_lo = max(0, int((pose_k.y - reach - out.origin_y) / res) - 1)
    r_hi = min(h, int((pose_k.y + reach - out.origin_y) / res) + 2)
    if c_lo >= c_hi or r_lo >= r_hi:
        return out
    cols = np.arange(c_lo, c_hi)
    rows = np.arange(r_lo, r_hi)
    cx = out.origin_x + (cols + 0.5) * res
    cy = out.origin_y + (rows + 0.5) * res
    gx, gy = np.meshgrid(cx, cy)
    rel = np.stack([gx.ravel() - pose_k.x, gy.ravel() - pose_k.y])
    local = rotation(pose_k.theta).T @ rel
    mc = np.floor((local[0] - mask.origin_x) / mask.resolution).astype(int)
    mr = np.floor((local[1] - mask.origin_y) / mask.resolution).astype(int)
    mh, mw = mask.grid.shape
    valid = (mc >= 0) & (mc < mw) & (mr >= 0) & (mr < mh)
    visible = np.zeros(len(mc), dtype=bool)
    visible[valid] = mask.grid[mr[valid], mc[valid]] == 1
    sub = out.grid[r_lo:r_hi, c_lo:c_hi]
    sub |= visible.reshape(len(rows), len(cols)).astype(np.uint8)
    return out


def _rect_overlaps_points(pose: Pose2, geom: VehicleGeometry, points: np.ndarray) -> bool:
    if len(points) == 0:
        return False
    body = rotation(pose.theta).T @ (points - np.array([pose.x, pose.y])).T
    inside = (
        (body[0] >= -geom.rear_overhang)
        & (body[0] <= geom.front_extent)
        & (np.abs(body[1]) <= 0.5 * geom.width)
    )
    return bool(inside.any())


def _directional_clearance(
    pose: Pose2,
    geom: VehicleGeometry,
    points: np.ndarray,
    axis: np.ndarray,
    max_range: float,
    step: float,
) -> float:
    """Largest displacement along axis before the footprint first overlaps.

    Line search in grid-resolution steps; returns the last overlap-free
    displacement, capped at max_range.
    """
    if max_range <= 0.0:
        return 0.0
    if len(points) == 0:
        return max_range
    # Cells the sweep can ever touch: inside the corridor bounding box.
    radius = geom.circumradius
    lo = np.minimum(np.array([pose.x, pose.y]), np.array([pose.x, pose.y]) + max_range * axis)
    hi = np.maximum(np.array([pose.x, pose.y]), np.array([pose.x, pose.y]) + max_range * axis)
    keep = (
        (points[:, 0] >= lo[0] - radius - step)
        & (points[:, 0] <= hi[0] + radius + step)
        & (points[:, 1] >= lo[1] - radius - step)
        & (points[:, 1] <= hi[1] + radius + step)
    )
    corridor = points[keep]
    if len(corridor) == 0:
        return max_range
    # Skip displacements that cannot possibly reach the nearest cell.
    gaps = np.hypot(corridor[:, 0] - pose.x, corridor[:, 1] - pose.y)
    start = max(step, (math.floor(max(gaps.min() - radius, 0.0) / step)) * step)
    s = start
    while s <= max_range + 0.5 * step:
        probe = Pose2(pose.x + s * axis[0], pose.y + s * axis[1], pose.theta)
        if _rect_overlaps_points(probe, geom, corridor):
            return max(s - step, 0.0)
        s += step
    return max_range


def _angular_clearance(
    pose: Pose2,
    geom: VehicleGeometry,
    points: np.ndarray,
    sign: float,
    max_range: float,
    step: float = THETA_SEARCH_STEP,
) -> float:
    if max_range <= 0.0:
        return 0.0
    if len(points) == 0:
        return max_range
    radius = geom.circumradius
    gaps = np.hypot(points[:, 0] - pose.x, points[:, 1] - pose.y)
    keep = gaps <= radius + step
    ring = points[keep]
    if len(ring) == 0:
        return max_range
    s = step
    while s <= max_range + 0.5 * step:
        probe = Pose2(pose.x, pose.y, pose.theta + sign * s)
        if _rect_overlaps_points(probe, geom, ring):
            return max(s - step, 0.0)
        s += step
    return max_range


def waypoint_bounds(
    unchecked: np.ndarray,
    grid: CheckedRegionGrid,
    pose_k: Pose2,
    geom: VehicleGeometry,
    global_bounds: WaypointBounds,
    waypoint: int = 0,
) -> WaypointBounds:
    """Tighten the x/y/theta box at one waypoint so it cannot reach unchecked
    space.

    The unchecked raster is dilated by one cell to compensate for the
    nearest-cell rasterization of the sweep test.
    """
    dilated = ndimage.binary_dilation(unchecked.astype(bool), iterations=1)
    points = grid.cell_centers(dilated)
    step = grid.resolution
    if _rect_overlaps_points(pose_k, geom, points):
        raise TighteningInfeasibleError(waypoint)

    dx_plus = _directional_clearance(
        pose_k, geom, points, np.array([1.0, 0.0]), global_bounds.x_max - pose_k.x, step
    )
    dx_minus = _directional_clearance(
        pose_k, geom, points, np.array([-1.0, 0.0]), pose_k.x - global_bounds.x_min, step
    )
    dy_plus = _directional_clearance(
        pose_k, geom, points, np.array([0.0, 1.0]), global_bounds.y_max - pose_k.y, step
    )
    dy_minus = _directional_clearance(
        pose_k, geom, points, np.array([0.0, -1.0]), pose_k.y - global_bounds.y_min, step
    )
    dt_plus = _angular_clearance(pose_k, geom, points, 1.0, global_bounds.theta_max - pose_k.theta)
    dt_minus = _angular_clearance(pose_k, geom, points, -1.0, pose_k.theta - global_bounds.theta_min)
    return WaypointBounds(
        x_min=pose_k.x - dx_minus,
        x_max=pose_k.x + dx_plus,
        y_min=pose_k.y - dy_minus,
        y_max=pose_k.y + dy_plus,
        theta_min=pose_k.theta - dt_minus,
        theta_max=pose_k.theta + dt_plus,
    )


def overlap_cell_count(
    unchecked: np.ndarray, grid: CheckedRegionGrid, pose: Pose2, geom: VehicleGeometry
) -> int:
    """Number of unchecked cells whose centers fall inside the footprint."""
    points = grid.cell_centers(unchecked.astype(bool))
    if len(points) == 0:
        return 0
    body = rotation(pose.theta).T @ (points - np.array([pose.x, pose.y])).T
    inside = (
        (body[0] >= -geom.rear_overhang)
        & (body[0] <= geom.front_extent)
        & (np.abs(body[1]) <= 0.5 * geom.width)
    )
    return int(inside.sum())
