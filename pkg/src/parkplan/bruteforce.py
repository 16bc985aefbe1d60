"""Brute-force geometric checks by dense boundary sampling.

Deliberately independent of the closest-point machinery in
:mod:`parkplan.geometry`: used as the ground truth by the trajectory
validator and by tests.
"""

from __future__ import annotations

import numpy as np

from .geometry import ConvexPolygon, ObstacleRect, rotation

DEFAULT_SPACING = 2e-3


def sample_boundary(vertices: np.ndarray, spacing: float) -> np.ndarray:
    """Points along a closed polyline at roughly the given spacing.

    All vertices are included exactly, so vertex-to-shape minima are hit
    without interpolation error.
    """
    pts = []
    n = len(vertices)
    for i in range(n):
        p0 = vertices[i]
        p1 = vertices[(i + 1) % n]
        length = float(np.hypot(*(p1 - p0)))
        steps = max(1, int(np.ceil(length / spacing)))
        t = np.arange(steps) / steps
        pts.append(p0 + t[:, None] * (p1 - p0))
    return np.vstack(pts)


def points_to_rect_distance(points: np.ndarray, obs: ObstacleRect) -> np.ndarray:
    """Exact unsigned distance from world points to the rectangle (0 inside)."""
    local = (points - obs.center()) @ rotation(obs.angle)
    dx = np.maximum(np.abs(local[:, 0]) - obs.half_length, 0.0)
    dy = np.maximum(np.abs(local[:, 1]) - obs.half_width, 0.0)
    return np.hypot(dx, dy)


def points_to_polygon_distance(points: np.ndarray, poly: ConvexPolygon) -> np.ndarray:
    """Exact unsigned distance from world points to the polygon boundary,
    zero for points inside."""
    verts = poly.vertices
    n = len(verts)
    best = np.full(len(points), np.inf)
    inside = np.ones(len(points), dtype=bool)
    for i in range(n):
        p0 = verts[i]
        e = verts[(i + 1) % n] - p0
        ee = float(e @ e)
        rel = points - p0
        t = np.clip((rel @ e) / ee, 0.0, 1.0)
        closest = p0 + t[:, None] * e
        best = np.minimum(best, np.hypot(*(points - closest).T))
        inside &= (e[0] * rel[:, 1] - e[1] * rel[:, 0]) >= 0.0
    best[inside] = 0.0
    return best


def sat_disjoint(poly: ConvexPolygon, obs: ObstacleRect) -> bool:
    """Textbook separating-axis test; True only for a strictly positive gap."""
    shapes = (poly.vertices, obs.corners())
    for verts in shapes:
        edges = np.roll(verts, -1, axis=0) - verts
        for ex, ey in edges:
            axis = np.array([ey, -ex])
            proj_a = shapes[0] @ axis
            proj_b = shapes[1] @ axis
            if proj_a.min() > proj_b.max() or proj_a.max() < proj_b.min():
                return True
    return False


def signed_clearance(
    poly: ConvexPolygon, obs: ObstacleRect, spacing: float = DEFAULT_SPACING
) -> float:
    """Signed polygon/rectangle clearance from dense boundary sampling.

    Positive: the minimum over sampled boundary points of either shape of the
    exact distance to the other shape. Negative: minus the depth of the
    deepest sampled polygon boundary point inside the rectangle (its smallest
    distance to a rectangle face).
    """
    poly_pts = sample_boundary(poly.vertices, spacing)
    rect_pts = sample_boundary(obs.corners(), spacing)
    if sat_disjoint(poly, obs):
        d_a = points_to_rect_distance(poly_pts, obs).min()
        d_b = points_to_polygon_distance(rect_pts, poly).min()
        return float(min(d_a, d_b))
    local = (poly_pts - obs.center()) @ rotation(obs.angle)
    depth = np.minimum(
        obs.half_length - np.abs(local[:, 0]), obs.half_width - np.abs(local[:, 1])
    )
    inside = depth > 0.0
    if not np.any(inside):
        return 0.0
    return -float(depth[inside].max())
