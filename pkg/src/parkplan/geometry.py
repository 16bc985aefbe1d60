"""Planar geometry primitives: rotations, vehicle rectangles, swept hulls and
closest-distance queries between convex polygons and oriented rectangles."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Vertices closer than this to the line through their neighbours are dropped.
COLLINEAR_TOL = 1e-9

# Default half-width of the corner band that triggers diagonal push directions.
DEFAULT_CORNER_EPS = 0.05


class DegeneratePolygonError(ValueError):
    """Polygon has fewer than 3 non-collinear vertices."""


@dataclass(frozen=True)
class Pose2:
    """Planar pose. Heading is counterclockwise from +x, in radians, unwrapped."""

    x: float
    y: float
    theta: float

    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class VehicleGeometry:
    """Rectangular vehicle footprint referenced to the rear-axle center.

    The body frame spans [-rear_overhang, wheel_base + front_overhang] along x
    and [-width/2, width/2] along y.
    """

    wheel_base: float
    front_overhang: float
    rear_overhang: float
    width: float

    def __post_init__(self) -> None:
        for name in ("wheel_base", "front_overhang", "rear_overhang", "width"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"vehicle {name} must be strictly positive")

    @property
    def total_length(self) -> float:
        return self.wheel_base + self.front_overhang + self.rear_overhang

    @property
    def front_extent(self) -> float:
        return self.wheel_base + self.front_overhang

    @property
    def circumradius(self) -> float:
        """Radius of the smallest rear-axle-centered circle containing the body."""
        reach = max(self.front_extent, self.rear_overhang)
        return math.hypot(reach, 0.5 * self.width)


@dataclass(frozen=True)
class ObstacleRect:
    """Oriented rectangular obstacle described by half-extents."""

    cx: float
    cy: float
    half_length: float
    half_width: float
    angle: float

    def __post_init__(self) -> None:
        if not (self.half_length > 0.0 and self.half_width > 0.0):
            raise ValueError("obstacle half-extents must be strictly positive")

    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy])

    def corners(self) -> np.ndarray:
        """World-frame corners, counterclockwise."""
        local = np.array(
            [
                [self.half_length, -self.half_width],
                [self.half_length, self.half_width],
                [-self.half_length, self.half_width],
                [-self.half_length, -self.half_width],
            ]
        )
        return local @ rotation(self.angle).T + self.center()


@dataclass(frozen=True)
class ClosestResult:
    """Closest-point query result, expressed in the obstacle frame.

    distance is signed: positive clearance, negative penetration.
    direction is a unit vector; displacing the polygon along it (mapped back to
    the world frame) increases the distance.
    """

    distance: float
    closest_point: np.ndarray
    direction: np.ndarray


def rotation(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def rotate_to_frame(point, obs: ObstacleRect) -> np.ndarray:
    """Map a world point into the obstacle's principal coordinate frame."""
    return rotation(obs.angle).T @ (np.asarray(point, dtype=float) - obs.center())


def frame_to_world(point, obs: ObstacleRect) -> np.ndarray:
    """Inverse of :func:`rotate_to_frame`."""
    return rotation(obs.angle) @ np.asarray(point, dtype=float) + obs.center()


class ConvexPolygon:
    """Strictly convex polygon with counterclockwise vertex order."""

    def __init__(self, vertices) -> None:
        verts = np.asarray(vertices, dtype=float)
        if verts.ndim != 2 or verts.shape[1] != 2 or verts.shape[0] < 3:
            raise DegeneratePolygonError("polygon needs at least 3 vertices")
        if _signed_area(verts) < 0.0:
            verts = verts[::-1].copy()
        verts = _drop_collinear(verts)
        if verts.shape[0] < 3:
            raise DegeneratePolygonError("polygon collapses to fewer than 3 vertices")
        cross = _edge_crosses(verts)
        if np.any(cross <= 0.0):
            raise DegeneratePolygonError("vertices are not in convex position")
        self.vertices = verts

    def __len__(self) -> int:
        return len(self.vertices)

    def edges(self) -> np.ndarray:
        return np.roll(self.vertices, -1, axis=0) - self.vertices

    def contains(self, point, tol: float = 1e-9) -> bool:
        p = np.asarray(point, dtype=float)
        v = self.vertices
        e = self.edges()
        rel = p - v
        return bool(np.all(e[:, 0] * rel[:, 1] - e[:, 1] * rel[:, 0] >= -tol))


def _signed_area(verts: np.ndarray) -> float:
    x, y = verts[:, 0], verts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _edge_crosses(verts: np.ndarray) -> np.ndarray:
    e = np.roll(verts, -1, axis=0) - verts
    e_next = np.roll(e, -1, axis=0)
    return e[:, 0] * e_next[:, 1] - e[:, 1] * e_next[:, 0]


def _drop_collinear(verts: np.ndarray) -> np.ndarray:
    keep = []
    n = len(verts)
    for i in range(n):
        a = verts[i - 1]
        b = verts[i]
        c = verts[(i + 1) % n]
        ab = b - a
        ac = c - a
        norm = np.hypot(*ac)
        # Distance of b from the chord a-c; degenerate chords keep the vertex.
        dist = abs(ab[0] * ac[1] - ab[1] * ac[0]) / norm if norm > 0.0 else np.inf
        if dist > COLLINEAR_TOL:
            keep.append(i)
    return verts[keep] if keep else verts[:0]


def convex_hull(points) -> ConvexPolygon:
    """Convex hull (Andrew monotone chain), collinear points dropped."""
    pts = np.unique(np.asarray(points, dtype=float), axis=0)
    if len(pts) < 3:
        raise DegeneratePolygonError("hull needs at least 3 distinct points")
    # np.unique sorts lexicographically, which is what the chain needs.
    def half(points_iter):
        chain: list[np.ndarray] = []
        for p in points_iter:
            while len(chain) >= 2:
                a, b = chain[-2], chain[-1]
                if (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) <= COLLINEAR_TOL:
                    chain.pop()
                else:
                    break
            chain.append(p)
        return chain

    lower = half(pts)
    upper = half(pts[::-1])
    hull = np.array(lower[:-1] + upper[:-1])
    return ConvexPolygon(hull)


def vehicle_rectangle(pose: Pose2, geom: VehicleGeometry) -> ConvexPolygon:
    """Vehicle footprint at a pose; reference point is the rear-axle center."""
    body = np.array(
        [
            [-geom.rear_overhang, -0.5 * geom.width],
            [geom.front_extent, -0.5 * geom.width],
            [geom.front_extent, 0.5 * geom.width],
            [-geom.rear_overhang, 0.5 * geom.width],
        ]
    )
    world = body @ rotation(pose.theta).T + pose.position()
    return ConvexPolygon(world)


def swept_hull(pose_k: Pose2, pose_k1: Pose2, geom: VehicleGeometry) -> ConvexPolygon:
    """Convex hull of the vehicle rectangles at two adjacent poses.

    Covers the sliver between consecutive footprints so that per-waypoint
    clearance constraints also protect the motion in between.
    """
    rect_k = vehicle_rectangle(pose_k, geom)
    rect_k1 = vehicle_rectangle(pose_k1, geom)
    return convex_hull(np.vstack([rect_k.vertices, rect_k1.vertices]))


def _sign(v: float) -> float:
    return 1.0 if v >= 0.0 else -1.0


def _clamp_to_box(p: np.ndarray, a: float, b: float) -> np.ndarray:
    return np.array([min(max(p[0], -a), a), min(max(p[1], -b), b)])


def _segment_segment_closest(p0, p1, q0, q1):
    """Closest approach of two segments; returns (distance, point on first)."""
    d1 = p1 - p0
    d2 = q1 - q0
    r = p0 - q0
    a = float(d1 @ d1)
    e = float(d2 @ d2)
    f = float(d2 @ r)
    c = float(d1 @ r)
    b = float(d1 @ d2)
    denom = a * e - b * b
    if denom > 1e-14:
        s = min(max((b * f - c * e) / denom, 0.0), 1.0)
    else:
        s = 0.0
    t = (b * s + f) / e if e > 1e-14 else 0.0
    if t < 0.0:
        t = 0.0
        s = min(max(-c / a, 0.0), 1.0) if a > 1e-14 else 0.0
    elif t > 1.0:
        t = 1.0
        s = min(max((b - c) / a, 0.0), 1.0) if a > 1e-14 else 0.0
    cp = p0 + s * d1
    cq = q0 + t * d2
    return float(np.hypot(*(cp - cq))), cp


def _box_disjoint(verts: np.ndarray, a: float, b: float) -> bool:
    """Separating-axis test of a convex polygon against [-a,a]x[-b,b].

    True only for a strictly positive gap; touching counts as contact.
    """
    if np.min(verts[:, 0]) > a or np.max(verts[:, 0]) < -a:
        return True
    if np.min(verts[:, 1]) > b or np.max(verts[:, 1]) < -b:
        return True
    edges = np.roll(verts, -1, axis=0) - verts
    normals = np.stack([edges[:, 1], -edges[:, 0]], axis=1)
    lengths = np.hypot(normals[:, 0], normals[:, 1])
    normals = normals[lengths > 0.0] / lengths[lengths > 0.0, None]
    box = np.array([[a, -b], [a, b], [-a, b], [-a, -b]])
    for n in normals:
        poly_proj = verts @ n
        box_proj = box @ n
        if np.min(poly_proj) > np.max(box_proj) or np.max(poly_proj) < np.min(box_proj):
            return True
    return False


def _segment_box_span(p0: np.ndarray, p1: np.ndarray, a: float, b: float):
    """Liang-Barsky clip of segment p0-p1 against the box; (t0, t1) or None."""
    d = p1 - p0
    t0, t1 = 0.0, 1.0
    for delta, lo, hi in ((d[0], -a - p0[0], a - p0[0]), (d[1], -b - p0[1], b - p0[1])):
        if abs(delta) < 1e-15:
            if lo > 0.0 or hi < 0.0:
                return None
            continue
        ta, tb = lo / delta, hi / delta
        if ta > tb:
            ta, tb = tb, ta
        t0 = max(t0, ta)
        t1 = min(t1, tb)
        if t0 > t1:
            return None
    return t0, t1


def polygon_rect_closest(
    poly: ConvexPolygon, obs: ObstacleRect, corner_eps: float = DEFAULT_CORNER_EPS
) -> ClosestResult:
    """Signed clearance between a convex polygon and an oriented rectangle.

    Disjoint shapes: distance is the Euclidean gap, the closest point is the
    polygon point realizing it and the direction is the outward gradient of
    the gap with respect to that point. Overlapping shapes: the reference
    point is the average of the vertices inside the rectangle (else the
    midpoint of a crossing edge's chord), the direction pushes out through
    the face of minimal penetration, snapped to the diagonal within
    corner_eps of a corner, and the distance is the (negative) depth of the
    reference point along that direction.
    """
    a, b = obs.half_length, obs.half_width
    # All vertices into the obstacle frame at once.
    g = (poly.vertices - obs.center()) @ rotation(obs.angle)

    if _box_disjoint(g, a, b):
        box = np.array([[a, -b], [a, b], [-a, b], [-a, -b]])
        best_d = np.inf
        best_p = g[0]
        npoly = len(g)
        for i in range(npoly):
            p0, p1 = g[i], g[(i + 1) % npoly]
            for j in range(4):
                d, cp = _segment_segment_closest(p0, p1, box[j], box[(j + 1) % 4])
                if d < best_d:
                    best_d = d
                    best_p = cp
        gap = best_p - _clamp_to_box(best_p, a, b)
        norm = float(np.hypot(*gap))
        direction = gap / norm if norm > 0.0 else np.array([1.0, 0.0])
        return ClosestResult(best_d, best_p, direction)

    # Overlap / contact. Pick a representative point inside the rectangle.
    inside = g[(np.abs(g[:, 0]) < a) & (np.abs(g[:, 1]) < b)]
    if len(inside) > 0:
        ref = inside.mean(axis=0)
    else:
        ref = None
        npoly = len(g)
        for i in range(npoly):
            span = _segment_box_span(g[i], g[(i + 1) % npoly], a, b)
            if span is not None and span[1] - span[0] > 1e-12:
                t_mid = 0.5 * (span[0] + span[1])
                ref = g[i] + t_mid * (g[(i + 1) % npoly] - g[i])
                break
        if ref is None:
            e = np.roll(g, -1, axis=0) - g
            origin_inside = bool(np.all(e[:, 0] * (-g[:, 1]) - e[:, 1] * (-g[:, 0]) >= -1e-9))
            if origin_inside:
                # Rectangle swallowed whole; anchor at its center.
                ref = np.zeros(2)
            else:
                # Grazing contact: fall back to the nearest polygon vertex.
                depth = np.maximum(np.abs(g[:, 0]) - a, np.abs(g[:, 1]) - b)
                ref = _clamp_to_box(g[int(np.argmin(depth))], a, b)

    sx, sy = _sign(float(ref[0])), _sign(float(ref[1]))
    depth_x = a - abs(ref[0])
    depth_y = b - abs(ref[1])
    if max(abs(depth_x), abs(depth_y)) <= corner_eps:
        direction = np.array([sx, sy]) / math.sqrt(2.0)
    elif depth_x <= depth_y:
        direction = np.array([sx, 0.0])
    else:
        direction = np.array([0.0, sy])
    dist = float(direction @ (ref - np.array([a * sx, b * sy])))
    return ClosestResult(dist, ref, direction)
