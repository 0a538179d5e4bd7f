"""Oriented-rectangle geometry on the LiDAR ground plane.

Boxes are rectangles given by center, extents and heading; polygons are
counterclockwise vertex arrays. Everything here is a pure function of its
inputs: lengths in meters, angles in radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "BoxBEV",
    "Polygon2D",
    "DegenerateInput",
    "normalize_angle",
    "box_corners",
    "rotated_iou",
    "convex_hull",
    "points_in_box",
    "sample_perimeter_points",
]

# Intersections thinner than this (in m^2) are treated as touching, not overlapping.
_AREA_EPS = 1e-12


class DegenerateInput(ValueError):
    """Point set has no 2D extent: fewer than 3 distinct points, or all collinear."""


def normalize_angle(theta):
    """Wrap an angle into (-pi, pi]."""
    t = math.fmod(float(theta), 2.0 * math.pi)
    if t <= -math.pi:
        t += 2.0 * math.pi
    elif t > math.pi:
        t -= 2.0 * math.pi
    return t


@dataclass(frozen=True)
class BoxBEV:
    """Oriented BEV rectangle: center (cx, cy), length l along heading theta, width w."""

    cx: float
    cy: float
    l: float
    w: float
    theta: float

    def __post_init__(self):
        if not (self.l > 0.0 and self.w > 0.0):
            raise ValueError(f"box extents must be positive, got l={self.l}, w={self.w}")
        object.__setattr__(self, "cx", float(self.cx))
        object.__setattr__(self, "cy", float(self.cy))
        object.__setattr__(self, "l", float(self.l))
        object.__setattr__(self, "w", float(self.w))
        object.__setattr__(self, "theta", normalize_angle(self.theta))

    @property
    def area(self):
        return self.l * self.w

    @property
    def perimeter(self):
        return 2.0 * (self.l + self.w)

    def as_vector(self):
        """Parameters as a (5,) array in (cx, cy, l, w, theta) order."""
        return np.array([self.cx, self.cy, self.l, self.w, self.theta], dtype=float)

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=float)
        return cls(v[0], v[1], v[2], v[3], v[4])


@dataclass(frozen=True, eq=False)
class Polygon2D:
    """Simple polygon with counterclockwise vertices (positive signed area)."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise ValueError("polygon needs an (N>=3, 2) vertex array")
        object.__setattr__(self, "vertices", v)
        if self.area <= 0.0:
            raise ValueError("polygon vertices must wind counterclockwise")

    @property
    def area(self):
        return _shoelace(self.vertices)


def _shoelace(v):
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def box_corners(b: BoxBEV) -> Polygon2D:
    """Corner polygon, counterclockwise starting at the front-left corner."""
    c, s = math.cos(b.theta), math.sin(b.theta)
    hl, hw = 0.5 * b.l, 0.5 * b.w
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return Polygon2D(local @ rot.T + np.array([b.cx, b.cy]))


def _line_intersection(a, b, p, q):
    """Point where segment p->q crosses the infinite line through a->b."""
    d1 = b - a
    d2 = q - p
    den = d2[0] * d1[1] - d2[1] * d1[0]
    if den == 0.0:
        return p
    s = ((a[0] - p[0]) * d1[1] - (a[1] - p[1]) * d1[0]) / den
    return p + s * d2


def _clip_convex(subject, clip):
    """Sutherland-Hodgman clip of a convex CCW subject by a convex CCW polygon.

    Returns the intersection vertex array, or None when it is empty or
    degenerate. Points on a clip edge count as inside.
    """
    eps = 1e-12
    output = [subject[i] for i in range(len(subject))]
    n = len(clip)
    for i in range(n):
        if not output:
            return None
        a = clip[i]
        b = clip[(i + 1) % n]
        ex, ey = b[0] - a[0], b[1] - a[1]
        polygon = output
        output = []
        prev = polygon[-1]
        prev_in = ex * (prev[1] - a[1]) - ey * (prev[0] - a[0]) >= -eps
        for cur in polygon:
            cur_in = ex * (cur[1] - a[1]) - ey * (cur[0] - a[0]) >= -eps
            if cur_in:
                if not prev_in:
                    output.append(_line_intersection(a, b, prev, cur))
                output.append(cur)
            elif prev_in:
                output.append(_line_intersection(a, b, prev, cur))
            prev, prev_in = cur, cur_in
    if len(output) < 3:
        return None
    return np.asarray(output, dtype=float)


def rotated_iou(a: BoxBEV, b: BoxBEV) -> float:
    """Intersection-over-union of two oriented boxes via convex polygon clipping.

    Arguments are put into a canonical order first, so the result is exactly
    symmetric. Touching boxes (zero-area overlap) score 0.
    """
    ka = (a.cx, a.cy, a.l, a.w, a.theta)
    kb = (b.cx, b.cy, b.l, b.w, b.theta)
    if kb < ka:
        a, b = b, a
    inter = _clip_convex(box_corners(a).vertices, box_corners(b).vertices)
    if inter is None:
        return 0.0
    ia = _shoelace(inter)
    if ia <= _AREA_EPS:
        return 0.0
    return float(ia / (a.area + b.area - ia))


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points) -> Polygon2D:
    """Convex hull by Andrew's monotone chain, counterclockwise.

    Collinear boundary points are dropped, so the vertex set is minimal.
    Raises DegenerateInput for fewer than 3 distinct points or a fully
    collinear set.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must form an (N, 2) array")
    uniq = np.unique(pts, axis=0)  # lexicographic sort as a side effect
    if uniq.shape[0] < 3:
        raise DegenerateInput("need at least 3 distinct points")

    def build(chain_pts):
        chain = []
        for p in chain_pts:
            while len(chain) >= 2 and _cross(chain[-2], chain[-1], p) <= 0.0:
                chain.pop()
            chain.append(p)
        return chain

    lower = build(uniq)
    upper = build(uniq[::-1])
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        raise DegenerateInput("all points are collinear")
    return Polygon2D(np.asarray(hull))


def points_in_box(b: BoxBEV, points, margin: float = 0.0) -> np.ndarray:
    """Indices of BEV points inside the box dilated by `margin` per side.

    Points are rotated into the box frame and tested against the axis-aligned
    extents; the boundary counts as inside.
    """
    if margin < 0.0:
        raise ValueError("margin must be >= 0")
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    c, s = math.cos(b.theta), math.sin(b.theta)
    dx = pts[:, 0] - b.cx
    dy = pts[:, 1] - b.cy
    u = c * dx + s * dy
    v = -s * dx + c * dy
    keep = (np.abs(u) <= 0.5 * b.l + margin) & (np.abs(v) <= 0.5 * b.w + margin)
    return np.nonzero(keep)[0]


def sample_perimeter_points(b: BoxBEV, k: int) -> np.ndarray:
    """K points at arc-length-uniform offsets around the box perimeter.

    Sample j sits at arc length (j + 0.5) / k of the perimeter, measured
    counterclockwise from the front-left corner. Deterministic.
    """
    if k < 4:
        raise ValueError("need at least 4 perimeter samples")
    corners = box_corners(b).vertices
    lengths = np.array([b.l, b.w, b.l, b.w])
    starts = np.concatenate([[0.0], np.cumsum(lengths)])
    t = (np.arange(k) + 0.5) / k * b.perimeter
    edge = np.minimum(np.searchsorted(starts, t, side="right") - 1, 3)
    frac = (t - starts[edge]) / lengths[edge]
    p0 = corners[edge]
    p1 = corners[(edge + 1) % 4]
    return p0 + frac[:, None] * (p1 - p0)
