"""2D geometric primitives for the navigation simulator.

Convex polygonal obstacles, sector-shaped sensor fields of view, and the
occlusion-aware visibility queries every other module is built on.

Conventions: distances are meters, angles are radians wrapped to (-pi, pi],
polygon vertices are stored counter-clockwise. Predicates use an absolute
tolerance of ``EPS`` meters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EPS = 1e-9
_TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    w = math.fmod(theta + math.pi, _TWO_PI)
    if w <= 0.0:
        w += _TWO_PI
    return w - math.pi


@dataclass(frozen=True)
class Point2:
    """A point in the plane. Rejects non-finite coordinates."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite coordinates ({self.x}, {self.y})")

    def distance_to(self, other: "Point2") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def as_tuple(self) -> tuple[float, float]:
        return (self.x, self.y)


def _signed_area(xs: list[float], ys: list[float]) -> float:
    n = len(xs)
    s = 0.0
    for i in range(n):
        j = (i + 1) % n
        s += xs[i] * ys[j] - xs[j] * ys[i]
    return 0.5 * s


class Polygon:
    """Convex polygon with counter-clockwise vertices.

    Vertices supplied clockwise are reversed on construction. Raises
    ``ValueError`` for fewer than three vertices, non-convex input, or
    (near-)zero area. The centroid is the area centroid and is cached.
    """

    __slots__ = (
        "vertices",
        "centroid",
        "area",
        "radius",
        "_xs",
        "_ys",
        "_nx",
        "_ny",
        "_off",
        "_planes",
        "_verts_np",
    )

    def __init__(self, vertices):
        pts = [
            v if isinstance(v, Point2) else Point2(float(v[0]), float(v[1]))
            for v in vertices
        ]
        if len(pts) < 3:
            raise ValueError("polygon needs at least 3 vertices")
        xs = [p.x for p in pts]
        ys = [p.y for p in pts]
        if _signed_area(xs, ys) < 0.0:
            pts.reverse()
            xs.reverse()
            ys.reverse()
        area = _signed_area(xs, ys)
        if area <= EPS:
            raise ValueError("degenerate polygon: vanishing area")
        n = len(pts)
        for i in range(n):
            ax, ay = xs[i], ys[i]
            bx, by = xs[(i + 1) % n], ys[(i + 1) % n]
            cx, cy = xs[(i + 2) % n], ys[(i + 2) % n]
            cross = (bx - ax) * (cy - by) - (by - ay) * (cx - bx)
            if cross < -EPS:
                raise ValueError("polygon is not convex")

        # area centroid (shoelace)
        sx = sy = 0.0
        for i in range(n):
            j = (i + 1) % n
            w = xs[i] * ys[j] - xs[j] * ys[i]
            sx += (xs[i] + xs[j]) * w
            sy += (ys[i] + ys[j]) * w
        cx = sx / (6.0 * area)
        cy = sy / (6.0 * area)

        # per-edge unit outward normals: interior satisfies n.p <= off
        nx_l, ny_l, off_l = [], [], []
        for i in range(n):
            j = (i + 1) % n
            ex, ey = xs[j] - xs[i], ys[j] - ys[i]
            elen = math.hypot(ex, ey)
            if elen <= EPS:
                raise ValueError("degenerate polygon: zero-length edge")
            nx, ny = ey / elen, -ex / elen
            nx_l.append(nx)
            ny_l.append(ny)
            off_l.append(nx * xs[i] + ny * ys[i])

        self.vertices = tuple(pts)
        self.area = area
        self.centroid = Point2(cx, cy)
        self.radius = max(math.hypot(x - cx, y - cy) for x, y in zip(xs, ys))
        self._xs = xs
        self._ys = ys
        self._nx = nx_l
        self._ny = ny_l
        self._off = off_l
        self._planes = list(zip(nx_l, ny_l, off_l))
        self._verts_np = np.array([xs, ys], dtype=float).T

    # ------------------------------------------------------------------
    # scalar queries

    def contains(self, x: float, y: float) -> bool:
        """Point membership; boundary points (within EPS) count as inside."""
        c = self.centroid
        dx, dy = x - c.x, y - c.y
        r = self.radius + EPS
        if dx * dx + dy * dy > r * r:
            return False
        for nx, ny, off in self._planes:
            if nx * x + ny * y - off > EPS:
                return False
        return True

    def strictly_contains(self, x: float, y: float) -> bool:
        """Interior membership; boundary points do not count."""
        for nx, ny, off in self._planes:
            if nx * x + ny * y - off >= -EPS:
                return False
        return True

    def closest_point(self, x: float, y: float) -> tuple[float, float, float]:
        """Closest boundary point and distance; distance 0 when inside."""
        if self.contains(x, y):
            return (x, y, 0.0)
        best_d2 = math.inf
        best = (x, y)
        xs, ys = self._xs, self._ys
        n = len(xs)
        for i in range(n):
            j = (i + 1) % n
            ax, ay = xs[i], ys[i]
            ex, ey = xs[j] - ax, ys[j] - ay
            t = ((x - ax) * ex + (y - ay) * ey) / (ex * ex + ey * ey)
            t = 0.0 if t < 0.0 else (1.0 if t > 1.0 else t)
            px, py = ax + t * ex, ay + t * ey
            d2 = (x - px) ** 2 + (y - py) ** 2
            if d2 < best_d2:
                best_d2 = d2
                best = (px, py)
        return (best[0], best[1], math.sqrt(best_d2))

    def distance(self, x: float, y: float) -> float:
        return self.closest_point(x, y)[2]

    def clip(self, ax: float, ay: float, bx: float, by: float):
        """Parameter interval [t0, t1] of segment a->b inside the closed
        polygon, clamped to [0, 1]; None when the segment misses it."""
        dx, dy = bx - ax, by - ay
        t0, t1 = 0.0, 1.0
        for nx, ny, off in self._planes:
            num = nx * ax + ny * ay - off
            den = nx * dx + ny * dy
            if -1e-15 < den < 1e-15:
                if num > EPS:
                    return None
                continue
            t = -num / den
            if den > 0.0:
                if t < t1:
                    t1 = t
            else:
                if t > t0:
                    t0 = t
            if t0 > t1:
                return None
        return (t0, t1)

    def chord_through_interior(self, ax, ay, bx, by) -> bool:
        """True iff the open segment a->b crosses the polygon interior."""
        iv = self.clip(ax, ay, bx, by)
        if iv is None:
            return False
        t0, t1 = iv
        dx, dy = bx - ax, by - ay
        if (t1 - t0) * math.hypot(dx, dy) <= EPS:
            return False
        tm = 0.5 * (t0 + t1)
        return self.strictly_contains(ax + tm * dx, ay + tm * dy)

    def covered_cells(self, cell: float, x0: float, y0: float):
        """Grid cells (ix, iy) whose centers lie inside the polygon."""
        xs, ys = self._xs, self._ys
        imin = int(math.floor((min(xs) - x0) / cell))
        imax = int(math.floor((max(xs) - x0) / cell))
        jmin = int(math.floor((min(ys) - y0) / cell))
        jmax = int(math.floor((max(ys) - y0) / cell))
        out = []
        for i in range(imin, imax + 1):
            cxp = x0 + (i + 0.5) * cell
            for j in range(jmin, jmax + 1):
                if self.contains(cxp, y0 + (j + 0.5) * cell):
                    out.append((i, j))
        return out

    def to_vertex_list(self) -> list[list[float]]:
        return [[p.x, p.y] for p in self.vertices]

    def __repr__(self):
        return f"Polygon({len(self.vertices)} vertices, area={self.area:.3f})"


@dataclass(frozen=True)
class FovSector:
    """Sector-shaped sensor footprint plus a short omnidirectional ring."""

    apex: Point2
    heading: float
    aperture: float
    range: float
    ring_range: float

    def __post_init__(self):
        if not (0.0 < self.aperture <= _TWO_PI + EPS):
            raise ValueError(f"aperture out of (0, 2pi]: {self.aperture}")
        if not (0.0 < self.ring_range <= self.range + EPS):
            raise ValueError("need 0 < ring_range <= range")
        if not (-math.pi < self.heading <= math.pi + EPS):
            raise ValueError(f"heading not wrapped to (-pi, pi]: {self.heading}")


def sector_contains(sensor: FovSector, x: float, y: float) -> bool:
    """Geometric membership in the sector-or-ring footprint (no occlusion)."""
    dx, dy = x - sensor.apex.x, y - sensor.apex.y
    d = math.hypot(dx, dy)
    if d <= sensor.ring_range + EPS:
        return True
    if d > sensor.range + EPS:
        return False
    bearing = math.atan2(dy, dx)
    return abs(wrap_angle(bearing - sensor.heading)) <= 0.5 * sensor.aperture + 1e-12


# ----------------------------------------------------------------------
# module-level operations


def point_in_polygon(p: Point2, poly: Polygon) -> bool:
    """True iff p is inside poly; boundary counts as inside."""
    return poly.contains(p.x, p.y)


def distance_to_polygon(p: Point2, poly: Polygon) -> float:
    """Euclidean clearance from p to poly; 0 when p is inside."""
    return poly.distance(p.x, p.y)


def segment_clear(a: Point2, b: Point2, obstacles) -> bool:
    """True iff the open segment a->b intersects no obstacle interior.

    A degenerate segment (a == b) is clear unless the point lies strictly
    inside an obstacle.
    """
    ax, ay, bx, by = a.x, a.y, b.x, b.y
    if math.hypot(bx - ax, by - ay) <= EPS:
        return not any(o.strictly_contains(ax, ay) for o in obstacles)
    for o in obstacles:
        if o.chord_through_interior(ax, ay, bx, by):
            return False
    return True


def is_visible(target: Point2, sensor: FovSector, obstacles) -> bool:
    """Occlusion-aware visibility of target from the sensor apex."""
    if not sector_contains(sensor, target.x, target.y):
        return False
    return segment_clear(sensor.apex, target, obstacles)


def first_hit_distance(x: float, y: float, heading: float, max_range: float,
                       obstacles) -> float:
    """Distance along a ray to the first obstacle-interior entry.

    Returns math.inf when nothing is hit within max_range.
    """
    bx = x + max_range * math.cos(heading)
    by = y + max_range * math.sin(heading)
    best = math.inf
    for o in obstacles:
        iv = o.clip(x, y, bx, by)
        if iv is None:
            continue
        t0, t1 = iv
        if (t1 - t0) * max_range <= EPS:
            continue
        tm = 0.5 * (t0 + t1)
        if not o.strictly_contains(x + tm * (bx - x), y + tm * (by - y)):
            continue
        d = t0 * max_range
        if d < best:
            best = d
    return best


def random_convex_polygon(center: Point2, radius: float, n_vertices: int,
                          rng: np.random.Generator) -> Polygon:
    """Convex polygon with vertices on a circle at sorted random angles.

    Draws that come out numerically degenerate (near-collinear vertices)
    are resampled.
    """
    if n_vertices < 3:
        raise ValueError(f"need at least 3 vertices, got {n_vertices}")
    if radius <= 0.0:
        raise ValueError(f"radius must be positive, got {radius}")
    for _ in range(128):
        angles = np.sort(rng.uniform(0.0, _TWO_PI, n_vertices))
        pts = [
            (center.x + radius * math.cos(a), center.y + radius * math.sin(a))
            for a in angles
        ]
        try:
            return Polygon(pts)
        except ValueError:
            continue
    raise RuntimeError("failed to sample a non-degenerate polygon")


# ----------------------------------------------------------------------
# vectorized kernels (numpy); semantics match the scalar queries above


def clearance_many(points: np.ndarray, obstacles) -> np.ndarray:
    """Min clearance of each (N, 2) point over all obstacles; 0 inside."""
    pts = np.asarray(points, dtype=float)
    n = pts.shape[0]
    out = np.full(n, np.inf)
    for poly in obstacles:
        v = poly._verts_np
        m = v.shape[0]
        sd = np.full(n, -np.inf)
        for i in range(m):
            sd = np.maximum(sd, poly._nx[i] * pts[:, 0] + poly._ny[i] * pts[:, 1] - poly._off[i])
        inside = sd <= EPS
        dmin = np.full(n, np.inf)
        for i in range(m):
            j = (i + 1) % m
            ax, ay = v[i]
            ex, ey = v[j, 0] - ax, v[j, 1] - ay
            L2 = ex * ex + ey * ey
            t = np.clip(((pts[:, 0] - ax) * ex + (pts[:, 1] - ay) * ey) / L2, 0.0, 1.0)
            dx = pts[:, 0] - (ax + t * ex)
            dy = pts[:, 1] - (ay + t * ey)
            dmin = np.minimum(dmin, np.hypot(dx, dy))
        d = np.where(inside, 0.0, dmin)
        out = np.minimum(out, d)
    return out


def _blocked_many(apex: Point2, pts: np.ndarray, obstacles) -> np.ndarray:
    """Whether the open segment apex->point crosses any obstacle interior."""
    n = pts.shape[0]
    blocked = np.zeros(n, dtype=bool)
    ax, ay = apex.x, apex.y
    dxy = pts - np.array([ax, ay])
    seg_len = np.hypot(dxy[:, 0], dxy[:, 1])
    for poly in obstacles:
        t0 = np.zeros(n)
        t1 = np.ones(n)
        alive = np.ones(n, dtype=bool)
        for nx, ny, off in poly._planes:
            num = nx * ax + ny * ay - off
            den = nx * dxy[:, 0] + ny * dxy[:, 1]
            par = np.abs(den) < 1e-15
            alive &= ~(par & (num > EPS))
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.where(par, 0.0, -num / np.where(par, 1.0, den))
            upper = den > 0.0
            t1 = np.where(upper & ~par, np.minimum(t1, t), t1)
            t0 = np.where(~upper & ~par, np.maximum(t0, t), t0)
            alive &= t0 <= t1
        span_ok = alive & ((t1 - t0) * seg_len > EPS)
        if not span_ok.any():
            continue
        tm = 0.5 * (t0 + t1)
        mx = ax + tm * dxy[:, 0]
        my = ay + tm * dxy[:, 1]
        strict = np.ones(n, dtype=bool)
        for nx, ny, off in poly._planes:
            strict &= nx * mx + ny * my - off < -EPS
        blocked |= span_ok & strict
    return blocked


def visible_any_many(points: np.ndarray, sensors, obstacles) -> np.ndarray:
    """Whether each (N, 2) point is visible to at least one sensor."""
    pts = np.asarray(points, dtype=float)
    n = pts.shape[0]
    vis = np.zeros(n, dtype=bool)
    for s in sensors:
        todo = ~vis
        if not todo.any():
            break
        dx = pts[:, 0] - s.apex.x
        dy = pts[:, 1] - s.apex.y
        d = np.hypot(dx, dy)
        bearing = np.arctan2(dy, dx)
        diff = np.abs(np.arctan2(np.sin(bearing - s.heading), np.cos(bearing - s.heading)))
        member = (d <= s.ring_range + EPS) | (
            (d <= s.range + EPS) & (diff <= 0.5 * s.aperture + 1e-12)
        )
        cand = member & todo
        if not cand.any():
            continue
        idx = np.nonzero(cand)[0]
        blocked = _blocked_many(s.apex, pts[idx], obstacles)
        vis[idx] |= ~blocked
    return vis
