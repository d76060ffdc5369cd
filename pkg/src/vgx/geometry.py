"""2D primitives: points, cubic Bezier curves, elliptical arcs, polyline
simplification and cubic curve fitting.

All geometry is computed in float64. Quantization happens in ``tensor_repr``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class GeometryError(ValueError):
    """Invalid geometric input (domain violations, non-finite values)."""


class DegenerateArcError(GeometryError):
    pass


class EmptyGeometryError(GeometryError):
    pass


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise GeometryError(f"non-finite point ({self.x}, {self.y})")

    def __add__(self, other: Point) -> Point:
        return Point(self.x + other.x, self.y + other.y)

    def __sub__(self, other: Point) -> Point:
        return Point(self.x - other.x, self.y - other.y)

    def __mul__(self, s: float) -> Point:
        return Point(self.x * s, self.y * s)

    __rmul__ = __mul__

    def __iter__(self):
        yield self.x
        yield self.y

    def norm(self) -> float:
        return math.hypot(self.x, self.y)

    def dot(self, other: Point) -> float:
        return self.x * other.x + self.y * other.y

    @classmethod
    def of(cls, xy) -> Point:
        return cls(float(xy[0]), float(xy[1]))


@dataclass(frozen=True)
class CubicBezier:
    p1: Point
    q1: Point
    q2: Point
    p2: Point

    def array(self) -> np.ndarray:
        return np.array([tuple(self.p1), tuple(self.q1), tuple(self.q2), tuple(self.p2)])

    @classmethod
    def from_array(cls, a) -> CubicBezier:
        return cls(*(Point.of(p) for p in a))

    @classmethod
    def line(cls, a: Point, b: Point) -> CubicBezier:
        """Straight cubic with controls at the thirds of the segment."""
        d = b - a
        return cls(a, a + d * (1 / 3), a + d * (2 / 3), b)

    def reversed(self) -> CubicBezier:
        return CubicBezier(self.p2, self.q2, self.q1, self.p1)

    def split(self, t: float) -> tuple[CubicBezier, CubicBezier]:
        """De Casteljau subdivision at parameter ``t``."""
        p = self.array()
        a = p[:-1] + t * (p[1:] - p[:-1])
        b = a[:-1] + t * (a[1:] - a[:-1])
        c = b[0] + t * (b[1] - b[0])
        left = CubicBezier.from_array([p[0], a[0], b[0], c])
        right = CubicBezier.from_array([c, b[1], a[2], p[3]])
        return left, right


@dataclass(frozen=True)
class Line:
    p1: Point
    p2: Point

    def array(self) -> np.ndarray:
        return np.array([tuple(self.p1), tuple(self.p2)])

    def reversed(self) -> Line:
        return Line(self.p2, self.p1)

    def length(self) -> float:
        return (self.p2 - self.p1).norm()


Segment = Line | CubicBezier


@dataclass(frozen=True)
class EllipticalArc:
    start: Point
    rx: float
    ry: float
    phi: float
    large_arc: bool
    sweep: bool
    end: Point


@dataclass(frozen=True)
class ArcCenterForm:
    center: Point
    rx: float
    ry: float
    phi: float
    theta1: float
    delta_theta: float

    def point(self, theta: float) -> Point:
        cp, sp = math.cos(self.phi), math.sin(self.phi)
        ct, st = math.cos(theta), math.sin(theta)
        return Point(self.center.x + self.rx * cp * ct - self.ry * sp * st,
                     self.center.y + self.rx * sp * ct + self.ry * cp * st)

    def derivative(self, theta: float) -> Point:
        cp, sp = math.cos(self.phi), math.sin(self.phi)
        ct, st = math.cos(theta), math.sin(theta)
        return Point(-self.rx * cp * st - self.ry * sp * ct,
                     -self.rx * sp * st + self.ry * cp * ct)


# ---------------------------------------------------------------------------
# Bezier evaluation


def bezier_points(ctrl: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Vectorized Bernstein evaluation. ``ctrl`` is (4, 2), ``t`` is (n,)."""
    t = np.asarray(t, dtype=float)[:, None]
    mt = 1.0 - t
    return (mt ** 3 * ctrl[0] + 3 * mt ** 2 * t * ctrl[1]
            + 3 * mt * t ** 2 * ctrl[2] + t ** 3 * ctrl[3])


def bezier_derivative(ctrl: np.ndarray, t: np.ndarray) -> np.ndarray:
    d1 = 3 * (ctrl[1:] - ctrl[:-1])
    t = np.asarray(t, dtype=float)[:, None]
    mt = 1.0 - t
    return mt ** 2 * d1[0] + 2 * mt * t * d1[1] + t ** 2 * d1[2]


def eval_cubic(c: CubicBezier, t: float) -> Point:
    if not 0.0 <= t <= 1.0:
        raise GeometryError(f"bezier parameter t={t} outside [0, 1]")
    if t == 0.0:
        return c.p1
    if t == 1.0:
        return c.p2
    return Point.of(bezier_points(c.array(), np.array([t]))[0])


def cubic_length_table(ctrl: np.ndarray, subdivisions: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative chord lengths at ``subdivisions + 1`` uniform parameters."""
    t = np.linspace(0.0, 1.0, subdivisions + 1)
    pts = bezier_points(ctrl, t)
    seg = np.hypot(*np.diff(pts, axis=0).T)
    return t, np.concatenate([[0.0], np.cumsum(seg)])


def cubic_length(c: CubicBezier, subdivisions: int = 64) -> float:
    return float(cubic_length_table(c.array(), subdivisions)[1][-1])


# ---------------------------------------------------------------------------
# Elliptical arcs


def _vector_angle(ux: float, uy: float, vx: float, vy: float) -> float:
    return math.atan2(ux * vy - uy * vx, ux * vx + uy * vy)


def arc_endpoint_to_center(a: EllipticalArc) -> ArcCenterForm:
    """Convert the SVG endpoint parametrization of an arc to center form.

    Radii that are too small to span the chord are scaled up uniformly by the
    minimal factor, as SVG renderers do.
    """
    if a.rx <= 0 or a.ry <= 0:
        raise GeometryError(f"arc radii must be positive, got rx={a.rx}, ry={a.ry}")
    x1, y1 = a.start.x, a.start.y
    x2, y2 = a.end.x, a.end.y
    if x1 == x2 and y1 == y2:
        raise DegenerateArcError("arc start and end points coincide")

    cp, sp = math.cos(a.phi), math.sin(a.phi)
    dx, dy = (x1 - x2) / 2.0, (y1 - y2) / 2.0
    x1p = cp * dx + sp * dy
    y1p = -sp * dx + cp * dy

    rx, ry = abs(a.rx), abs(a.ry)
    lam = (x1p / rx) ** 2 + (y1p / ry) ** 2
    if lam > 1.0:
        s = math.sqrt(lam)
        rx, ry = rx * s, ry * s

    num = rx * rx * ry * ry - rx * rx * y1p * y1p - ry * ry * x1p * x1p
    den = rx * rx * y1p * y1p + ry * ry * x1p * x1p
    coef = math.sqrt(max(num / den, 0.0))
    if a.large_arc == a.sweep:
        coef = -coef
    cxp = coef * rx * y1p / ry
    cyp = -coef * ry * x1p / rx

    cx = cp * cxp - sp * cyp + (x1 + x2) / 2.0
    cy = sp * cxp + cp * cyp + (y1 + y2) / 2.0

    ux, uy = (x1p - cxp) / rx, (y1p - cyp) / ry
    vx, vy = (-x1p - cxp) / rx, (-y1p - cyp) / ry
    theta1 = _vector_angle(1.0, 0.0, ux, uy)
    dtheta = _vector_angle(ux, uy, vx, vy)
    if not a.sweep and dtheta > 0:
        dtheta -= 2 * math.pi
    elif a.sweep and dtheta < 0:
        dtheta += 2 * math.pi
    return ArcCenterForm(Point(cx, cy), rx, ry, a.phi, theta1, dtheta)


# One cubic per quarter sweep leaves ~2e-3 r radial error; a third of pi
# keeps it near 2e-4 r.
ARC_MAX_SWEEP = math.pi / 3


def arc_to_cubics(a: EllipticalArc, max_sweep: float = ARC_MAX_SWEEP) -> list[CubicBezier]:
    """Approximate an elliptical arc by cubics, one per sweep of at most
    ``max_sweep`` radians. Chain endpoints match the arc endpoints exactly."""
    form = arc_endpoint_to_center(a)
    n = max(1, math.ceil(abs(form.delta_theta) / max_sweep - 1e-9))
    step = form.delta_theta / n
    alpha = math.sin(step) * (math.sqrt(4 + 3 * math.tan(step / 2) ** 2) - 1) / 3

    curves = []
    prev = a.start
    for k in range(n):
        t1 = form.theta1 + k * step
        t2 = t1 + step
        p2 = a.end if k == n - 1 else form.point(t2)
        q1 = prev + form.derivative(t1) * alpha
        q2 = p2 - form.derivative(t2) * alpha
        curves.append(CubicBezier(prev, q1, q2, p2))
        prev = p2
    return curves


# ---------------------------------------------------------------------------
# Polyline simplification


def point_segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance of each row of ``p`` to segment ``ab``."""
    p = np.atleast_2d(p)
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.hypot(*(p - a).T)
    t = np.clip((p - a) @ ab / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.hypot(*(p - proj).T)


def rdp_indices(pts: np.ndarray, epsilon: float) -> list[int]:
    """Indices kept by Ramer-Douglas-Peucker on an (n, 2) array."""
    n = len(pts)
    if n <= 2:
        return list(range(n))
    keep = np.zeros(n, dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, n - 1)]
    while stack:
        lo, hi = stack.pop()
        if hi - lo < 2:
            continue
        d = point_segment_distance(pts[lo + 1:hi], pts[lo], pts[hi])
        k = int(np.argmax(d))
        if d[k] > epsilon:
            mid = lo + 1 + k
            keep[mid] = True
            stack.append((lo, mid))
            stack.append((mid, hi))
    return [int(i) for i in np.flatnonzero(keep)]


def rdp_simplify(points: Sequence[Point], epsilon: float) -> list[Point]:
    if epsilon <= 0:
        raise GeometryError(f"epsilon must be positive, got {epsilon}")
    if len(points) < 2:
        raise GeometryError("rdp_simplify needs at least 2 points")
    pts = np.array([tuple(p) for p in points], dtype=float)
    return [points[i] for i in rdp_indices(pts, epsilon)]


# ---------------------------------------------------------------------------
# Schneider curve fitting (Graphics Gems, 1990)


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.hypot(*v)
    return v / n if n > 0 else v


def _chord_params(pts: np.ndarray) -> np.ndarray:
    d = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(pts, axis=0).T))])
    return d / d[-1] if d[-1] > 0 else np.linspace(0, 1, len(pts))


def _generate_bezier(pts, u, t_left, t_right) -> np.ndarray:
    first, last = pts[0], pts[-1]
    b0, b1, b2, b3 = (1 - u) ** 3, 3 * u * (1 - u) ** 2, 3 * u ** 2 * (1 - u), u ** 3
    a1 = b1[:, None] * t_left
    a2 = b2[:, None] * t_right
    c = np.array([[np.sum(a1 * a1), np.sum(a1 * a2)],
                  [np.sum(a1 * a2), np.sum(a2 * a2)]])
    tmp = pts - (np.outer(b0 + b1, first) + np.outer(b2 + b3, last))
    x = np.array([np.sum(a1 * tmp), np.sum(a2 * tmp)])

    det = c[0, 0] * c[1, 1] - c[0, 1] * c[1, 0]
    alpha_l = alpha_r = 0.0
    if abs(det) > 1e-12:
        alpha_l = (x[0] * c[1, 1] - x[1] * c[0, 1]) / det
        alpha_r = (c[0, 0] * x[1] - c[1, 0] * x[0]) / det

    seg_len = np.hypot(*(last - first))
    eps = 1e-6 * seg_len
    if alpha_l < eps or alpha_r < eps:
        # Wu/Barsky heuristic
        alpha_l = alpha_r = seg_len / 3.0
    return np.array([first, first + alpha_l * t_left, last + alpha_r * t_right, last])


def _newton_reparam(ctrl: np.ndarray, pts: np.ndarray, u: np.ndarray) -> np.ndarray:
    d1 = 3 * (ctrl[1:] - ctrl[:-1])
    d2 = 2 * (d1[1:] - d1[:-1])
    q = bezier_points(ctrl, u)
    q1 = bezier_derivative(ctrl, u)
    q2 = (1 - u)[:, None] * d2[0] + u[:, None] * d2[1]
    diff = q - pts
    num = np.sum(diff * q1, axis=1)
    den = np.sum(q1 * q1, axis=1) + np.sum(diff * q2, axis=1)
    safe = np.abs(den) > 1e-12
    out = u.copy()
    out[safe] = u[safe] - num[safe] / den[safe]
    return np.clip(out, 0.0, 1.0)


def _max_error(ctrl, pts, u) -> tuple[float, int]:
    d = np.sum((bezier_points(ctrl, u) - pts) ** 2, axis=1)
    k = int(np.argmax(d))
    return float(d[k]), k


def _fit_cubic(pts, t_left, t_right, error, max_iter=20) -> list[np.ndarray]:
    if len(pts) == 2:
        dist = np.hypot(*(pts[1] - pts[0])) / 3.0
        return [np.array([pts[0], pts[0] + t_left * dist, pts[1] + t_right * dist, pts[1]])]

    u = _chord_params(pts)
    ctrl = _generate_bezier(pts, u, t_left, t_right)
    err, split = _max_error(ctrl, pts, u)
    if err < error:
        return [ctrl]

    # chord-length parameters can be far off for unevenly spaced samples, so
    # always try reparametrizing before splitting
    first_split = split
    for _ in range(max_iter):
        u = _newton_reparam(ctrl, pts, u)
        ctrl = _generate_bezier(pts, u, t_left, t_right)
        err, split = _max_error(ctrl, pts, u)
        if err < error:
            return [ctrl]
    split = first_split

    split = min(max(split, 1), len(pts) - 2)
    t_center = _unit(pts[split - 1] - pts[split + 1])
    if not np.any(t_center):
        t_center = _unit(pts[split - 1] - pts[split])
    return (_fit_cubic(pts[:split + 1], t_left, t_center, error, max_iter)
            + _fit_cubic(pts[split:], -t_center, t_right, error, max_iter))


def fit_cubics_schneider(points: Sequence[Point], max_error: float) -> list[CubicBezier]:
    """Piecewise cubic fit of a point sequence.

    ``max_error`` bounds the squared distance of every input point to the fit
    (at its fitted parameter). Endpoints are interpolated exactly.
    """
    if max_error <= 0:
        raise GeometryError(f"max_error must be positive, got {max_error}")
    if len(points) < 2:
        raise GeometryError("fit_cubics_schneider needs at least 2 points")
    pts = np.array([tuple(p) for p in points], dtype=float)
    keep = np.concatenate([[True], np.any(np.diff(pts, axis=0) != 0, axis=1)])
    pts = pts[keep]
    if len(pts) < 2:
        p = points[0]
        return [CubicBezier(p, p, p, p)]
    t_left = _unit(pts[1] - pts[0])
    t_right = _unit(pts[-2] - pts[-1])
    curves = []
    for ctrl in _fit_cubic(pts, t_left, t_right, max_error):
        curves.append(CubicBezier.from_array(ctrl))
    # snap endpoints to the exact inputs
    first, last = curves[0], curves[-1]
    curves[0] = CubicBezier(points[0], first.q1, first.q2, first.p2)
    last = curves[-1]
    curves[-1] = CubicBezier(last.p1, last.q1, last.q2, points[-1])
    return curves


# ---------------------------------------------------------------------------
# Angles, areas


def tangent_angle_between(in_tangent: Point, out_tangent: Point) -> float:
    """Vertex angle in degrees: 180 for a straight continuation, 0 for a
    full hairpin turn."""
    na, nb = in_tangent.norm(), out_tangent.norm()
    if na == 0 or nb == 0:
        raise GeometryError("tangent vectors must be nonzero")
    cos = max(-1.0, min(1.0, in_tangent.dot(out_tangent) / (na * nb)))
    return 180.0 - math.degrees(math.acos(cos))


def signed_area(points: np.ndarray | Iterable) -> float:
    """Shoelace area of a closed ring on a y-down canvas.

    Negative when the ring runs clockwise as displayed, positive when
    counterclockwise.
    """
    p = np.asarray(points, dtype=float)
    if len(p) < 3:
        return 0.0
    x, y = p[:, 0], p[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    return float(0.5 * np.sum((xn - x) * (yn + y)))


_GL_NODES = 0.5 + 0.5 * np.array([-math.sqrt(0.6), 0.0, math.sqrt(0.6)])
_GL_WEIGHTS = np.array([5.0, 8.0, 5.0]) / 18.0


def chain_signed_area(segments: Sequence[Segment]) -> float:
    """Exact signed area of a segment chain closed by a line back to its
    start, with the same sign convention as :func:`signed_area`.

    Integrates y dx per segment; three Gauss-Legendre nodes are exact for
    the quintic integrand of a cubic.
    """
    if not segments:
        return 0.0
    total = 0.0
    chain = list(segments)
    if chain[-1].p2 != chain[0].p1:
        chain.append(Line(chain[-1].p2, chain[0].p1))
    for s in chain:
        if isinstance(s, Line):
            total += (s.p2.x - s.p1.x) * (s.p2.y + s.p1.y) / 2.0
            continue
        c = s.array()
        pts = bezier_points(c, _GL_NODES)
        d = bezier_derivative(c, _GL_NODES)
        total += float(np.sum(_GL_WEIGHTS * pts[:, 1] * d[:, 0]))
    return total


def point_in_polygon(p: np.ndarray, poly: np.ndarray) -> bool:
    """Even-odd ray casting test."""
    x, y = p
    inside = False
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if xc > x:
                inside = not inside
    return inside


# ---------------------------------------------------------------------------
# Arc-length sampling


def _segment_table(seg: Segment, subdivisions: int) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(seg, Line):
        return np.array([0.0, 1.0]), np.array([0.0, seg.length()])
    return cubic_length_table(seg.array(), subdivisions)


def _segment_at(seg: Segment, t: np.ndarray) -> np.ndarray:
    if isinstance(seg, Line):
        a = seg.array()
        return a[0] + np.asarray(t)[:, None] * (a[1] - a[0])
    return bezier_points(seg.array(), t)


def sample_segments(segments: Sequence[Segment], n: int, closed: bool = False,
                    subdivisions: int = 64) -> np.ndarray:
    """``n`` points spread uniformly in arc length over a chain of segments.

    Open chains include both ends (spacing L/(n-1)); closed chains omit the
    duplicated end point (spacing L/n).
    """
    if not segments:
        raise EmptyGeometryError("no drawable segments")
    if n < 2:
        raise GeometryError(f"need at least 2 samples, got {n}")
    tables = [_segment_table(s, subdivisions) for s in segments]
    lengths = np.array([tab[1][-1] for tab in tables])
    starts = np.concatenate([[0.0], np.cumsum(lengths)])
    total = starts[-1]
    if total == 0.0:
        return np.repeat(np.array([tuple(segments[0].p1)]), n, axis=0)

    step = total / n if closed else total / (n - 1)
    targets = np.minimum(np.arange(n) * step, total)
    seg_idx = np.clip(np.searchsorted(starts, targets, side="right") - 1, 0, len(segments) - 1)
    out = np.empty((n, 2))
    for k in np.unique(seg_idx):
        sel = seg_idx == k
        ts, cum = tables[k]
        local = targets[sel] - starts[k]
        if cum[-1] > 0:
            t = np.interp(local, cum, ts)
        else:
            t = np.zeros(local.shape)
        out[sel] = _segment_at(segments[k], t)
    return out


def sample_path_points(path, n: int) -> list[Point]:
    """Arc-length-uniform samples along a path's drawn segments (lines,
    curves and implicit closing lines)."""
    pts = sample_segments(path.segments(), n, closed=path.is_closed)
    return [Point.of(p) for p in pts]
