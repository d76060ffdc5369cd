"""Simplification, normalization, canonicalization and augmentation of parsed
documents into the canonical form used for training."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import geometry as geo
from .geometry import CubicBezier, GeometryError, Line, Point, Segment
from .svg_io import SvgDocument, SvgPath, path_from_segments, reverse_segments


@dataclass(frozen=True)
class PreprocessConfig:
    eta: float = 150.0                 # sharp-angle threshold, degrees
    delta: float = 5.0                 # max segment length after subdivision
    viewbox: float = 256.0
    rdp_epsilon: float = 0.5
    schneider_max_error: float = 2.0   # squared distance
    curve_sample_spacing: float = 1.0  # resampling density before refitting

    def __post_init__(self):
        if not 0 < self.eta < 180:
            raise ValueError(f"eta must be in (0, 180), got {self.eta}")
        if self.delta <= 0 or self.viewbox <= 0:
            raise ValueError("delta and viewbox must be positive")
        if self.rdp_epsilon <= 0 or self.schneider_max_error <= 0:
            raise ValueError("rdp_epsilon and schneider_max_error must be positive")


def _is_degenerate(s: Segment) -> bool:
    if isinstance(s, Line):
        return s.p1 == s.p2
    return s.p1 == s.q1 == s.q2 == s.p2


def _start_tangent(s: Segment) -> Point:
    if isinstance(s, Line):
        return s.p2 - s.p1
    for p in (s.q1, s.q2, s.p2):
        if p != s.p1:
            return p - s.p1
    return Point(0.0, 0.0)


def _end_tangent(s: Segment) -> Point:
    if isinstance(s, Line):
        return s.p2 - s.p1
    for p in (s.q2, s.q1, s.p1):
        if p != s.p2:
            return s.p2 - p
    return Point(0.0, 0.0)


def _is_sharp(prev: Segment, nxt: Segment, eta: float) -> bool:
    a, b = _end_tangent(prev), _start_tangent(nxt)
    if a.norm() == 0 or b.norm() == 0:
        return True
    return geo.tangent_angle_between(a, b) < eta


def _pieces(segs: list[Segment], closed: bool, eta: float,
            split_types: bool) -> tuple[list[list[Segment]], bool]:
    """Split a segment chain at break vertices.

    Returns the pieces and whether the single piece is an unbroken ring.
    """
    n = len(segs)

    def breaks_at(i: int) -> bool:
        prev, nxt = segs[i - 1], segs[i]
        if split_types and isinstance(prev, Line) != isinstance(nxt, Line):
            return True
        return _is_sharp(prev, nxt, eta)

    if closed:
        cuts = [i for i in range(n) if breaks_at(i)]
        if not cuts:
            return [segs], True
        segs = segs[cuts[0]:] + segs[:cuts[0]]
        cuts = [c - cuts[0] for c in cuts]
    else:
        cuts = [0] + [i for i in range(1, n) if breaks_at(i)]
    bounds = cuts + [n]
    return [segs[a:b] for a, b in zip(bounds[:-1], bounds[1:]) if b > a], False


def _clean_segments(sub: SvgPath) -> list[Segment]:
    return [s for s in sub.segments() if not _is_degenerate(s)]


def split_at_sharp_angles(path: SvgPath, eta: float = 150.0) -> list[SvgPath]:
    """Cut a path into pieces at vertices whose tangent angle is below ``eta``.

    Each piece is an open path; their concatenation traces the original
    geometry. A closed subpath without sharp vertices stays one closed piece.
    """
    out = []
    for sub in path.subpaths():
        segs = _clean_segments(sub)
        if not segs:
            continue
        pieces, ring = _pieces(segs, sub.is_closed, eta, split_types=False)
        for piece in pieces:
            out.append(path_from_segments(piece, ring, path.fill, path.visible))
    return out


# ---------------------------------------------------------------------------
# Simplification


def _simplify_lines(run: list[Line], eps: float) -> list[Segment]:
    pts = [run[0].p1] + [s.p2 for s in run]
    kept = geo.rdp_simplify(pts, eps)
    return [Line(a, b) for a, b in zip(kept[:-1], kept[1:])]


def _simplify_curves(run: list[CubicBezier], cfg: PreprocessConfig) -> list[Segment]:
    total = sum(geo.cubic_length(c) for c in run)
    n = max(4, math.ceil(total / cfg.curve_sample_spacing) + 1)
    pts = geo.sample_segments(run, n, closed=False)
    pts[0], pts[-1] = tuple(run[0].p1), tuple(run[-1].p2)
    return geo.fit_cubics_schneider([Point.of(p) for p in pts], cfg.schneider_max_error)


def subdivide_segment(seg: Segment, delta: float) -> list[Segment]:
    """Split into the fewest equal-length parts no longer than ``delta``."""
    if isinstance(seg, Line):
        n = max(1, math.ceil(seg.length() / delta - 1e-9))
        a, d = seg.p1, seg.p2 - seg.p1
        pts = [a] + [a + d * (k / n) for k in range(1, n)] + [seg.p2]
        return [Line(p, q) for p, q in zip(pts[:-1], pts[1:])]

    ts, cum = geo.cubic_length_table(seg.array(), 256)
    n = max(1, math.ceil(cum[-1] / delta - 1e-9))
    while True:
        cuts = np.interp(np.arange(1, n) * cum[-1] / n, cum, ts)
        parts, rest, t_prev = [], seg, 0.0
        for t in cuts:
            left, rest = rest.split((t - t_prev) / (1.0 - t_prev))
            parts.append(left)
            t_prev = t
        parts.append(CubicBezier(rest.p1, rest.q1, rest.q2, seg.p2))
        if all((p.p2 - p.p1).norm() <= delta for p in parts) or n > 10_000:
            return parts
        n += 1


def _simplify_subpath(sub: SvgPath, cfg: PreprocessConfig) -> list[Segment] | None:
    segs = _clean_segments(sub)
    if not segs:
        return None
    pieces, ring = _pieces(segs, sub.is_closed, cfg.eta, split_types=True)
    out: list[Segment] = []
    for piece in pieces:
        if isinstance(piece[0], Line):
            simplified = _simplify_lines(piece, cfg.rdp_epsilon)
        else:
            simplified = _simplify_curves(piece, cfg)
        for s in simplified:
            if not _is_degenerate(s):
                out.extend(subdivide_segment(s, cfg.delta))
    return out or None


def simplify_path(path: SvgPath, cfg: PreprocessConfig = PreprocessConfig()) -> SvgPath:
    """Simplify line runs with RDP and refit curve runs with Schneider's
    algorithm, never smoothing across sharp vertices; then subdivide every
    segment longer than ``cfg.delta``."""
    cmds = []
    for sub in path.subpaths():
        segs = _simplify_subpath(sub, cfg)
        if segs:
            cmds += path_from_segments(segs, sub.is_closed).commands
    return SvgPath(cmds, path.fill, path.visible)


# ---------------------------------------------------------------------------
# Normalization, canonical form, augmentation


def normalize_viewbox(doc: SvgDocument, target: float = 256.0) -> SvgDocument:
    """Scale uniformly so the longer side maps to ``target``; the shorter
    side is centered."""
    w, h = doc.viewbox
    if not (w > 0 and h > 0):
        raise GeometryError(f"degenerate viewbox {doc.viewbox}")
    s = target / max(w, h)
    ox, oy = (target - w * s) / 2.0, (target - h * s) / 2.0
    out = doc.map_points(lambda p: Point(p.x * s + ox, p.y * s + oy))
    out.viewbox = (target, target)
    return out


def _top_left_key(p: Point) -> tuple[float, float]:
    return (round(p.y, 6), p.x)


def _canonical_subpath(sub: SvgPath) -> SvgPath:
    segs = _clean_segments(sub)
    if not segs:
        return sub
    if sub.is_closed:
        if geo.chain_signed_area(segs) > 0:
            segs = reverse_segments(segs)
        k = min(range(len(segs)), key=lambda i: _top_left_key(segs[i].p1))
        return path_from_segments(segs[k:] + segs[:k], True, sub.fill, sub.visible)
    if _top_left_key(segs[-1].p2) < _top_left_key(segs[0].p1):
        segs = reverse_segments(segs)
    return path_from_segments(segs, False, sub.fill, sub.visible)


def canonicalize(path: SvgPath) -> SvgPath:
    """Closed subpaths start at their topmost-leftmost vertex and run
    clockwise; open subpaths start at the (y, x)-smaller endpoint."""
    cmds = []
    for sub in path.subpaths():
        cmds += _canonical_subpath(sub).commands
    return SvgPath(cmds, path.fill, path.visible)


def augment(doc: SvgDocument, seed: int, scale: float | None = None,
            translation: tuple[float, float] | None = None) -> SvgDocument:
    """Random scaling by s ~ U[0.8, 1.2] and translation t ~ U[-2.5, 2.5]^2.
    Explicit ``scale``/``translation`` override the draws."""
    rng = np.random.default_rng(seed)
    s = rng.uniform(0.8, 1.2)
    tx, ty = rng.uniform(-2.5, 2.5, size=2)
    if scale is not None:
        s = scale
    if translation is not None:
        tx, ty = translation
    return doc.map_points(lambda p: Point(s * p.x + tx, s * p.y + ty))


def preprocess_document(doc: SvgDocument, cfg: PreprocessConfig = PreprocessConfig()) -> SvgDocument:
    """Full pipeline: normalize the viewbox, split into one path per
    subpath, simplify, canonicalize, and drop paths that draw nothing."""
    doc = normalize_viewbox(doc, cfg.viewbox)
    paths = []
    for path in doc.paths:
        for sub in path.subpaths():
            simple = canonicalize(simplify_path(sub, cfg))
            if simple.n_drawing() > 0:
                paths.append(replace(simple, visible=True))
    return SvgDocument(paths, doc.viewbox)
