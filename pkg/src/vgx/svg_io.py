"""SVG subset parsing and serialization.

Every input construct (basic shapes, relative and shorthand path letters,
elliptical arcs) is reduced to absolute ``M``/``L``/``C``/``Z`` commands.
"""

from __future__ import annotations

import math
import re
import warnings
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import geometry as geo
from .geometry import CubicBezier, EllipticalArc, Line, Point, Segment


class CommandKind(IntEnum):
    SOS = 0
    M = 1
    L = 2
    C = 3
    Z = 4
    EOS = 5


class FillMode(IntEnum):
    OUTLINE = 0
    FILL = 1
    ERASE = 2


UNUSED = -1.0
NO_ARGS = (UNUSED,) * 6

# Argument slots (qx1, qy1, qx2, qy2, x2, y2) used by each command kind.
SLOT_MASK: dict[CommandKind, tuple[bool, ...]] = {
    CommandKind.SOS: (False,) * 6,
    CommandKind.M: (False, False, False, False, True, True),
    CommandKind.L: (False, False, False, False, True, True),
    CommandKind.C: (True,) * 6,
    CommandKind.Z: (False,) * 6,
    CommandKind.EOS: (False,) * 6,
}


class SvgParseError(ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)
        self.line = line
        self.column = column


class PathDataError(SvgParseError):
    pass


class UnsupportedSvgWarning(UserWarning):
    pass


@dataclass(frozen=True)
class DrawCommand:
    kind: CommandKind
    args: tuple[float, ...] = NO_ARGS

    @classmethod
    def move(cls, p: Point) -> DrawCommand:
        return cls(CommandKind.M, (UNUSED,) * 4 + (p.x, p.y))

    @classmethod
    def line(cls, p: Point) -> DrawCommand:
        return cls(CommandKind.L, (UNUSED,) * 4 + (p.x, p.y))

    @classmethod
    def cubic(cls, q1: Point, q2: Point, p: Point) -> DrawCommand:
        return cls(CommandKind.C, (q1.x, q1.y, q2.x, q2.y, p.x, p.y))

    @classmethod
    def close(cls) -> DrawCommand:
        return cls(CommandKind.Z)

    @property
    def end(self) -> Point:
        return Point(self.args[4], self.args[5])

    @property
    def ctrl1(self) -> Point:
        return Point(self.args[0], self.args[1])

    @property
    def ctrl2(self) -> Point:
        return Point(self.args[2], self.args[3])

    def map_points(self, fn: Callable[[Point], Point]) -> DrawCommand:
        if self.kind == CommandKind.C:
            return DrawCommand.cubic(fn(self.ctrl1), fn(self.ctrl2), fn(self.end))
        if self.kind in (CommandKind.M, CommandKind.L):
            return DrawCommand(self.kind, (UNUSED,) * 4 + tuple(fn(self.end)))
        return self


@dataclass
class SvgPath:
    commands: list[DrawCommand]
    fill: FillMode = FillMode.FILL
    visible: bool = True

    @property
    def is_closed(self) -> bool:
        return bool(self.commands) and self.commands[-1].kind == CommandKind.Z

    @property
    def start(self) -> Point:
        return self.commands[0].end

    def segments(self) -> list[Segment]:
        """Drawn segments, including the implicit line of each ``Z``."""
        segs: list[Segment] = []
        cur = start = None
        for cmd in self.commands:
            k = cmd.kind
            if k == CommandKind.M:
                cur = start = cmd.end
            elif k == CommandKind.L:
                segs.append(Line(cur, cmd.end))
                cur = cmd.end
            elif k == CommandKind.C:
                segs.append(CubicBezier(cur, cmd.ctrl1, cmd.ctrl2, cmd.end))
                cur = cmd.end
            elif k == CommandKind.Z and cur is not None:
                if cur != start:
                    segs.append(Line(cur, start))
                cur = start
        return segs

    def subpaths(self) -> list[SvgPath]:
        out: list[SvgPath] = []
        for cmd in self.commands:
            if cmd.kind == CommandKind.M or not out:
                out.append(SvgPath([], self.fill, self.visible))
            out[-1].commands.append(cmd)
        return out

    def points(self) -> list[Point]:
        """On-curve points in command order."""
        return [c.end for c in self.commands if c.kind in (CommandKind.M, CommandKind.L, CommandKind.C)]

    def map_points(self, fn: Callable[[Point], Point]) -> SvgPath:
        return replace(self, commands=[c.map_points(fn) for c in self.commands])

    def n_drawing(self) -> int:
        return sum(c.kind in (CommandKind.L, CommandKind.C) for c in self.commands)


@dataclass
class SvgDocument:
    paths: list[SvgPath] = field(default_factory=list)
    viewbox: tuple[float, float] = (256.0, 256.0)

    def map_points(self, fn: Callable[[Point], Point]) -> SvgDocument:
        return SvgDocument([p.map_points(fn) for p in self.paths], self.viewbox)


def path_from_segments(segments: Sequence[Segment], closed: bool, fill=FillMode.FILL,
                       visible: bool = True) -> SvgPath:
    cmds = [DrawCommand.move(segments[0].p1)]
    for s in segments:
        if isinstance(s, Line):
            cmds.append(DrawCommand.line(s.p2))
        else:
            cmds.append(DrawCommand.cubic(s.q1, s.q2, s.p2))
    if closed:
        cmds.append(DrawCommand.close())
    return SvgPath(cmds, fill, visible)


def reverse_segments(segments: Sequence[Segment]) -> list[Segment]:
    return [s.reversed() for s in reversed(segments)]


# ---------------------------------------------------------------------------
# Path data grammar


class RawCommand(NamedTuple):
    letter: str
    args: tuple[float, ...]


ARG_COUNTS = {"M": 2, "L": 2, "H": 1, "V": 1, "C": 6, "S": 4, "Q": 4, "T": 2, "A": 7, "Z": 0}
_NUMBER = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")
_SEP = re.compile(r"[\s,]*")


class _Scanner:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def skip(self):
        self.pos = _SEP.match(self.text, self.pos).end()

    def at_end(self) -> bool:
        self.skip()
        return self.pos >= len(self.text)

    def peek(self) -> str:
        self.skip()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def token(self) -> str:
        m = re.compile(r"[^\s,]+").match(self.text, self.pos)
        return m.group(0) if m else ""

    def number(self) -> float:
        self.skip()
        m = _NUMBER.match(self.text, self.pos)
        if not m:
            raise PathDataError(f"expected number at offset {self.pos}, found {self.token()!r}")
        self.pos = m.end()
        return float(m.group(0))

    def flag(self) -> float:
        self.skip()
        ch = self.text[self.pos:self.pos + 1]
        if ch not in ("0", "1"):
            raise PathDataError(f"expected arc flag at offset {self.pos}, found {self.token()!r}")
        self.pos += 1
        return float(ch)


def parse_path_data(d: str) -> list[RawCommand]:
    """Tokenize an SVG ``d`` attribute into raw commands (implicit command
    repetition unrolled; relative letters kept)."""
    sc = _Scanner(d)
    out: list[RawCommand] = []
    while not sc.at_end():
        letter = sc.peek()
        if letter.upper() not in ARG_COUNTS:
            raise PathDataError(f"unexpected token {sc.token()!r} at offset {sc.pos}")
        if not out and letter not in "Mm":
            raise PathDataError(f"path data must start with a moveto, found {letter!r}")
        sc.pos += 1
        n = ARG_COUNTS[letter.upper()]
        if n == 0:
            out.append(RawCommand(letter, ()))
            continue
        first = True
        while first or (not sc.at_end() and sc.peek().upper() not in ARG_COUNTS):
            if letter.upper() == "A":
                vals = (sc.number(), sc.number(), sc.number(), sc.flag(), sc.flag(),
                        sc.number(), sc.number())
            else:
                vals = tuple(sc.number() for _ in range(n))
            out.append(RawCommand(letter, vals))
            if letter in "Mm":
                letter = "l" if letter == "m" else "L"
            first = False
    return out


def to_absolute(raw: Sequence[RawCommand]) -> list[RawCommand]:
    out = []
    cx = cy = sx = sy = 0.0
    for letter, a in raw:
        up = letter.upper()
        rel = letter != up
        ox, oy = (cx, cy) if rel else (0.0, 0.0)
        if up in ("M", "L", "T"):
            a = (a[0] + ox, a[1] + oy)
        elif up == "H":
            a = (a[0] + ox,)
        elif up == "V":
            a = (a[0] + oy,)
        elif up in ("C", "S", "Q"):
            a = tuple(v + (ox if i % 2 == 0 else oy) for i, v in enumerate(a))
        elif up == "A":
            a = a[:5] + (a[5] + ox, a[6] + oy)
        out.append(RawCommand(up, a))

        if up == "Z":
            cx, cy = sx, sy
        elif up == "H":
            cx = a[0]
        elif up == "V":
            cy = a[0]
        else:
            cx, cy = a[-2], a[-1]
        if up == "M":
            sx, sy = cx, cy
    return out


def expand_shorthand(commands: Sequence[RawCommand]) -> list[DrawCommand]:
    """Reduce absolute raw commands to the M/L/C/Z alphabet.

    H/V become lines, Q/T are degree-elevated to cubics, S/T reflect the
    previous control point (or use the current point when the previous
    command was not a matching curve), and arcs are approximated by cubics.
    """
    out: list[DrawCommand] = []
    cur = start = Point(0.0, 0.0)
    last_cubic_ctrl: Point | None = None
    last_quad_ctrl: Point | None = None
    for letter, a in commands:
        cubic_ctrl = quad_ctrl = None
        if letter == "M":
            cur = start = Point(a[0], a[1])
            out.append(DrawCommand.move(cur))
        elif letter in ("L", "H", "V"):
            if letter == "L":
                p = Point(a[0], a[1])
            elif letter == "H":
                p = Point(a[0], cur.y)
            else:
                p = Point(cur.x, a[0])
            out.append(DrawCommand.line(p))
            cur = p
        elif letter in ("C", "S"):
            if letter == "C":
                q1, q2, p = Point(a[0], a[1]), Point(a[2], a[3]), Point(a[4], a[5])
            else:
                q1 = cur * 2 - last_cubic_ctrl if last_cubic_ctrl is not None else cur
                q2, p = Point(a[0], a[1]), Point(a[2], a[3])
            out.append(DrawCommand.cubic(q1, q2, p))
            cubic_ctrl, cur = q2, p
        elif letter in ("Q", "T"):
            if letter == "Q":
                q, p = Point(a[0], a[1]), Point(a[2], a[3])
            else:
                q = cur * 2 - last_quad_ctrl if last_quad_ctrl is not None else cur
                p = Point(a[0], a[1])
            q1 = cur + (q - cur) * (2 / 3)
            q2 = p + (q - p) * (2 / 3)
            out.append(DrawCommand.cubic(q1, q2, p))
            quad_ctrl, cur = q, p
        elif letter == "A":
            rx, ry, phi_deg, fa, fs, x, y = a
            p = Point(x, y)
            if p == cur:
                pass
            elif rx == 0 or ry == 0:
                out.append(DrawCommand.line(p))
            else:
                arc = EllipticalArc(cur, abs(rx), abs(ry), math.radians(phi_deg), bool(fa), bool(fs), p)
                for c in geo.arc_to_cubics(arc):
                    out.append(DrawCommand.cubic(c.q1, c.q2, c.p2))
            cur = p
        elif letter == "Z":
            out.append(DrawCommand.close())
            cur = start
        else:
            raise PathDataError(f"unknown command letter {letter!r}")
        last_cubic_ctrl, last_quad_ctrl = cubic_ctrl, quad_ctrl
    return out


def path_commands(d: str) -> list[DrawCommand]:
    return expand_shorthand(to_absolute(parse_path_data(d)))


# ---------------------------------------------------------------------------
# Element conversion


class _Affine(NamedTuple):
    """Axis-aligned affine map x -> sx*x + tx, y -> sy*y + ty."""
    sx: float = 1.0
    sy: float = 1.0
    tx: float = 0.0
    ty: float = 0.0

    def then(self, outer: _Affine) -> _Affine:
        return _Affine(self.sx * outer.sx, self.sy * outer.sy,
                       outer.sx * self.tx + outer.tx, outer.sy * self.ty + outer.ty)

    def __call__(self, p: Point) -> Point:
        return Point(self.sx * p.x + self.tx, self.sy * p.y + self.ty)


_TRANSFORM = re.compile(r"(\w+)\s*\(([^)]*)\)")


def _parse_transform(text: str, strict: bool) -> _Affine:
    result = _Affine()
    ops = _TRANSFORM.findall(text)
    # the rightmost transform applies first
    for name, argtext in reversed(ops):
        vals = [float(v) for v in _NUMBER.findall(argtext)]
        if name == "translate" and vals:
            t = _Affine(tx=vals[0], ty=vals[1] if len(vals) > 1 else 0.0)
        elif name == "scale" and vals:
            t = _Affine(sx=vals[0], sy=vals[1] if len(vals) > 1 else vals[0])
        else:
            msg = f"unsupported transform {name}({argtext})"
            if strict:
                raise SvgParseError(msg)
            warnings.warn(msg + " ignored", UnsupportedSvgWarning, stacklevel=3)
            continue
        result = result.then(t)
    return result


def _length(value: str | None, default: float = 0.0) -> float:
    if value is None:
        return default
    m = _NUMBER.match(value.strip())
    if not m:
        raise SvgParseError(f"invalid length {value!r}")
    return float(m.group(0))


def _points_attr(text: str) -> list[Point]:
    vals = [float(v) for v in _NUMBER.findall(text or "")]
    return [Point(vals[i], vals[i + 1]) for i in range(0, len(vals) - 1, 2)]


def _fmt(v: float) -> str:
    return f"{v:g}"


def shape_path_data(tag: str, el: ET.Element) -> str | None:
    """Path-data equivalent of a basic shape element, or None if the shape
    does not render (zero size)."""
    g = el.get
    if tag == "rect":
        x, y = _length(g("x")), _length(g("y"))
        w, h = _length(g("width")), _length(g("height"))
        if w <= 0 or h <= 0:
            return None
        rx_s, ry_s = g("rx"), g("ry")
        rx = _length(rx_s) if rx_s is not None else None
        ry = _length(ry_s) if ry_s is not None else None
        if rx is None:
            rx = ry
        if ry is None:
            ry = rx
        rx = min(rx or 0.0, w / 2)
        ry = min(ry or 0.0, h / 2)
        if rx <= 0 or ry <= 0:
            return (f"M{_fmt(x)},{_fmt(y)} L{_fmt(x + w)},{_fmt(y)} L{_fmt(x + w)},{_fmt(y + h)} "
                    f"L{_fmt(x)},{_fmt(y + h)} L{_fmt(x)},{_fmt(y)} z")
        arc = f"A{_fmt(rx)},{_fmt(ry)} 0 0 1"
        return (f"M{_fmt(x + rx)},{_fmt(y)} L{_fmt(x + w - rx)},{_fmt(y)} {arc} {_fmt(x + w)},{_fmt(y + ry)} "
                f"L{_fmt(x + w)},{_fmt(y + h - ry)} {arc} {_fmt(x + w - rx)},{_fmt(y + h)} "
                f"L{_fmt(x + rx)},{_fmt(y + h)} {arc} {_fmt(x)},{_fmt(y + h - ry)} "
                f"L{_fmt(x)},{_fmt(y + ry)} {arc} {_fmt(x + rx)},{_fmt(y)} z")
    if tag in ("circle", "ellipse"):
        cx, cy = _length(g("cx")), _length(g("cy"))
        if tag == "circle":
            rx = ry = _length(g("r"))
        else:
            rx, ry = _length(g("rx")), _length(g("ry"))
        if rx <= 0 or ry <= 0:
            return None
        arc = f"A{_fmt(rx)},{_fmt(ry)} 0 0 1"
        return (f"M{_fmt(cx)},{_fmt(cy - ry)} {arc} {_fmt(cx + rx)},{_fmt(cy)} "
                f"{arc} {_fmt(cx)},{_fmt(cy + ry)} {arc} {_fmt(cx - rx)},{_fmt(cy)} "
                f"{arc} {_fmt(cx)},{_fmt(cy - ry)} z")
    if tag == "line":
        return (f"M{_fmt(_length(g('x1')))},{_fmt(_length(g('y1')))} "
                f"L{_fmt(_length(g('x2')))},{_fmt(_length(g('y2')))}")
    if tag in ("polyline", "polygon"):
        pts = _points_attr(g("points", ""))
        if len(pts) < 2:
            return None
        d = f"M{_fmt(pts[0].x)},{_fmt(pts[0].y)} " + " ".join(
            f"L{_fmt(p.x)},{_fmt(p.y)}" for p in pts[1:])
        return d + " z" if tag == "polygon" else d
    raise ValueError(f"not a basic shape: {tag}")


_SHAPES = {"rect", "circle", "ellipse", "line", "polyline", "polygon"}
_IGNORED = {"title", "desc", "metadata"}


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _fill_of(el: ET.Element, inherited: FillMode) -> FillMode:
    value = el.get("fill")
    style = el.get("style")
    if style:
        for decl in style.split(";"):
            if ":" in decl:
                k, v = decl.split(":", 1)
                if k.strip() == "fill":
                    value = v.strip()
    if value is None:
        return inherited
    return FillMode.OUTLINE if value.strip() == "none" else FillMode.FILL


def parse_svg(text: str, strict: bool = False,
              fill_overrides: Sequence[FillMode] | None = None) -> SvgDocument:
    """Parse SVG text into a document of absolute M/L/C/Z paths.

    Coordinates are shifted so the viewBox origin is (0, 0). ``fill_overrides``
    assigns fill attributes to the emitted paths in document order (e.g. from
    a metadata sidecar); it is the only way to obtain ``ERASE`` on import.
    """
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        line, col = exc.position
        raise SvgParseError(f"malformed XML: {exc.msg if hasattr(exc, 'msg') else exc}", line, col) from None
    if _local(root.tag) != "svg":
        raise SvgParseError(f"root element is <{_local(root.tag)}>, expected <svg>")

    vb = root.get("viewBox")
    if vb:
        vals = [float(v) for v in _NUMBER.findall(vb)]
        if len(vals) != 4:
            raise SvgParseError(f"invalid viewBox {vb!r}")
        minx, miny, w, h = vals
    else:
        minx = miny = 0.0
        w = _length(root.get("width"), 256.0)
        h = _length(root.get("height"), 256.0)
    if w <= 0 or h <= 0:
        raise SvgParseError(f"non-positive viewBox size {w}x{h}")

    base = _Affine(tx=-minx, ty=-miny)
    paths: list[SvgPath] = []

    def visit(el: ET.Element, tf: _Affine, fill: FillMode):
        for child in el:
            tag = _local(child.tag)
            if not isinstance(child.tag, str) or tag in _IGNORED:
                continue
            ctf = tf
            if child.get("transform"):
                ctf = _parse_transform(child.get("transform"), strict).then(tf)
            cfill = _fill_of(child, fill)
            if tag == "g":
                visit(child, ctf, cfill)
                continue
            if tag == "path":
                d = child.get("d", "")
            elif tag in _SHAPES:
                d = shape_path_data(tag, child)
            else:
                msg = f"unsupported element <{tag}>"
                if strict:
                    raise SvgParseError(msg)
                warnings.warn(msg + " skipped", UnsupportedSvgWarning, stacklevel=2)
                continue
            if not d or not d.strip():
                continue
            cmds = [c.map_points(ctf) for c in path_commands(d)]
            if cmds:
                paths.append(SvgPath(cmds, cfill))

    visit(root, base, FillMode.FILL)
    if fill_overrides is not None:
        for p, f in zip(paths, fill_overrides):
            p.fill = FillMode(f)
    return SvgDocument(paths, (w, h))


# ---------------------------------------------------------------------------
# Serialization


def _num(v: float, precision: int) -> str:
    s = f"{v:.{precision}f}"
    if s.startswith("-") and float(s) == 0.0:
        s = s[1:]
    return s


def path_to_d(path: SvgPath, precision: int = 3) -> str:
    parts = []
    for c in path.commands:
        pt = lambda p: f"{_num(p.x, precision)},{_num(p.y, precision)}"
        if c.kind == CommandKind.M:
            parts.append("M" + pt(c.end))
        elif c.kind == CommandKind.L:
            parts.append("L" + pt(c.end))
        elif c.kind == CommandKind.C:
            parts.append(f"C{pt(c.ctrl1)} {pt(c.ctrl2)} {pt(c.end)}")
        elif c.kind == CommandKind.Z:
            parts.append("Z")
    return " ".join(parts)


def _svg_shell(viewbox: tuple[float, float], body: list[str], comment: str | None = None) -> str:
    w, h = viewbox
    head = f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {_fmt(w)} {_fmt(h)}">'
    if comment:
        body = [f"<!-- {comment} -->"] + body
    if not body:
        return head + "</svg>"
    return head + "\n" + "\n".join("  " + b for b in body) + "\n</svg>\n"


def _path_element(d: str, fill: FillMode) -> str:
    if fill == FillMode.OUTLINE:
        return f'<path d="{d}" fill="none" stroke="black" stroke-width="1"/>'
    return f'<path d="{d}" fill="black" fill-rule="nonzero"/>'


def serialize_svg(doc: SvgDocument, precision: int = 3, comment: str | None = None) -> str:
    """Serialize to SVG text with absolute letters and fixed precision.

    Documents containing erase paths are exported through
    :func:`export_with_fill` so the erasing renders under the non-zero rule.
    """
    visible = [p for p in doc.paths if p.visible]
    if any(p.fill == FillMode.ERASE for p in visible):
        return export_with_fill(doc, precision, comment)
    body = [_path_element(path_to_d(p, precision), p.fill) for p in visible if p.commands]
    return _svg_shell(doc.viewbox, body, comment)


def _ring_points(path: SvgPath, n: int = 64) -> np.ndarray:
    segs = path.segments()
    if not segs:
        return np.array([tuple(path.start)])
    return geo.sample_segments(segs, n, closed=True)


def orient_subpath(sub: SvgPath, clockwise: bool) -> SvgPath:
    """Return a single subpath drawn in the requested direction (y-down)."""
    segs = sub.segments()
    if not segs:
        return sub
    area = geo.chain_signed_area(segs)
    if area == 0.0 or (area < 0) == clockwise:
        return sub
    return path_from_segments(reverse_segments(segs), sub.is_closed, sub.fill, sub.visible)


def _overlap(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    pa, pb = np.concatenate(a), np.concatenate(b)
    if (pa[:, 0].max() < pb[:, 0].min() or pb[:, 0].max() < pa[:, 0].min()
            or pa[:, 1].max() < pb[:, 1].min() or pb[:, 1].max() < pa[:, 1].min()):
        return False
    for ring in a:
        for poly in b:
            if any(geo.point_in_polygon(p, poly) for p in ring[::4]):
                return True
    for ring in b:
        for poly in a:
            if any(geo.point_in_polygon(p, poly) for p in ring[::4]):
                return True
    return False


def export_with_fill(doc: SvgDocument, precision: int = 3, comment: str | None = None) -> str:
    """Export honoring the outline/fill/erase attribute.

    Filled rings are drawn clockwise and erase rings counterclockwise; fill
    and erase shapes that overlap are merged into one ``<path>`` so the
    non-zero rule cuts the erase shapes out. Outline paths are emitted
    unchanged as strokes. Erase shapes overlapping no fill are dropped.
    """
    visible = [p for p in doc.paths if p.visible and p.commands]
    body = [_path_element(path_to_d(p, precision), FillMode.OUTLINE)
            for p in visible if p.fill == FillMode.OUTLINE]

    solid = [p for p in visible if p.fill in (FillMode.FILL, FillMode.ERASE)]
    oriented = []
    for p in solid:
        subs = [orient_subpath(s, clockwise=p.fill == FillMode.FILL)
                for s in p.subpaths() if s.segments()]
        oriented.append(subs)
    rings = [[_ring_points(s) for s in subs] for subs in oriented]

    parent = list(range(len(solid)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, p in enumerate(solid):
        if p.fill != FillMode.ERASE or not rings[i]:
            continue
        for j, q in enumerate(solid):
            if q.fill == FillMode.FILL and rings[j] and _overlap(rings[i], rings[j]):
                parent[find(i)] = find(j)

    groups: dict[int, list[int]] = {}
    for i in range(len(solid)):
        groups.setdefault(find(i), []).append(i)
    for members in sorted(groups.values()):
        if not any(solid[i].fill == FillMode.FILL for i in members):
            continue
        d = " ".join(path_to_d(s, precision) for i in members for s in oriented[i])
        if d:
            body.append(_path_element(d, FillMode.FILL))
    return _svg_shell(doc.viewbox, body, comment)
