"""Exact 2-D billiard geometry: ray intersections, reflection, first-hit search.

Lengths are in cell units and velocities are unit vectors (speed fixed to 1),
so flight times equal path lengths.  Intersections are closed-form; grazing
and corner cases are detected with fixed tolerances instead of exact
arithmetic.  Points are never nudged off boundaries: the piece a ray departs
from is excluded from its next search, which keeps hit points exactly on the
pieces and avoids drift.

The `ray_segment_hit` / `ray_arc_hit` / `reflect_dir` functions are plain
float kernels shared verbatim with the compiled batch engine (engine.py jits
them), so the scalar API and the batch path cannot drift apart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Union

# Tolerances for double-precision geometry on unit-scale cells.
EPS_TAN = 1e-10   # tangency: |v.n| on flats, discriminant/r^2 on arcs
EPS_VERT = 1e-9   # vertex (endpoint) proximity
EPS_LEN = 1e-12   # minimum advance along a ray
MIN_SEG_LEN = 1e-9

TWO_PI = 2.0 * math.pi

FLAG_CLEAN = 0
FLAG_TANGENTIAL = 1
FLAG_VERTEX = 2

FLAG_NAMES = ("clean", "tangential", "vertex")


class TangencyError(ValueError):
    """Reflection requested at grazing incidence (|v.n| below EPS_TAN)."""


class GeometryError(RuntimeError):
    """A ray found no boundary at all; the cell geometry is inconsistent."""


@dataclass(frozen=True)
class Vec2:
    x: float
    y: float

    def __add__(self, other: "Vec2") -> "Vec2":
        return Vec2(self.x + other.x, self.y + other.y)

    def __sub__(self, other: "Vec2") -> "Vec2":
        return Vec2(self.x - other.x, self.y - other.y)

    def __mul__(self, s: float) -> "Vec2":
        return Vec2(self.x * s, self.y * s)

    __rmul__ = __mul__

    def __neg__(self) -> "Vec2":
        return Vec2(-self.x, -self.y)

    def dot(self, other: "Vec2") -> float:
        return self.x * other.x + self.y * other.y

    def cross(self, other: "Vec2") -> float:
        return self.x * other.y - self.y * other.x

    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y)

    def unit(self) -> "Vec2":
        n = self.norm()
        if n < MIN_SEG_LEN:
            raise ValueError("cannot normalize a near-zero vector")
        return Vec2(self.x / n, self.y / n)

    def perp(self) -> "Vec2":
        """Left-hand perpendicular (rotation by +90 degrees)."""
        return Vec2(-self.y, self.x)

    def as_tuple(self) -> tuple:
        return (self.x, self.y)


def unit_from_angle(theta: float) -> Vec2:
    return Vec2(math.cos(theta), math.sin(theta))


def is_unit(v: Vec2, tol: float = 1e-9) -> bool:
    return abs(v.x * v.x + v.y * v.y - 1.0) <= tol


@dataclass(frozen=True)
class Segment:
    a: Vec2
    b: Vec2

    def __post_init__(self):
        if (self.b - self.a).norm() < MIN_SEG_LEN:
            raise ValueError(f"degenerate segment {self.a} -- {self.b}")

    def direction(self) -> Vec2:
        return (self.b - self.a).unit()

    def length(self) -> float:
        return (self.b - self.a).norm()


@dataclass(frozen=True)
class Arc:
    """Circular arc of positive radius, swept CCW from angle_start.

    angle_span == 2*pi gives a full circle (the common scatterer case).
    """

    center: Vec2
    radius: float
    angle_start: float = 0.0
    angle_span: float = TWO_PI

    def __post_init__(self):
        if not (self.radius > 0.0 and math.isfinite(self.radius)):
            raise ValueError(f"arc radius must be positive, got {self.radius}")
        if not (0.0 < self.angle_span <= TWO_PI + 1e-12):
            raise ValueError(f"arc span must lie in (0, 2*pi], got {self.angle_span}")

    def is_full_circle(self) -> bool:
        return self.angle_span >= TWO_PI - 1e-12

    def endpoints(self) -> tuple:
        e0 = self.center + unit_from_angle(self.angle_start) * self.radius
        e1 = self.center + unit_from_angle(self.angle_start + self.angle_span) * self.radius
        return (e0, e1)


Shape = Union[Segment, Arc]


@dataclass(frozen=True)
class HitRecord:
    t: float
    point: Vec2
    normal: Vec2          # unit, opposing the incoming ray
    piece_id: object = None
    kind: str = "flat"    # "flat" | "curved" | "gate"
    flag: str = "clean"   # "clean" | "tangential" | "vertex"


@dataclass(frozen=True)
class Piece:
    piece_id: object
    shape: Shape
    kind: str             # "flat" | "curved" | "gate"


# ---------------------------------------------------------------------------
# Raw float kernels (also compiled by engine.py; keep them numba-friendly:
# scalars in, tuple out, stdlib math only).
# ---------------------------------------------------------------------------

def ray_segment_hit(ox, oy, dx, dy, ax, ay, bx, by):
    """Earliest forward hit of the ray (o, d) with the closed segment a--b.

    Returns (ok, t, px, py, nx, ny, flag); the normal is unit and opposes the
    ray. flag: 0 clean, 1 tangential, 2 vertex (endpoint within EPS_VERT,
    slightly-off-the-end corner grazes included).
    """
    ex = bx - ax
    ey = by - ay
    den = dx * ey - dy * ex
    if den == 0.0:
        return (False, 0.0, 0.0, 0.0, 0.0, 0.0, 0)
    wx = ax - ox
    wy = ay - oy
    t = (wx * ey - wy * ex) / den
    if t <= EPS_LEN or not (t < math.inf):
        return (False, 0.0, 0.0, 0.0, 0.0, 0.0, 0)
    s = (wx * dy - wy * dx) / den
    length = math.sqrt(ex * ex + ey * ey)
    along = s * length
    if along < -EPS_VERT or along > length + EPS_VERT:
        return (False, 0.0, 0.0, 0.0, 0.0, 0.0, 0)
    px = ox + t * dx
    py = oy + t * dy
    nx = -ey / length
    ny = ex / length
    if nx * dx + ny * dy > 0.0:
        nx = -nx
        ny = -ny
    if along < EPS_VERT or along > length - EPS_VERT:
        flag = FLAG_VERTEX
    elif abs(nx * dx + ny * dy) < EPS_TAN:
        flag = FLAG_TANGENTIAL
    else:
        flag = FLAG_CLEAN
    return (True, t, px, py, nx, ny, flag)


def ray_arc_hit(ox, oy, dx, dy, cx, cy, r, a0, span):
    """Earliest forward hit of the ray (o, d) with a CCW arc.

    Same return convention as ray_segment_hit.  Tangency is decided on the
    quadratic discriminant (disc < EPS_TAN * r^2), which is deliberately
    wider than the |v.n| test used for flats.
    """
    ocx = ox - cx
    ocy = oy - cy
    b = dx * ocx + dy * ocy
    c = ocx * ocx + ocy * ocy - r * r
    disc = b * b - c
    if disc < 0.0:
        return (False, 0.0, 0.0, 0.0, 0.0, 0.0, 0)
    tangential = disc < EPS_TAN * r * r
    sq = math.sqrt(disc)
    full = span >= TWO_PI - 1e-12
    t = -b - sq
    for _pass in range(2):
        if _pass == 1:
            t = -b + sq
        if t > EPS_LEN:
            px = ox + t * dx
            py = oy + t * dy
            rx = px - cx
            ry = py - cy
            flag = FLAG_TANGENTIAL if tangential else FLAG_CLEAN
            accept = True
            if not full:
                e0x = cx + r * math.cos(a0)
                e0y = cy + r * math.sin(a0)
                e1x = cx + r * math.cos(a0 + span)
                e1y = cy + r * math.sin(a0 + span)
                d0 = math.sqrt((px - e0x) ** 2 + (py - e0y) ** 2)
                d1 = math.sqrt((px - e1x) ** 2 + (py - e1y) ** 2)
                rel = (math.atan2(ry, rx) - a0) % TWO_PI
                if d0 < EPS_VERT or d1 < EPS_VERT:
                    flag = FLAG_VERTEX
                elif rel > span:
                    accept = False
            if accept:
                nr = math.sqrt(rx * rx + ry * ry)
                nx = rx / nr
                ny = ry / nr
                if nx * dx + ny * dy > 0.0:
                    nx = -nx
                    ny = -ny
                return (True, t, px, py, nx, ny, flag)
    return (False, 0.0, 0.0, 0.0, 0.0, 0.0, 0)


def reflect_dir(vx, vy, nx, ny):
    """Specular reflection v' = v - 2 (v.n) n."""
    d = vx * nx + vy * ny
    return (vx - 2.0 * d * nx, vy - 2.0 * d * ny)


# ---------------------------------------------------------------------------
# Public wrappers on the domain types.
# ---------------------------------------------------------------------------

def _check_unit(v: Vec2):
    if not is_unit(v):
        raise ValueError(f"direction must be a unit vector, got {v}")


def intersect_ray_segment(origin: Vec2, direction: Vec2, seg: Segment,
                          piece_id: object = None) -> Optional[HitRecord]:
    """Earliest t > EPS_LEN hit of the ray with the closed segment, or None."""
    _check_unit(direction)
    ok, t, px, py, nx, ny, flag = ray_segment_hit(
        origin.x, origin.y, direction.x, direction.y,
        seg.a.x, seg.a.y, seg.b.x, seg.b.y)
    if not ok:
        return None
    return HitRecord(t, Vec2(px, py), Vec2(nx, ny), piece_id, "flat", FLAG_NAMES[flag])


def intersect_ray_arc(origin: Vec2, direction: Vec2, arc: Arc,
                      piece_id: object = None) -> Optional[HitRecord]:
    """Earliest t > EPS_LEN hit of the ray with the arc, or None."""
    _check_unit(direction)
    ok, t, px, py, nx, ny, flag = ray_arc_hit(
        origin.x, origin.y, direction.x, direction.y,
        arc.center.x, arc.center.y, arc.radius, arc.angle_start, arc.angle_span)
    if not ok:
        return None
    return HitRecord(t, Vec2(px, py), Vec2(nx, ny), piece_id, "curved", FLAG_NAMES[flag])


def reflect(v: Vec2, n: Vec2) -> Vec2:
    """Reflect incoming unit v off the boundary with unit normal n.

    Raises TangencyError at grazing incidence; the caller flags the orbit
    singular instead of propagating a junk direction.
    """
    d = v.dot(n)
    if abs(d) < EPS_TAN:
        raise TangencyError(f"grazing incidence, v.n = {d}")
    vx, vy = reflect_dir(v.x, v.y, n.x, n.y)
    return Vec2(vx, vy)


def intersect_piece(origin: Vec2, direction: Vec2, piece: Piece) -> Optional[HitRecord]:
    if isinstance(piece.shape, Segment):
        rec = intersect_ray_segment(origin, direction, piece.shape, piece.piece_id)
    else:
        rec = intersect_ray_arc(origin, direction, piece.shape, piece.piece_id)
    if rec is None:
        return None
    if piece.kind != rec.kind:
        rec = HitRecord(rec.t, rec.point, rec.normal, rec.piece_id, piece.kind, rec.flag)
    return rec


def first_hit(origin: Vec2, direction: Vec2, pieces: Iterable[Piece],
              exclude: object = None) -> Optional[HitRecord]:
    """Earliest hit over all pieces except `exclude` (the departing piece).

    Two distinct pieces hit within EPS_LEN of the same time is a corner: the
    winning record is flagged "vertex".
    """
    best: Optional[HitRecord] = None
    for piece in pieces:
        if exclude is not None and piece.piece_id == exclude:
            continue
        rec = intersect_piece(origin, direction, piece)
        if rec is None:
            continue
        if best is None or rec.t < best.t - EPS_LEN:
            best = rec
        elif rec.t < best.t + EPS_LEN:
            keep = rec if rec.t < best.t else best
            best = HitRecord(keep.t, keep.point, keep.normal, keep.piece_id,
                             keep.kind, "vertex")
    return best


# ---------------------------------------------------------------------------
# Small predicates shared by the model layer.
# ---------------------------------------------------------------------------

def point_segment_distance(p: Vec2, seg: Segment) -> float:
    e = seg.b - seg.a
    w = p - seg.a
    t = w.dot(e) / e.dot(e)
    t = min(1.0, max(0.0, t))
    closest = seg.a + e * t
    return (p - closest).norm()


def segments_intersect(s1: Segment, s2: Segment, tol: float = 0.0) -> bool:
    """True if the two closed segments come within `tol` of each other."""
    d1 = s1.b - s1.a
    d2 = s2.b - s2.a
    den = d1.cross(d2)
    w = s2.a - s1.a
    if den != 0.0:
        t = w.cross(d2) / den
        u = w.cross(d1) / den
        if -1e-15 <= t <= 1.0 + 1e-15 and -1e-15 <= u <= 1.0 + 1e-15:
            return True
    if tol > 0.0 or den == 0.0:
        gap = min(
            point_segment_distance(s1.a, s2), point_segment_distance(s1.b, s2),
            point_segment_distance(s2.a, s1), point_segment_distance(s2.b, s1))
        return gap <= tol
    return False


def point_in_polygon(p: Vec2, vertices) -> bool:
    """Crossing-number test; points exactly on the boundary count as inside."""
    n = len(vertices)
    inside = False
    for i in range(n):
        a = vertices[i]
        b = vertices[(i + 1) % n]
        if point_segment_distance(p, Segment(a, b)) < 1e-12:
            return True
        if (a.y > p.y) != (b.y > p.y):
            xcross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y)
            if p.x < xcross:
                inside = not inside
    return inside


def polygon_signed_area(vertices) -> float:
    s = 0.0
    n = len(vertices)
    for i in range(n):
        a = vertices[i]
        b = vertices[(i + 1) % n]
        s += a.cross(b)
    return 0.5 * s
