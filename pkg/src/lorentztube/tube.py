"""Cell templates, scatterer configurations and quenched tube realizations.

A tube is the chain of translated copies of one fundamental polygon whose
two designated gate sides are parallel and congruent.  Each copy receives a
scatterer configuration drawn from a finite library by an IID or Markov
process; a realization is the two-sided sequence of those draws, generated
lazily and deterministically from a master seed so that cell(n) is a pure
function of (process, seed, n) no matter in which order cells are queried.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Union

import numpy as np

from . import randomness as rng
from .geometry import (
    MIN_SEG_LEN,
    Arc,
    Piece,
    Segment,
    Vec2,
    point_in_polygon,
    point_segment_distance,
    polygon_signed_area,
    segments_intersect,
)

GATE_TOL = 1e-9


@dataclass(frozen=True)
class CellTemplate:
    """Fundamental polygon with gate sides and the translation between them.

    `vertices` list the simple polygon counterclockwise; side i runs from
    vertices[i] to vertices[i+1].  Gates may consist of several sides
    (poly-gates); sub-gate i of gate 1 must map onto sub-gate i of gate 2
    under the single translation `tau`, which is derived and checked here.
    """

    vertices: tuple
    gate1_sides: tuple
    gate2_sides: tuple
    tau: Vec2 = None

    def __post_init__(self):
        verts = tuple(self.vertices)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "gate1_sides", tuple(self.gate1_sides))
        object.__setattr__(self, "gate2_sides", tuple(self.gate2_sides))
        if len(verts) < 3:
            raise ValueError("template needs at least 3 vertices")
        if polygon_signed_area(verts) <= 0.0:
            raise ValueError("template polygon must be counterclockwise")
        self._check_simple()
        n = len(verts)
        g1, g2 = self.gate1_sides, self.gate2_sides
        if len(g1) == 0 or len(g1) != len(g2):
            raise ValueError("gate side lists must be nonempty and equally long")
        seen = set()
        for i in g1 + g2:
            if not (0 <= i < n):
                raise ValueError(f"gate side index {i} out of range 0..{n - 1}")
            if i in seen:
                raise ValueError(f"side {i} listed as a gate twice")
            seen.add(i)
        tau = self.tau if self.tau is not None else self._derive_tau()
        object.__setattr__(self, "tau", tau)
        for a, b in zip(g1, g2):
            if not self._sides_match(a, b, tau):
                raise ValueError(
                    f"translation {tau} does not map gate side {a} onto side {b}")

    def _check_simple(self):
        n = len(self.vertices)
        for i in range(n):
            si = self.side(i)
            for j in range(i + 1, n):
                if j == i or (j + 1) % n == i or (i + 1) % n == j:
                    continue
                if segments_intersect(si, self.side(j)):
                    raise ValueError(f"polygon sides {i} and {j} intersect")

    def _derive_tau(self) -> Vec2:
        a = self.side(self.gate1_sides[0])
        b = self.side(self.gate2_sides[0])
        for cand in (b.b - a.a, b.a - a.a):
            if self._sides_match(self.gate1_sides[0], self.gate2_sides[0], cand):
                return cand
        raise ValueError("gate sides are not congruent under any translation")

    def _sides_match(self, i: int, j: int, tau: Vec2) -> bool:
        a, b = self.side(i), self.side(j)
        ta, tb = a.a + tau, a.b + tau
        direct = (ta - b.a).norm() <= GATE_TOL and (tb - b.b).norm() <= GATE_TOL
        swapped = (ta - b.b).norm() <= GATE_TOL and (tb - b.a).norm() <= GATE_TOL
        return direct or swapped

    # -- side helpers -------------------------------------------------------

    def n_sides(self) -> int:
        return len(self.vertices)

    def side(self, i: int) -> Segment:
        return Segment(self.vertices[i], self.vertices[(i + 1) % len(self.vertices)])

    def side_direction(self, i: int) -> Vec2:
        return self.side(i).direction()

    def inner_normal(self, i: int) -> Vec2:
        # interior lies to the left of a CCW-directed side
        return self.side_direction(i).perp()

    def gate_sides(self, gate: int) -> tuple:
        return self.gate1_sides if gate == 1 else self.gate2_sides

    def gate_segment(self, gate: int, sub: int = 0) -> Segment:
        return self.side(self.gate_sides(gate)[sub])

    def gate_normal(self, gate: int, sub: int = 0) -> Vec2:
        return self.inner_normal(self.gate_sides(gate)[sub])

    def gate_direction(self, gate: int, sub: int = 0) -> Vec2:
        return self.side_direction(self.gate_sides(gate)[sub])


def square_template(width: float = 1.0, height: float = 1.0) -> CellTemplate:
    """Axis-aligned rectangle with gate 1 on the left, gate 2 on the right."""
    w, h = float(width), float(height)
    return CellTemplate(
        vertices=(Vec2(0.0, 0.0), Vec2(w, 0.0), Vec2(w, h), Vec2(0.0, h)),
        gate1_sides=(3,), gate2_sides=(1,))


# ---------------------------------------------------------------------------
# Scatterers and configurations.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Disc:
    center: Vec2
    radius: float

    def __post_init__(self):
        if not (self.radius > 0.0 and math.isfinite(self.radius)):
            raise ValueError(f"disc radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class Wall:
    """A flat scatterer: a zero-thickness reflecting segment."""

    a: Vec2
    b: Vec2

    def __post_init__(self):
        if (self.b - self.a).norm() < MIN_SEG_LEN:
            raise ValueError("degenerate wall")


@dataclass(frozen=True)
class ConvexPolygon:
    vertices: tuple

    def __post_init__(self):
        verts = tuple(self.vertices)
        object.__setattr__(self, "vertices", verts)
        n = len(verts)
        if n < 3:
            raise ValueError("polygon scatterer needs at least 3 vertices")
        if polygon_signed_area(verts) <= 0.0:
            raise ValueError("polygon scatterer must be counterclockwise")
        for i in range(n):
            a, b, c = verts[i], verts[(i + 1) % n], verts[(i + 2) % n]
            if (b - a).cross(c - b) < -1e-12:
                raise ValueError("polygon scatterer must be convex")


Scatterer = Union[Disc, Wall, ConvexPolygon]


@dataclass(frozen=True)
class CellConfig:
    """One cell's scatterer content."""

    scatterers: tuple = ()
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "scatterers", tuple(self.scatterers))

    def discs(self):
        return [s for s in self.scatterers if isinstance(s, Disc)]

    def walls(self):
        return [s for s in self.scatterers if isinstance(s, Wall)]

    def polygons(self):
        return [s for s in self.scatterers if isinstance(s, ConvexPolygon)]


def scatterer_pieces(s: Scatterer):
    """Boundary pieces of one scatterer (segments and arcs)."""
    if isinstance(s, Disc):
        return [Arc(s.center, s.radius)]
    if isinstance(s, Wall):
        return [Segment(s.a, s.b)]
    out = []
    n = len(s.vertices)
    for i in range(n):
        out.append(Segment(s.vertices[i], s.vertices[(i + 1) % n]))
    return out


def cell_pieces(tpl: CellTemplate, cfg: CellConfig, shift: Vec2 = Vec2(0.0, 0.0)):
    """Flatten a cell into kernel pieces, in the canonical engine order.

    Order: gate-1 sub-sides, gate-2 sub-sides, remaining polygon sides,
    scatterer segments, then scatterer arcs.  Piece ids are positions in this
    list; the compiled engine uses the identical layout, so ids are portable
    between the scalar and batch paths.
    """
    pieces = []
    segs = []
    for sub, i in enumerate(tpl.gate1_sides):
        segs.append((tpl.side(i), "gate"))
    for sub, i in enumerate(tpl.gate2_sides):
        segs.append((tpl.side(i), "gate"))
    gate_set = set(tpl.gate1_sides) | set(tpl.gate2_sides)
    for i in range(tpl.n_sides()):
        if i not in gate_set:
            segs.append((tpl.side(i), "flat"))
    arcs = []
    for s in cfg.scatterers:
        for shape in scatterer_pieces(s):
            if isinstance(shape, Segment):
                segs.append((shape, "flat"))
            else:
                arcs.append(shape)
    moved = shift.x != 0.0 or shift.y != 0.0
    pid = 0
    for shape, kind in segs:
        if moved:
            shape = Segment(shape.a + shift, shape.b + shift)
        pieces.append(Piece(pid, shape, kind))
        pid += 1
    for shape in arcs:
        if moved:
            shape = Arc(shape.center + shift, shape.radius,
                        shape.angle_start, shape.angle_span)
        pieces.append(Piece(pid, shape, "curved"))
        pid += 1
    return pieces


def gate_piece_id(tpl: CellTemplate, gate: int, sub: int = 0) -> int:
    """Piece id of a gate sub-side under the canonical cell_pieces layout."""
    if gate == 1:
        return sub
    return len(tpl.gate1_sides) + sub


def gate_of_piece(tpl: CellTemplate, piece_id: int):
    """(gate, sub) of a gate piece id, or None for non-gate pieces."""
    n1 = len(tpl.gate1_sides)
    n2 = len(tpl.gate2_sides)
    if piece_id < n1:
        return (1, piece_id)
    if piece_id < n1 + n2:
        return (2, piece_id - n1)
    return None


# ---------------------------------------------------------------------------
# Configuration validation.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    constraint: str
    detail: str

    def __str__(self):
        return f"{self.constraint}: {self.detail}"


@dataclass(frozen=True)
class Bounds:
    """Declared geometric constants the validators check samples against."""

    k_m: float = 0.1       # minimum curvature of curved boundary pieces
    k_M: float = 1e9       # maximum curvature (numerical sanity bound)
    K: int = 8             # max boundary pieces per scatterer
    N: int = 16            # max scatterers per cell
    gamma_m: float = 1e-3  # declared bounds on the curved-to-curved flight
    gamma_M: float = 100.0
    M: int = 1000          # declared max flat collisions between curved hits


def _scatterer_clearance(a: Scatterer, b: Scatterer) -> float:
    """Distance between two scatterer boundaries (0 when they touch/overlap)."""
    if isinstance(a, Disc) and isinstance(b, Disc):
        return (a.center - b.center).norm() - a.radius - b.radius
    if isinstance(a, Disc):
        a, b = b, a
    if isinstance(b, Disc):
        segs = [p for p in scatterer_pieces(a) if isinstance(p, Segment)]
        d = min(point_segment_distance(b.center, s) for s in segs)
        if isinstance(a, ConvexPolygon) and point_in_polygon(b.center, a.vertices):
            return -d - b.radius
        return d - b.radius
    best = math.inf
    for p in scatterer_pieces(a):
        for q in scatterer_pieces(b):
            if segments_intersect(p, q):
                return 0.0
            best = min(best,
                       point_segment_distance(p.a, q), point_segment_distance(p.b, q),
                       point_segment_distance(q.a, p), point_segment_distance(q.b, p))
    return best


def validate_config(cfg: CellConfig, tpl: CellTemplate,
                    bounds: Bounds = Bounds()) -> list:
    """All invariant breaches of a configuration, as data (empty list == valid).

    Discs and polygon scatterers must sit strictly inside the cell; walls
    (flat scatterers used for cell shaping) may touch non-gate boundary but
    never a gate.  Curvature of every curved piece must reach k_m.
    """
    out = []
    sc = cfg.scatterers
    if len(sc) > bounds.N:
        out.append(Violation("count", f"{len(sc)} scatterers exceed N = {bounds.N}"))
    gate_segs = [tpl.side(i) for i in tpl.gate1_sides + tpl.gate2_sides]

    for idx, s in enumerate(sc):
        label = f"scatterer {idx} ({type(s).__name__})"
        pieces = scatterer_pieces(s)
        if len(pieces) > bounds.K:
            out.append(Violation("pieces", f"{label} has {len(pieces)} pieces > K = {bounds.K}"))
        if isinstance(s, Disc):
            k = 1.0 / s.radius
            if k < bounds.k_m - 1e-12:
                out.append(Violation("curvature", f"{label} curvature {k} below k_m = {bounds.k_m}"))
            if k > bounds.k_M + 1e-12:
                out.append(Violation("curvature", f"{label} curvature {k} above k_M = {bounds.k_M}"))
            if not point_in_polygon(s.center, tpl.vertices):
                out.append(Violation("containment", f"{label} center outside the cell"))
            else:
                clear = min(point_segment_distance(s.center, tpl.side(i))
                            for i in range(tpl.n_sides()))
                if clear < s.radius - 1e-12:
                    out.append(Violation("containment", f"{label} reaches the cell boundary"))
            for g in gate_segs:
                if point_segment_distance(s.center, g) < s.radius + GATE_TOL:
                    out.append(Violation("gate", f"{label} touches a gate"))
        else:
            endpoints = []
            for p in pieces:
                endpoints.extend((p.a, p.b))
            for p in endpoints:
                if not point_in_polygon(p, tpl.vertices):
                    out.append(Violation("containment", f"{label} leaves the cell"))
                    break
            for p in pieces:
                for g in gate_segs:
                    if segments_intersect(p, g, tol=GATE_TOL):
                        out.append(Violation("gate", f"{label} touches a gate"))
                for i in range(tpl.n_sides()):
                    if i in tpl.gate1_sides or i in tpl.gate2_sides:
                        continue
                    side = tpl.side(i)
                    d1 = point_segment_distance(p.a, side)
                    d2 = point_segment_distance(p.b, side)
                    if segments_intersect(p, side) and d1 > GATE_TOL and d2 > GATE_TOL:
                        out.append(Violation("containment", f"{label} crosses the cell boundary"))

    for i in range(len(sc)):
        for j in range(i + 1, len(sc)):
            if _scatterer_clearance(sc[i], sc[j]) <= 0.0:
                out.append(Violation("disjoint", f"scatterers {i} and {j} intersect"))
    return out


def shaped_cell(tpl: CellTemplate, shape_walls, base: CellConfig = CellConfig(),
                name: str = "") -> CellConfig:
    """Add flat shaping walls to a cell, realizing an arbitrary inner shape.

    Walls are ordinary flat scatterers for the dynamics.  A wall touching or
    crossing a gate is rejected outright (the tube would stop being a tube);
    any other invariant problems are left to validate_config.
    """
    walls = []
    for w in shape_walls:
        if isinstance(w, Wall):
            walls.append(w)
        elif isinstance(w, Segment):
            walls.append(Wall(w.a, w.b))
        else:
            a, b = w
            if not isinstance(a, Vec2):
                a = Vec2(*a)
            if not isinstance(b, Vec2):
                b = Vec2(*b)
            walls.append(Wall(a, b))
    walls = tuple(walls)
    bad = []
    for idx, w in enumerate(walls):
        seg = Segment(w.a, w.b)
        for g in tpl.gate1_sides + tpl.gate2_sides:
            if segments_intersect(seg, tpl.side(g), tol=GATE_TOL):
                bad.append(Violation("gate", f"shaping wall {idx} crosses gate side {g}"))
    if bad:
        raise ValueError("; ".join(str(v) for v in bad))
    return CellConfig(scatterers=base.scatterers + walls, name=name or base.name)


# ---------------------------------------------------------------------------
# The configuration process and tube realizations.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConfigurationProcess:
    """Law of the per-cell configuration sequence.

    variant "iid": cells are independent draws from `probs` over the library.
    variant "markov": cell 0 is drawn from the stationary vector, cells to
    the right follow the transition matrix and cells to the left follow its
    time reversal, which is the unique stationary two-sided extension.
    `jitter` optionally displaces all disc centers of a cell by a uniform
    offset in [-jx, jx] x [-jy, jy], giving a continuous-parameter IID family.
    """

    library: tuple
    variant: str = "iid"
    probs: tuple = None
    transition: tuple = None
    stationary: tuple = None
    jitter: tuple = (0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "library", tuple(self.library))
        object.__setattr__(self, "jitter", tuple(float(j) for j in self.jitter))
        m = len(self.library)
        if m == 0:
            raise ValueError("library must not be empty")
        if self.variant == "iid":
            probs = self.probs if self.probs is not None else tuple([1.0 / m] * m)
            probs = tuple(float(p) for p in probs)
            if len(probs) != m:
                raise ValueError("probs length must match the library")
            if any(p < 0 for p in probs) or abs(math.fsum(probs) - 1.0) > 1e-12:
                raise ValueError("probs must be nonnegative and sum to 1")
            object.__setattr__(self, "probs", probs)
        elif self.variant == "markov":
            if self.transition is None:
                raise ValueError("markov variant needs a transition matrix")
            P = tuple(tuple(float(x) for x in row) for row in self.transition)
            if len(P) != m or any(len(row) != m for row in P):
                raise ValueError("transition matrix must be square over the library")
            for r, row in enumerate(P):
                if any(x < 0 for x in row) or abs(math.fsum(row) - 1.0) > 1e-12:
                    raise ValueError(f"transition row {r} is not a probability vector")
            object.__setattr__(self, "transition", P)
            pi = self.stationary
            if pi is None:
                pi = tuple(_stationary_vector(np.array(P)))
            pi = tuple(float(x) for x in pi)
            if abs(math.fsum(pi) - 1.0) > 1e-10:
                raise ValueError("stationary vector must sum to 1")
            resid = float(np.max(np.abs(np.array(pi) @ np.array(P) - np.array(pi))))
            if resid > 1e-10:
                raise ValueError(f"stationary vector residual {resid} exceeds 1e-10")
            object.__setattr__(self, "stationary", pi)
        else:
            raise ValueError(f"unknown process variant {self.variant!r}")

    def n_configs(self) -> int:
        return len(self.library)

    def iid_cumulative(self) -> np.ndarray:
        return np.cumsum(np.asarray(self.probs, dtype=np.float64))

    def forward_cumulative(self) -> np.ndarray:
        return np.cumsum(np.asarray(self.transition, dtype=np.float64), axis=1)

    def backward_cumulative(self) -> np.ndarray:
        """Row b is the CDF of the reversed kernel P~(a | b) = pi_a P_ab / pi_b."""
        P = np.asarray(self.transition, dtype=np.float64)
        pi = np.asarray(self.stationary, dtype=np.float64)
        back = (P * pi[:, None]).T / pi[:, None]
        return np.cumsum(back, axis=1)

    def stationary_cumulative(self) -> np.ndarray:
        return np.cumsum(np.asarray(self.stationary, dtype=np.float64))


def _stationary_vector(P: np.ndarray) -> np.ndarray:
    m = P.shape[0]
    A = np.vstack([P.T - np.eye(m), np.ones((1, m))])
    b = np.zeros(m + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


class TubeRealization:
    """Deterministic lazily evaluated two-sided configuration sequence.

    Thread-safe in the insert-only sense: concurrent queries may duplicate
    work but always store identical values.
    """

    def __init__(self, template: CellTemplate, process: ConfigurationProcess,
                 master_seed: int):
        self.template = template
        self.process = process
        self.master_seed = int(master_seed)
        self._indices: dict = {}
        self._known_lo = 0
        self._known_hi = 0          # contiguous markov range [lo, hi)
        self._lock = threading.Lock()

    def _cell_u(self, n: int) -> float:
        return rng.uniform(rng.key64(self.master_seed, rng.KIND_CELL, n))

    def index(self, n: int) -> int:
        """Library index of cell n."""
        n = int(n)
        got = self._indices.get(n)
        if got is not None:
            return got
        p = self.process
        if p.variant == "iid":
            idx = rng.pick(p.iid_cumulative(), self._cell_u(n))
            self._indices[n] = idx
            return idx
        # markov: extend the contiguous known range out to n under a lock
        # (values are deterministic, the lock only guards the bookkeeping)
        with self._lock:
            if not self._indices:
                self._indices[0] = rng.pick(p.stationary_cumulative(), self._cell_u(0))
                self._known_lo, self._known_hi = 0, 1
            fwd = p.forward_cumulative()
            back = p.backward_cumulative()
            while self._known_hi <= n:
                m = self._known_hi
                prev = self._indices[m - 1]
                self._indices[m] = rng.pick(fwd[prev], self._cell_u(m))
                self._known_hi += 1
            while self._known_lo > n:
                m = self._known_lo - 1
                nxt = self._indices[m + 1]
                self._indices[m] = rng.pick(back[nxt], self._cell_u(m))
                self._known_lo -= 1
            return self._indices[n]

    def jitter_offset(self, n: int):
        jx, jy = self.process.jitter
        if jx == 0.0 and jy == 0.0:
            return (0.0, 0.0)
        u = rng.uniforms(rng.key64(self.master_seed, rng.KIND_JITTER, n), 2)
        return ((2.0 * u[0] - 1.0) * jx, (2.0 * u[1] - 1.0) * jy)

    def cell(self, n: int) -> CellConfig:
        """The realized configuration of cell n (jitter applied)."""
        cfg = self.process.library[self.index(n)]
        dx, dy = self.jitter_offset(n)
        if dx == 0.0 and dy == 0.0:
            return cfg
        moved = tuple(
            Disc(s.center + Vec2(dx, dy), s.radius) if isinstance(s, Disc) else s
            for s in cfg.scatterers)
        return CellConfig(scatterers=moved, name=cfg.name)

    def window(self, lo: int, hi: int):
        """(indices, jitter_x, jitter_y) arrays for cells lo..hi-1.

        Identical element-wise to calling index / jitter_offset per cell;
        the IID path is vectorized, the Markov path walks the chain.
        """
        ns = np.arange(lo, hi, dtype=np.int64)
        p = self.process
        if p.variant == "iid":
            u = rng.uniforms_keyed(self.master_seed, rng.KIND_CELL, ns)
            idx = np.searchsorted(p.iid_cumulative(), u, side="right").astype(np.int16)
        else:
            idx = np.array([self.index(n) for n in range(lo, hi)], dtype=np.int16)
        jx = np.zeros(hi - lo, dtype=np.float64)
        jy = np.zeros(hi - lo, dtype=np.float64)
        if p.jitter[0] != 0.0 or p.jitter[1] != 0.0:
            u0 = rng.uniforms_keyed(self.master_seed, rng.KIND_JITTER, ns, draw=0)
            u1 = rng.uniforms_keyed(self.master_seed, rng.KIND_JITTER, ns, draw=1)
            jx = (2.0 * u0 - 1.0) * p.jitter[0]
            jy = (2.0 * u1 - 1.0) * p.jitter[1]
        return idx, jx, jy
