"""Billiard dynamics on a tube: cell traversal, crossing maps, cocycles.

A traversal traces a phase point from a gate through the cell's scatterers
until it first crosses a gate again.  Crossing into the next cell counts +1,
into the previous cell -1; following the orbit while re-centering the tube
on the particle's current cell turns the quenched tube into a stationary
system whose cell displacement is the running sum of those exit values.
Tangential and vertex hits terminate the orbit with a singular status; such
orbits are counted and excluded from statistics, never silently continued.

This module is the scalar reference path.  engine.py runs the identical
event loop compiled over batches of orbits; equality of the two paths is
asserted by the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .geometry import (
    EPS_TAN,
    GeometryError,
    HitRecord,
    Piece,
    Segment,
    TangencyError,
    Vec2,
    first_hit,
    polygon_signed_area,
    reflect,
)
from .tube import (
    CellConfig,
    CellTemplate,
    TubeRealization,
    cell_pieces,
    gate_of_piece,
    gate_piece_id,
    scatterer_pieces,
)

DEFAULT_CAP = 10_000

STATUS_OK = "ok"
STATUS_TANGENCY = "singular_tangency"
STATUS_VERTEX = "singular_vertex"
STATUS_CAP = "cap_exceeded"

# integer codes used by the compiled engine, index-aligned with these names
STATUS_NAMES = (STATUS_OK, STATUS_TANGENCY, STATUS_VERTEX, STATUS_CAP)


@dataclass(frozen=True)
class PhasePoint:
    """Point of the gate cross section: position on a gate, inward velocity.

    In the random-gates variant `gate` holds the polygon side index instead
    of the usual 1/2 label.
    """

    q: Vec2
    v: Vec2
    gate: int
    subgate: int = 0


@dataclass(frozen=True)
class TraversalResult:
    exit: Optional[PhasePoint]
    e: int                      # -1, 0, +1; 0 only for random-gate reflections
    flight_time: float
    collisions: int
    max_flat_run: int           # longest run of flat bounces between curved hits
    gamma_first_curved: Optional[float]
    status: str
    flats_before_curved: int = 0


@dataclass
class PovState:
    """Orbit state in the particle's own frame: the tube is re-centered after
    every crossing, so `shift_offset` equals the running exit-value sum."""

    x: PhasePoint
    realization: TubeRealization
    shift_offset: int = 0


@dataclass(frozen=True)
class CocycleTrace:
    exits: tuple
    partial_sums: tuple
    first_return: Optional[int]
    status: str


@dataclass(frozen=True)
class TubePoint:
    """Phase point in absolute tube coordinates, tagged with its cell index."""

    cell: int
    point: PhasePoint


def partial_sums(exits) -> tuple:
    """Running sums S_0 = 0, S_n = e_0 + ... + e_{n-1}."""
    out = [0]
    for e in exits:
        out.append(out[-1] + e)
    return tuple(out[1:])


# ---------------------------------------------------------------------------
# The event loop.
# ---------------------------------------------------------------------------

@dataclass
class _TraceOutcome:
    status: str
    hit: Optional[HitRecord]
    q: Vec2
    v: Vec2
    time: float
    collisions: int
    max_flat_run: int
    flats_before_curved: int
    gamma_first: Optional[float]
    stopped_on_curved: bool = False


def trace_in_cell(q: Vec2, v: Vec2, pieces, exclude, cap: int,
                  stop_on_curved: bool = False) -> _TraceOutcome:
    """Run the event loop from an arbitrary start until a gate is crossed.

    With stop_on_curved the loop instead halts at the first clean curved hit
    (before reflecting), which is what the free-flight validators need.
    """
    time = 0.0
    collisions = 0
    run = 0
    max_run = 0
    flats_before = 0
    gamma: Optional[float] = None
    while True:
        rec = first_hit(q, v, pieces, exclude=exclude)
        if rec is None:
            raise GeometryError(f"ray from {q} along {v} escaped the cell")
        time += rec.t
        if rec.flag == "vertex":
            return _TraceOutcome(STATUS_VERTEX, rec, rec.point, v, time, collisions,
                                 max_run, flats_before, gamma)
        if rec.flag == "tangential":
            return _TraceOutcome(STATUS_TANGENCY, rec, rec.point, v, time, collisions,
                                 max_run, flats_before, gamma)
        if rec.kind == "gate":
            return _TraceOutcome(STATUS_OK, rec, rec.point, v, time, collisions,
                                 max_run, flats_before, gamma)
        if rec.kind == "curved":
            if gamma is None:
                gamma = time
                flats_before = collisions
            if stop_on_curved:
                return _TraceOutcome(STATUS_OK, rec, rec.point, v, time, collisions,
                                     max_run, flats_before, gamma, stopped_on_curved=True)
            run = 0
        else:
            run += 1
            if run > max_run:
                max_run = run
        collisions += 1
        if collisions > cap:
            return _TraceOutcome(STATUS_CAP, rec, rec.point, v, time, collisions,
                                 max_run, flats_before, gamma)
        try:
            v = reflect(v, rec.normal)
        except TangencyError:
            return _TraceOutcome(STATUS_TANGENCY, rec, rec.point, v, time, collisions,
                                 max_run, flats_before, gamma)
        q = rec.point
        exclude = rec.piece_id


def traverse_cell(x: PhasePoint, cfg: CellConfig, tpl: CellTemplate,
                  cap: int = DEFAULT_CAP) -> TraversalResult:
    """One application of the cell-crossing map in the particle's frame.

    Traces x until it crosses a gate; exiting through gate 2 means entering
    the next cell (e = +1), through gate 1 the previous one (e = -1).  The
    exit point is translated back into the fundamental cell, so the result
    is again a phase point of the same cross section.
    """
    o = tpl.gate_normal(x.gate, x.subgate)
    if x.v.dot(o) <= 0.0:
        raise ValueError("phase point velocity must point into the cell")
    pieces = cell_pieces(tpl, cfg)
    entry = gate_piece_id(tpl, x.gate, x.subgate)
    out = trace_in_cell(x.q, x.v, pieces, entry, cap)
    if out.status != STATUS_OK:
        return TraversalResult(None, 0, out.time, out.collisions, out.max_flat_run,
                               out.gamma_first, out.status, out.flats_before_curved)
    gate, sub = gate_of_piece(tpl, out.hit.piece_id)
    e = 1 if gate == 2 else -1
    q1 = out.q - tpl.tau * e
    exit_gate = 1 if e == 1 else 2
    exit_point = PhasePoint(q1, out.v, exit_gate, sub)
    return TraversalResult(exit_point, e, out.time, out.collisions, out.max_flat_run,
                           out.gamma_first, STATUS_OK, out.flats_before_curved)


def pov_step(state: PovState, cap: int = DEFAULT_CAP):
    """One crossing in the particle's frame; the tube shifts under the orbit.

    Returns (new_state_or_None, TraversalResult).  The configuration seen is
    the realized cell at the current shift offset, so iterating this map is
    the dynamics of the re-centered system.
    """
    cfg = state.realization.cell(state.shift_offset)
    res = traverse_cell(state.x, cfg, state.realization.template, cap)
    if res.status != STATUS_OK:
        return None, res
    new = PovState(res.exit, state.realization, state.shift_offset + res.e)
    return new, res


def tube_map_T(tp: TubePoint, realization: TubeRealization,
               cap: int = DEFAULT_CAP) -> tuple:
    """First-return map to the union of all gates, in absolute coordinates.

    The cell's pieces are translated to their true position in the tube and
    no pull-back is applied; the landing cell index is cell + e.  Returns
    (TubePoint or None, TraversalResult with exit in absolute coordinates).
    """
    tpl = realization.template
    n = tp.cell
    shift = tpl.tau * n
    o = tpl.gate_normal(tp.point.gate, tp.point.subgate)
    if tp.point.v.dot(o) <= 0.0:
        raise ValueError("phase point velocity must point into the cell")
    pieces = cell_pieces(tpl, realization.cell(n), shift=shift)
    entry = gate_piece_id(tpl, tp.point.gate, tp.point.subgate)
    out = trace_in_cell(tp.point.q, tp.point.v, pieces, entry, cap)
    if out.status != STATUS_OK:
        return None, TraversalResult(None, 0, out.time, out.collisions,
                                     out.max_flat_run, out.gamma_first, out.status,
                                     out.flats_before_curved)
    gate, sub = gate_of_piece(tpl, out.hit.piece_id)
    e = 1 if gate == 2 else -1
    exit_gate = 1 if e == 1 else 2
    exit_point = PhasePoint(out.q, out.v, exit_gate, sub)
    res = TraversalResult(exit_point, e, out.time, out.collisions, out.max_flat_run,
                          out.gamma_first, STATUS_OK, out.flats_before_curved)
    return TubePoint(n + e, exit_point), res


def run_cocycle(state: PovState, horizon: int, cap: int = DEFAULT_CAP) -> CocycleTrace:
    """Iterate crossings up to `horizon`, recording exits, running sums and
    the first time the sum returns to zero (a return to the starting cell)."""
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    exits = []
    sums = []
    s = 0
    first_return = None
    status = STATUS_OK
    for k in range(1, horizon + 1):
        state, res = pov_step(state, cap)
        if res.status != STATUS_OK:
            status = res.status
            break
        exits.append(res.e)
        s += res.e
        sums.append(s)
        if s == 0 and first_return is None:
            first_return = k
    return CocycleTrace(tuple(exits), tuple(sums), first_return, status)


# ---------------------------------------------------------------------------
# Random gates (cells with p >= 2 congruent sides, randomized gluing).
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RandomGateTemplate:
    """Polygon with p >= 2 congruent sides that may all serve as gates."""

    vertices: tuple
    congruent_sides: tuple

    def __post_init__(self):
        object.__setattr__(self, "vertices", tuple(self.vertices))
        object.__setattr__(self, "congruent_sides", tuple(self.congruent_sides))
        if polygon_signed_area(self.vertices) <= 0.0:
            raise ValueError("template polygon must be counterclockwise")
        if len(self.congruent_sides) < 2:
            raise ValueError("need at least two congruent sides")
        lengths = [self.side(i).length() for i in self.congruent_sides]
        if max(lengths) - min(lengths) > 1e-9:
            raise ValueError("designated sides are not congruent")

    def n_sides(self) -> int:
        return len(self.vertices)

    def side(self, i: int) -> Segment:
        return Segment(self.vertices[i], self.vertices[(i + 1) % len(self.vertices)])

    def side_direction(self, i: int) -> Vec2:
        return self.side(i).direction()

    def inner_normal(self, i: int) -> Vec2:
        return self.side_direction(i).perp()


@dataclass(frozen=True)
class GateChoice:
    """Per-cell random data: which congruent sides act as the backward (j1)
    and forward (j2) gates, whether the gluing flips orientation, and the
    scatterer content."""

    j1: int
    j2: int
    flip: bool = False
    config: CellConfig = CellConfig()

    def __post_init__(self):
        if self.j1 == self.j2:
            raise ValueError("gate selectors must pick two different sides")


def _side_frame(tpl: RandomGateTemplate, j: int):
    seg = tpl.side(j)
    return seg.a, tpl.side_direction(j), tpl.inner_normal(j), seg.length()


def roto_map(tpl: RandomGateTemplate, j: int, j2: int, q: Vec2, v: Vec2):
    """Rigidly map an outgoing pair based on side j to an incoming pair on
    side j2 (the gluing used when consecutive cells share those sides)."""
    a, d, o, length = _side_frame(tpl, j)
    a2, d2, o2, _ = _side_frame(tpl, j2)
    s = (q - a).dot(d)
    vn = v.dot(o)
    vt = v.dot(d)
    q2 = a2 + d2 * (length - s)
    v2 = o2 * (-vn) + d2 * (-vt)
    return q2, v2


def flip_map(tpl: RandomGateTemplate, j: int, q: Vec2, v: Vec2):
    """Mirror a pair about the midpoint of side j (opposite cell orientation):
    the position is reflected along the side, the tangential velocity flips."""
    a, d, _, length = _side_frame(tpl, j)
    s = (q - a).dot(d)
    q2 = a + d * (length - s)
    v2 = v - d * (2.0 * v.dot(d))
    return q2, v2


def traverse_random_gates(x: PhasePoint, prev: GateChoice, cur: GateChoice,
                          nxt: GateChoice, tpl: RandomGateTemplate,
                          cap: int = DEFAULT_CAP) -> TraversalResult:
    """Crossing map for randomly selected gates among p congruent sides.

    The trajectory runs until it reaches any congruent side.  Reaching the
    forward gate hands the point to the next cell's backward gate (e = +1),
    the backward gate hands it to the previous cell's forward gate (e = -1),
    and any other congruent side just reflects it specularly (e = 0).  In
    `PhasePoint.gate` the polygon side index is stored.
    """
    pieces = []
    pid_to_side = {}
    congruent = set(tpl.congruent_sides)
    pid = 0
    for i in range(tpl.n_sides()):
        kind = "gate" if i in congruent else "flat"
        pieces.append(Piece(pid, tpl.side(i), kind))
        pid_to_side[pid] = i
        pid += 1
    for s in cur.config.scatterers:
        for shape in scatterer_pieces(s):
            kind = "flat" if isinstance(shape, Segment) else "curved"
            pieces.append(Piece(pid, shape, kind))
            pid += 1
    entry = None
    for p, side in pid_to_side.items():
        if side == x.gate:
            entry = p
    out = trace_in_cell(x.q, x.v, pieces, entry, cap)
    if out.status != STATUS_OK:
        return TraversalResult(None, 0, out.time, out.collisions, out.max_flat_run,
                               out.gamma_first, out.status, out.flats_before_curved)
    j = pid_to_side[out.hit.piece_id]
    q1, v1 = out.q, out.v
    if j == cur.j2:
        q2, v2 = roto_map(tpl, j, nxt.j1, q1, v1)
        if cur.flip:
            q2, v2 = flip_map(tpl, nxt.j1, q2, v2)
        e, side_out = 1, nxt.j1
    elif j == cur.j1:
        q2, v2 = roto_map(tpl, j, prev.j2, q1, v1)
        if prev.flip:
            q2, v2 = flip_map(tpl, prev.j2, q2, v2)
        e, side_out = -1, prev.j2
    else:
        o = tpl.inner_normal(j)
        if abs(v1.dot(o)) < EPS_TAN:
            return TraversalResult(None, 0, out.time, out.collisions, out.max_flat_run,
                                   out.gamma_first, STATUS_TANGENCY,
                                   out.flats_before_curved)
        q2, v2 = q1, v1 - o * (2.0 * v1.dot(o))
        e, side_out = 0, j
    exit_point = PhasePoint(q2, v2, side_out, 0)
    return TraversalResult(exit_point, e, out.time, out.collisions, out.max_flat_run,
                           out.gamma_first, STATUS_OK, out.flats_before_curved)
