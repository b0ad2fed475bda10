"""Compiled batch event loop over packed cell geometry.

The scalar path in dynamics.py is readable but far too slow for the Monte
Carlo budgets, so this module packs a tube's cells into flat arrays and runs
the identical event loop through numba over whole batches of orbits.  The
intersection kernels are jit-compiled from geometry.py verbatim, and the
loop mirrors dynamics.trace_in_cell decision for decision; the test suite
asserts exact agreement between the two paths.

Batch runners release the GIL, so worker parallelism is plain threads over
orbit chunks.  Every per-orbit output lands in that orbit's own slot, which
makes results independent of thread count and scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from . import geometry
from .geometry import EPS_LEN, EPS_TAN, Segment
from .tube import CellTemplate, cell_pieces, gate_of_piece

STATUS_NAMES = ("ok", "singular_tangency", "singular_vertex", "cap_exceeded", "escaped")
OK, TANGENCY, VERTEX, CAP, ESCAPED = range(5)

_seg_hit = njit(cache=True)(geometry.ray_segment_hit)
_arc_hit = njit(cache=True)(geometry.ray_arc_hit)


@dataclass
class CompiledTube:
    """Per-config piece arrays in the canonical cell_pieces order.

    Config c owns segment rows seg_off[c]:seg_off[c+1] and arc rows
    arc_off[c]:arc_off[c+1].  Piece ids within a config are the segment row
    index, then n_segments + arc row index, matching the scalar layout.
    """

    tau: tuple
    n_gate1: int
    n_gate2: int
    seg_data: np.ndarray   # (S, 4) ax ay bx by
    seg_gate: np.ndarray   # (S,) 0 plain wall, 1 gate 1, 2 gate 2
    seg_sub: np.ndarray    # (S,) sub-gate index
    seg_off: np.ndarray    # (C+1,)
    arc_data: np.ndarray   # (A, 5) cx cy r a0 span
    arc_off: np.ndarray    # (C+1,)
    arc_jitter: np.ndarray  # (C,) leading arcs of the config that jitter moves

    def entry_piece(self, gate: int, sub: int = 0) -> int:
        return sub if gate == 1 else self.n_gate1 + sub


def compile_tube(tpl: CellTemplate, configs) -> CompiledTube:
    seg_rows, seg_gate, seg_sub, seg_off = [], [], [], [0]
    arc_rows, arc_off, arc_jn = [], [0], []
    for cfg in configs:
        pieces = cell_pieces(tpl, cfg)
        n_arcs = 0
        for piece in pieces:
            if isinstance(piece.shape, Segment):
                s = piece.shape
                seg_rows.append((s.a.x, s.a.y, s.b.x, s.b.y))
                info = gate_of_piece(tpl, piece.piece_id) if piece.kind == "gate" else None
                seg_gate.append(0 if info is None else info[0])
                seg_sub.append(0 if info is None else info[1])
            else:
                a = piece.shape
                arc_rows.append((a.center.x, a.center.y, a.radius,
                                 a.angle_start, a.angle_span))
                n_arcs += 1
        seg_off.append(len(seg_rows))
        arc_off.append(len(arc_rows))
        arc_jn.append(n_arcs)
    return CompiledTube(
        tau=(tpl.tau.x, tpl.tau.y),
        n_gate1=len(tpl.gate1_sides),
        n_gate2=len(tpl.gate2_sides),
        seg_data=np.array(seg_rows, dtype=np.float64).reshape(-1, 4),
        seg_gate=np.array(seg_gate, dtype=np.int8),
        seg_sub=np.array(seg_sub, dtype=np.int16),
        seg_off=np.array(seg_off, dtype=np.int64),
        arc_data=np.array(arc_rows, dtype=np.float64).reshape(-1, 5),
        arc_off=np.array(arc_off, dtype=np.int64),
        arc_jitter=np.array(arc_jn, dtype=np.int64),
    )


@njit(cache=True)
def _first_hit(qx, qy, vx, vy, segs, arcs, n_jit_arcs, jx, jy, sx, sy, exclude):
    """Earliest hit over one cell's pieces; ties across pieces flag a vertex.

    Pieces are shifted by (sx, sy); the first n_jit_arcs arcs additionally by
    the cell jitter (jx, jy).  Returns (pid, t, px, py, nx, ny, flag); pid is
    -1 when nothing is hit.
    """
    ns = segs.shape[0]
    na = arcs.shape[0]
    bt = math.inf
    bpid = -1
    bpx = 0.0
    bpy = 0.0
    bnx = 0.0
    bny = 0.0
    bflag = 0
    for i in range(ns):
        if i == exclude:
            continue
        ok, t, px, py, nx, ny, flag = _seg_hit(
            qx, qy, vx, vy,
            segs[i, 0] + sx, segs[i, 1] + sy, segs[i, 2] + sx, segs[i, 3] + sy)
        if not ok:
            continue
        if bpid < 0 or t < bt - EPS_LEN:
            bt = t; bpid = i; bpx = px; bpy = py; bnx = nx; bny = ny; bflag = flag
        elif t < bt + EPS_LEN:
            if t < bt:
                bt = t; bpid = i; bpx = px; bpy = py; bnx = nx; bny = ny
            bflag = 2
    for k in range(na):
        pid = ns + k
        if pid == exclude:
            continue
        cx = arcs[k, 0] + sx
        cy = arcs[k, 1] + sy
        if k < n_jit_arcs:
            cx += jx
            cy += jy
        ok, t, px, py, nx, ny, flag = _arc_hit(
            qx, qy, vx, vy, cx, cy, arcs[k, 2], arcs[k, 3], arcs[k, 4])
        if not ok:
            continue
        if bpid < 0 or t < bt - EPS_LEN:
            bt = t; bpid = pid; bpx = px; bpy = py; bnx = nx; bny = ny; bflag = flag
        elif t < bt + EPS_LEN:
            if t < bt:
                bt = t; bpid = pid; bpx = px; bpy = py; bnx = nx; bny = ny
            bflag = 2
    return (bpid, bt, bpx, bpy, bnx, bny, bflag)


@njit(cache=True)
def _traverse(qx, qy, vx, vy, segs, seg_gate, arcs, n_jit_arcs, jx, jy,
              sx, sy, exclude, cap):
    """Event loop from a gate entry to the next gate crossing.

    Returns (status, piece, qx, qy, vx, vy, time, collisions, max_flat_run,
    flats_before_curved, gamma_first, v_norm_err_max).  gamma_first is -1.0
    when no curved piece was hit.
    """
    ns = segs.shape[0]
    time = 0.0
    collisions = 0
    run = 0
    max_run = 0
    flats_before = 0
    gamma = -1.0
    verr = 0.0
    while True:
        pid, t, px, py, nx, ny, flag = _first_hit(
            qx, qy, vx, vy, segs, arcs, n_jit_arcs, jx, jy, sx, sy, exclude)
        if pid < 0:
            return (ESCAPED, -1, qx, qy, vx, vy, time, collisions, max_run,
                    flats_before, gamma, verr)
        time += t
        if flag == 2:
            return (VERTEX, pid, px, py, vx, vy, time, collisions, max_run,
                    flats_before, gamma, verr)
        if flag == 1:
            return (TANGENCY, pid, px, py, vx, vy, time, collisions, max_run,
                    flats_before, gamma, verr)
        if pid < ns and seg_gate[pid] > 0:
            return (OK, pid, px, py, vx, vy, time, collisions, max_run,
                    flats_before, gamma, verr)
        if pid >= ns:
            if gamma < 0.0:
                gamma = time
                flats_before = collisions
            run = 0
        else:
            run += 1
            if run > max_run:
                max_run = run
        collisions += 1
        if collisions > cap:
            return (CAP, pid, px, py, vx, vy, time, collisions, max_run,
                    flats_before, gamma, verr)
        d = vx * nx + vy * ny
        if abs(d) < EPS_TAN:
            return (TANGENCY, pid, px, py, vx, vy, time, collisions, max_run,
                    flats_before, gamma, verr)
        vx = vx - 2.0 * d * nx
        vy = vy - 2.0 * d * ny
        err = abs(vx * vx + vy * vy - 1.0)
        if err > verr:
            verr = err
        qx = px
        qy = py
        exclude = pid


@njit(cache=True, nogil=True)
def _run_pov(q0, v0, gate0, sub0, off0, seg_data, seg_gate, seg_sub, seg_off,
             arc_data, arc_off, arc_jn, idx_win, jx_win, jy_win, win_lo,
             taux, tauy, n_g1, horizon, cap, grid, e_out, pov_frame):
    """Run N orbits of the crossing map for up to `horizon` crossings each.

    Orbit o starts in tube cell off0[o].  pov_frame True: exit points are
    pulled back into the fundamental cell after every crossing (the
    re-centered system).  False: coordinates stay absolute and the cell
    geometry is translated instead (the plain tube Poincare map); both keep
    the same exit bookkeeping.  e_out with a zero second dimension disables
    per-step exit recording.
    """
    n = q0.shape[0]
    n_grid = grid.shape[0]
    record_e = e_out.shape[1] > 0
    status = np.zeros(n, dtype=np.int8)
    steps = np.zeros(n, dtype=np.int64)
    first_ret = np.full(n, -1, dtype=np.int64)
    s_grid = np.zeros((n, n_grid), dtype=np.int64)
    grid_set = np.zeros((n, n_grid), dtype=np.int8)
    qf = np.empty((n, 2), dtype=np.float64)
    vf = np.empty((n, 2), dtype=np.float64)
    gatef = np.zeros(n, dtype=np.int8)
    subf = np.zeros(n, dtype=np.int16)
    offsetf = np.zeros(n, dtype=np.int64)
    collisions = np.zeros(n, dtype=np.int64)
    maxflat = np.zeros(n, dtype=np.int64)
    verrs = np.zeros(n, dtype=np.float64)
    flight = np.zeros(n, dtype=np.float64)

    for o in range(n):
        qx = q0[o, 0]
        qy = q0[o, 1]
        vx = v0[o, 0]
        vy = v0[o, 1]
        gate = gate0[o]
        sub = sub0[o]
        exclude = sub if gate == 1 else n_g1 + sub
        offset = off0[o]
        s = 0
        g = 0
        st = OK
        for k in range(1, horizon + 1):
            c = idx_win[offset - win_lo]
            s0 = seg_off[c]
            s1 = seg_off[c + 1]
            a0 = arc_off[c]
            a1 = arc_off[c + 1]
            if pov_frame:
                sx = 0.0
                sy = 0.0
            else:
                sx = offset * taux
                sy = offset * tauy
            (st, pid, px, py, nvx, nvy, t, nc, mr, _fb, _gm, ve) = _traverse(
                qx, qy, vx, vy, seg_data[s0:s1], seg_gate[s0:s1],
                arc_data[a0:a1], arc_jn[c],
                jx_win[offset - win_lo], jy_win[offset - win_lo],
                sx, sy, exclude, cap)
            collisions[o] += nc
            flight[o] += t
            if mr > maxflat[o]:
                maxflat[o] = mr
            if ve > verrs[o]:
                verrs[o] = ve
            if st != OK:
                break
            gid = seg_gate[s0 + pid]
            e = 1 if gid == 2 else -1
            if pov_frame:
                qx = px - e * taux
                qy = py - e * tauy
            else:
                qx = px
                qy = py
            vx = nvx
            vy = nvy
            sub = seg_sub[s0 + pid]
            gate = 1 if e == 1 else 2
            exclude = sub if gate == 1 else n_g1 + sub
            s += e
            offset += e
            steps[o] = k
            if record_e:
                e_out[o, k - 1] = e
            if s == 0 and first_ret[o] < 0:
                first_ret[o] = k
            while g < n_grid and grid[g] == k:
                s_grid[o, g] = s
                grid_set[o, g] = 1
                g += 1
        status[o] = st
        qf[o, 0] = qx
        qf[o, 1] = qy
        vf[o, 0] = vx
        vf[o, 1] = vy
        gatef[o] = gate
        subf[o] = sub
        offsetf[o] = offset
    return (status, steps, first_ret, s_grid, grid_set, qf, vf, gatef, subf,
            offsetf, collisions, maxflat, verrs, flight)


_EMPTY_E = np.zeros((0, 0), dtype=np.int8)


@dataclass
class BatchResult:
    status: np.ndarray       # engine status codes per orbit
    steps: np.ndarray        # completed crossings per orbit
    first_return: np.ndarray  # first k with S_k == 0, -1 if never
    s_grid: np.ndarray       # S_n at the requested grid points
    grid_set: np.ndarray     # 1 where the orbit actually reached that n
    q_final: np.ndarray
    v_final: np.ndarray
    gate_final: np.ndarray
    sub_final: np.ndarray
    offset_final: np.ndarray
    collisions: np.ndarray
    max_flat_run: np.ndarray
    v_norm_err: np.ndarray
    flight_time: np.ndarray
    exits: np.ndarray = None  # (N, horizon) int8 when tracing was requested

    def status_name(self, o: int) -> str:
        return STATUS_NAMES[self.status[o]]


def run_batch(ct: CompiledTube, window, win_lo: int, starts, horizon: int,
              cap: int, grid=None, trace_exits: bool = False,
              pov_frame: bool = True) -> BatchResult:
    """Drive the compiled crossing loop for a batch of orbit starts.

    `window` is the (indices, jitter_x, jitter_y) triple for cells
    win_lo..win_lo+len-1; `starts` is a dict with q (N,2), v (N,2),
    gate (N,), sub (N,) arrays.  The offsets reached never leave
    [-horizon, horizon], so the window must cover that range around 0.
    """
    idx_win, jx_win, jy_win = window
    q0 = np.ascontiguousarray(starts["q"], dtype=np.float64)
    v0 = np.ascontiguousarray(starts["v"], dtype=np.float64)
    gate0 = np.ascontiguousarray(starts["gate"], dtype=np.int8)
    n = q0.shape[0]
    sub0 = np.ascontiguousarray(starts.get("sub", np.zeros(n)), dtype=np.int16)
    off0 = np.ascontiguousarray(starts.get("offset", np.zeros(n)), dtype=np.int64)
    if grid is None:
        grid = np.zeros(0, dtype=np.int64)
    grid = np.ascontiguousarray(grid, dtype=np.int64)
    e_out = np.zeros((n, horizon), dtype=np.int8) if trace_exits else _EMPTY_E
    out = _run_pov(q0, v0, gate0, sub0, off0,
                   ct.seg_data, ct.seg_gate, ct.seg_sub, ct.seg_off,
                   ct.arc_data, ct.arc_off, ct.arc_jitter,
                   np.ascontiguousarray(idx_win, dtype=np.int16),
                   np.ascontiguousarray(jx_win, dtype=np.float64),
                   np.ascontiguousarray(jy_win, dtype=np.float64),
                   win_lo, ct.tau[0], ct.tau[1], ct.n_gate1,
                   horizon, cap, grid, e_out, pov_frame)
    return BatchResult(*out, exits=(e_out if trace_exits else None))
