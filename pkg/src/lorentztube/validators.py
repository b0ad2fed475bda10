"""Sampled numerical checks of the model's standing geometric assumptions.

Nothing here proves anything: each check samples trajectories or inspects
static geometry and reports extremes, witnesses and explicit violations of
the *declared* bounds.  A clean report means "no violation found at this
sample size and seed", and every sub-report carries its sample size so the
claim is never stronger than the evidence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import randomness as rng
from .dynamics import DEFAULT_CAP, STATUS_OK, PhasePoint, trace_in_cell, traverse_cell
from .geometry import Arc, unit_from_angle
from .tube import (
    Bounds,
    CellConfig,
    CellTemplate,
    ConfigurationProcess,
    Disc,
    TubeRealization,
    cell_pieces,
    gate_of_piece,
    gate_piece_id,
    scatterer_pieces,
    validate_config,
)


@dataclass
class A1Report:
    variant: str
    irreducible: bool
    stationary_residual: float


@dataclass
class A2Report:
    max_pieces_seen: int
    bound_K: int
    violations: int


@dataclass
class A3Report:
    applicable: bool
    samples: int
    gamma_min: Optional[float]
    gamma_max: Optional[float]
    max_flat_run: int
    gamma_violations: int        # sampled flights outside [gamma_m, gamma_M]
    flat_violations: int         # flat runs above the declared M
    singular: int
    censored: int                # traces cut off while still violating gamma_M


@dataclass
class A4Report:
    k_min_seen: Optional[float]
    bound_k_m: float
    violations: int


@dataclass
class A5Report:
    attempts: int
    witnesses: dict              # (entry part, exit part) -> (PhasePoint, PhasePoint)
    missing: tuple               # pairs with no non-singular witness found


@dataclass
class AssumptionReport:
    seed: int
    window: tuple
    a1: A1Report
    a2: A2Report
    a3: A3Report
    a4: A4Report
    a5: dict                     # config name or index -> A5Report
    config_violations: dict      # config name or index -> list of Violation

    def fatal(self) -> bool:
        """True when an explicit violation was found: a reducible process,
        a breached declared bound, or an invalid configuration.  Absence
        flags (no curved boundary for the flight check, gate pairs with no
        witness found) are reported but not fatal: a failed random search is
        not a violation.
        """
        if not self.a1.irreducible:
            return True
        if self.a2.violations or self.a4.violations:
            return True
        if self.a3.applicable and (self.a3.gamma_violations or self.a3.flat_violations
                                   or self.a3.censored):
            return True
        for violations in self.config_violations.values():
            if violations:
                return True
        return False

    def clean(self) -> bool:
        """Strict verdict: nothing fatal, no absence flags anywhere."""
        return (not self.fatal() and self.a3.applicable
                and all(not rep.missing for rep in self.a5.values()))


def check_a1(process: ConfigurationProcess) -> A1Report:
    """Ergodicity proxy: IID is always fine; a Markov chain must have a
    strongly connected support graph and a genuinely stationary vector."""
    if process.variant == "iid":
        return A1Report("iid", True, 0.0)
    P = np.asarray(process.transition, dtype=np.float64)
    pi = np.asarray(process.stationary, dtype=np.float64)
    m = P.shape[0]

    def reach(start, mat):
        seen = {start}
        stack = [start]
        while stack:
            i = stack.pop()
            for j in range(m):
                if mat[i, j] > 0.0 and j not in seen:
                    seen.add(j)
                    stack.append(j)
        return seen

    irreducible = len(reach(0, P)) == m and len(reach(0, P.T)) == m
    residual = float(np.max(np.abs(pi @ P - pi)))
    return A1Report("markov", irreducible, residual)


def _curved_inventory(realization: TubeRealization, window):
    """Per-cell disc lists and curved boundary lengths over the window."""
    cells = []
    for n in range(window[0], window[1]):
        cfg = realization.cell(n)
        discs = cfg.discs()
        length = sum(2.0 * math.pi * d.radius for d in discs)
        cells.append((n, cfg, discs, length))
    return cells


def _departure_point(tpl, cfg, discs, u_arc, u_pos, u_theta):
    """Flux-style departure from the curved boundary: point uniform in arc
    length, direction cosine-distributed about the outward normal."""
    total = sum(d.radius for d in discs)
    pick = u_arc * total
    acc = 0.0
    disc = discs[-1]
    for d in discs:
        acc += d.radius
        if pick < acc:
            disc = d
            break
    phi = u_pos * 2.0 * math.pi
    n_out = unit_from_angle(phi)
    tangent = n_out.perp()
    q = disc.center + n_out * disc.radius
    theta = math.asin(2.0 * u_theta - 1.0)
    v = n_out * math.cos(theta) + tangent * math.sin(theta)
    pieces = cell_pieces(tpl, cfg)
    pid = None
    for piece in pieces:
        if isinstance(piece.shape, Arc):
            c = piece.shape.center
            if abs(c.x - disc.center.x) < 1e-15 and abs(c.y - disc.center.y) < 1e-15 \
                    and abs(piece.shape.radius - disc.radius) < 1e-15:
                pid = piece.piece_id
                break
    return q, v, pid, pieces


def check_a3_a4(realization: TubeRealization, window: tuple, samples: int,
                declared: Bounds, seed: int, cap: int = DEFAULT_CAP):
    """Sample curved-boundary departures and measure the free flight to the
    next curved hit, counting flat bounces on the way; also scan static
    curvature and piece counts over the window.

    Returns (A2Report, A3Report, A4Report).
    """
    tpl = realization.template
    cells = _curved_inventory(realization, window)

    max_pieces = 0
    a2_viol = 0
    k_min = None
    a4_viol = 0
    for _, cfg, _, _ in cells:
        for s in cfg.scatterers:
            npieces = len(scatterer_pieces(s))
            max_pieces = max(max_pieces, npieces)
            if npieces > declared.K:
                a2_viol += 1
            if isinstance(s, Disc):
                k = 1.0 / s.radius
                k_min = k if k_min is None else min(k_min, k)
                if k < declared.k_m - 1e-12 or k > declared.k_M + 1e-12:
                    a4_viol += 1
    a2 = A2Report(max_pieces, declared.K, a2_viol)
    a4 = A4Report(k_min, declared.k_m, a4_viol)

    weights = np.array([c[3] for c in cells])
    if weights.sum() == 0.0:
        return a2, A3Report(False, 0, None, None, 0, 0, 0, 0, 0), a4

    cum = np.cumsum(weights / weights.sum())
    gamma_cutoff = 4.0 * declared.gamma_M
    g_min = math.inf
    g_max = 0.0
    flat_max = 0
    g_viol = 0
    f_viol = 0
    singular = 0
    censored = 0
    for i in range(samples):
        u = rng.uniforms(rng.key64(seed, rng.KIND_GAMMA, i), 4)
        ci = rng.pick(cum, float(u[0]))
        n, cfg, discs, _ = cells[ci]
        q, v, exclude, pieces = _departure_point(tpl, cfg, discs,
                                                 float(u[1]), float(u[2]), float(u[3]))
        offset = n
        gamma = 0.0
        flats = 0
        done = False
        while True:
            out = trace_in_cell(q, v, pieces, exclude, cap, stop_on_curved=True)
            if out.status != STATUS_OK:
                singular += 1
                done = False
                break
            if out.stopped_on_curved:
                gamma += out.time
                flats += out.collisions
                done = True
                break
            gamma += out.time
            flats += out.collisions
            if gamma > gamma_cutoff:
                censored += 1
                done = False
                break
            gate, sub = gate_of_piece(tpl, out.hit.piece_id)
            e = 1 if gate == 2 else -1
            q = out.q - tpl.tau * e
            v = out.v
            offset += e
            pieces = cell_pieces(tpl, realization.cell(offset))
            exclude = gate_piece_id(tpl, 1 if e == 1 else 2, sub)
        if not done:
            continue
        g_min = min(g_min, gamma)
        g_max = max(g_max, gamma)
        flat_max = max(flat_max, flats)
        if gamma < declared.gamma_m or gamma > declared.gamma_M:
            g_viol += 1
        if flats > declared.M:
            f_viol += 1

    if not math.isfinite(g_min):
        g_min_out, g_max_out = None, None
    else:
        g_min_out, g_max_out = g_min, g_max
    a3 = A3Report(True, samples, g_min_out, g_max_out,
                  flat_max, g_viol, f_viol, singular, censored)
    return a2, a3, a4


def check_a5(tpl: CellTemplate, cfg: CellConfig, attempts: int, seed: int,
             cap: int = DEFAULT_CAP) -> A5Report:
    """Random search for non-singular traversals between every pair of gate
    parts; stores the first witness per (entry, exit) pair."""
    parts = []
    for gate in (1, 2):
        for sub in range(len(tpl.gate_sides(gate))):
            parts.append((gate, sub))
    witnesses = {}
    for entry in parts:
        gate, sub = entry
        seg = tpl.gate_segment(gate, sub)
        d = tpl.gate_direction(gate, sub)
        o = tpl.gate_normal(gate, sub)
        key = rng.key64(seed, rng.KIND_WITNESS, gate, sub)
        found = 0
        for i in range(attempts):
            u = rng.uniforms(key, 2, offset=2 * i)
            q = seg.a + d * (float(u[0]) * seg.length())
            theta = math.asin(2.0 * float(u[1]) - 1.0)
            x = PhasePoint(q, o * math.cos(theta) + d * math.sin(theta), gate, sub)
            res = traverse_cell(x, cfg, tpl, cap)
            if res.status != STATUS_OK:
                continue
            # the gate the trajectory left through, not the landing gate
            left_through = 2 if res.e == 1 else 1
            pair = (entry, (left_through, res.exit.subgate))
            if pair not in witnesses:
                witnesses[pair] = (x, res.exit)
                found += 1
            if found == len(parts):
                break
    missing = tuple((entry, exit_part)
                    for entry in parts for exit_part in parts
                    if (entry, exit_part) not in witnesses)
    return A5Report(attempts, witnesses, missing)


def check_assumptions(realization: TubeRealization, samples: int = 10_000,
                      attempts: int = 1_000, declared: Bounds = Bounds(),
                      window: tuple = (0, 32), cap: int = DEFAULT_CAP,
                      seed: Optional[int] = None) -> AssumptionReport:
    """Run every assumption check for one realization and collect a report."""
    if seed is None:
        seed = rng.key64(realization.master_seed, rng.KIND_GAMMA)
    tpl = realization.template
    process = realization.process
    a1 = check_a1(process)
    a2, a3, a4 = check_a3_a4(realization, window, samples, declared, seed, cap)
    a5 = {}
    config_violations = {}
    for idx, cfg in enumerate(process.library):
        label = cfg.name or str(idx)
        a5[label] = check_a5(tpl, cfg, attempts, rng.key64(seed, idx), cap)
        config_violations[label] = validate_config(cfg, tpl, declared)
    return AssumptionReport(seed=seed, window=window, a1=a1, a2=a2, a3=a3,
                            a4=a4, a5=a5, config_violations=config_violations)
