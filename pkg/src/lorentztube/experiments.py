"""Monte Carlo experiments: flux sampling, recurrence and cocycle statistics.

Initial conditions are drawn from the invariant flux measure on the gate
cross section: position uniform along the gate, direction at angle theta
from the inward normal with density cos(theta)/2, sampled by the inverse CDF
theta = arcsin(2u - 1).  Orbits are independent and keyed by their index, so
experiments are reproducible bit for bit for any worker count: workers only
split the orbit range into fixed-size chunks, and every aggregate is either
an integer counter or an exactly rounded float sum.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import engine
from . import randomness as rng
from .dynamics import DEFAULT_CAP, PhasePoint
from .tube import CellTemplate, TubeRealization

CHUNK = 256  # orbits per work unit; fixed so results never depend on workers


@dataclass(frozen=True)
class Mu0Sampler:
    """Flux-measure sampler on the gate cross section of one cell.

    Gates and sub-gates are weighted by length; `gates` restricts sampling
    to one gate when needed.
    """

    template: CellTemplate
    seed: int
    gates: tuple = (1, 2)

    def _parts(self):
        parts = []
        for gate in self.gates:
            for sub in range(len(self.template.gate_sides(gate))):
                parts.append((gate, sub, self.template.gate_segment(gate, sub).length()))
        total = sum(p[2] for p in parts)
        return parts, total

    def sample_one(self, index: int) -> PhasePoint:
        u = rng.uniforms(rng.key64(self.seed, rng.KIND_MU0, index), 3)
        return self._build(float(u[0]), float(u[1]), float(u[2]))

    def _build(self, u_part, u_pos, u_theta) -> PhasePoint:
        parts, total = self._parts()
        pick = u_part * total
        acc = 0.0
        gate, sub, length = parts[-1][0], parts[-1][1], parts[-1][2]
        for g, s, ln in parts:
            acc += ln
            if pick < acc:
                gate, sub, length = g, s, ln
                break
        seg = self.template.gate_segment(gate, sub)
        d = self.template.gate_direction(gate, sub)
        o = self.template.gate_normal(gate, sub)
        q = seg.a + d * (u_pos * length)
        theta = math.asin(2.0 * u_theta - 1.0)
        v = o * math.cos(theta) + d * math.sin(theta)
        return PhasePoint(q, v, gate, sub)

    def sample(self, count: int, offset: int = 0):
        return [self.sample_one(offset + i) for i in range(count)]

    def start_arrays(self, lo: int, hi: int) -> dict:
        """Starts for orbits lo..hi-1 as arrays for the batch engine."""
        n = hi - lo
        q = np.empty((n, 2), dtype=np.float64)
        v = np.empty((n, 2), dtype=np.float64)
        gate = np.empty(n, dtype=np.int8)
        sub = np.empty(n, dtype=np.int16)
        for i in range(n):
            p = self.sample_one(lo + i)
            q[i, 0] = p.q.x
            q[i, 1] = p.q.y
            v[i, 0] = p.v.x
            v[i, 1] = p.v.y
            gate[i] = p.gate
            sub[i] = p.subgate
        return {"q": q, "v": v, "gate": gate, "sub": sub}


def sample_mu0(sampler: Mu0Sampler, count: int):
    """Independent flux-measure samples; deterministic given the seed."""
    return sampler.sample(count)


# ---------------------------------------------------------------------------
# Batch plumbing.
# ---------------------------------------------------------------------------

def _chunks(n: int):
    return [(lo, min(lo + CHUNK, n)) for lo in range(0, n, CHUNK)]


def _run_chunked(ct, window, win_lo, sampler, n_orbits, horizon, cap, grid,
                 workers, trace_exits=False, pov_frame=True,
                 starts_for=None):
    """Run n_orbits through the engine in fixed chunks, optionally threaded."""
    make = starts_for if starts_for is not None else sampler.start_arrays

    def one(span):
        lo, hi = span
        return engine.run_batch(ct, window, win_lo, make(lo, hi), horizon,
                                cap, grid, trace_exits, pov_frame)
    spans = _chunks(n_orbits)
    if workers > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(one, spans))
    else:
        parts = [one(s) for s in spans]
    return _concat(parts)


def _concat(parts):
    if len(parts) == 1:
        return parts[0]
    fields = {}
    for name in ("status", "steps", "first_return", "s_grid", "grid_set",
                 "q_final", "v_final", "gate_final", "sub_final",
                 "offset_final", "collisions", "max_flat_run", "v_norm_err",
                 "flight_time"):
        fields[name] = np.concatenate([getattr(p, name) for p in parts])
    exits = None
    if parts[0].exits is not None:
        exits = np.concatenate([p.exits for p in parts])
    return engine.BatchResult(**fields, exits=exits)


def realization_window(realization: TubeRealization, horizon: int):
    """Cell window covering every offset reachable within `horizon` crossings."""
    lo = -horizon - 1
    hi = horizon + 2
    return realization.window(lo, hi), lo


def default_grid(horizon: int):
    """Log-spaced crossing counts 10, 100, ... up to and including horizon."""
    grid = []
    n = 10
    while n < horizon:
        grid.append(n)
        n *= 10
    grid.append(horizon)
    return np.array(sorted(set(grid)), dtype=np.int64)


# ---------------------------------------------------------------------------
# Recurrence / cocycle statistics.
# ---------------------------------------------------------------------------

@dataclass
class RecurrenceStats:
    orbits: int
    horizon: int
    returned: int
    singular: int
    return_fraction: float
    n_grid: tuple
    birkhoff: tuple              # mean |S_n| / n over non-singular orbits
    hist_edges: tuple            # power-of-two bin edges for first returns
    hist_counts: tuple
    rhos: tuple
    qn: tuple                    # rows (n, rho, Q_n fraction)
    kappa_hat: float
    statuses: np.ndarray
    first_returns: np.ndarray
    s_grid: np.ndarray
    grid_set: np.ndarray
    total_collisions: int
    max_flat_run: int
    v_norm_err: float

    def return_fraction_by(self, horizon: int) -> float:
        ok = self.statuses == engine.OK
        n_ok = int(ok.sum())
        if n_ok == 0:
            return 0.0
        fr = self.first_returns[ok]
        return float(((fr >= 1) & (fr <= horizon)).sum()) / n_ok


DEFAULT_RHOS = (0.02, 0.05, 0.1, 0.2, 0.5, 1.0)


def recurrence_experiment(realization: TubeRealization, orbits: int,
                          horizon: int, cap: int = DEFAULT_CAP,
                          rhos=DEFAULT_RHOS, workers: int = 1,
                          grid=None) -> RecurrenceStats:
    """Sample flux-measure orbits, run their cocycles, aggregate statistics.

    Returns to the starting cell are cocycle zeros S_n = 0, an exact integer
    event.  Singular orbits (tangency, vertex, collision cap) are counted
    and excluded from every statistic.
    """
    tpl = realization.template
    ct = engine.compile_tube(tpl, realization.process.library)
    window, win_lo = realization_window(realization, horizon)
    sampler = Mu0Sampler(tpl, rng.key64(realization.master_seed, rng.KIND_ORBIT))
    if grid is None:
        grid = default_grid(horizon)
    res = _run_chunked(ct, window, win_lo, sampler, orbits, horizon, cap,
                       grid, workers)
    return _aggregate(res, orbits, horizon, grid, rhos)


def _aggregate(res, orbits, horizon, grid, rhos) -> RecurrenceStats:
    ok = res.status == engine.OK
    n_ok = int(ok.sum())
    singular = orbits - n_ok
    returned = int(((res.first_return >= 1) & ok).sum())
    fraction = returned / n_ok if n_ok else 0.0

    birkhoff = []
    for gi, n in enumerate(grid):
        vals = np.abs(res.s_grid[ok, gi]).astype(np.float64) / float(n)
        birkhoff.append(math.fsum(vals.tolist()) / n_ok if n_ok else 0.0)

    edges = [1]
    while edges[-1] < horizon:
        edges.append(edges[-1] * 2)
    edges.append(edges[-1] * 2)
    counts = [0] * (len(edges) - 1)
    for fr in res.first_return[ok]:
        if fr >= 1:
            b = int(math.log2(fr)) if fr > 0 else 0
            b = min(b, len(counts) - 1)
            counts[b] += 1

    qn_rows = []
    kappa = math.inf
    for gi, n in enumerate(grid):
        absn = np.abs(res.s_grid[ok, gi]).astype(np.float64)
        for rho in rhos:
            q = float((absn <= rho * n).sum()) / n_ok if n_ok else 0.0
            qn_rows.append((int(n), float(rho), q))
            if q < 1.0 and q > 0.0:
                kappa = min(kappa, q / rho)
    if not math.isfinite(kappa):
        kappa = min(1.0 / r for r in rhos)

    return RecurrenceStats(
        orbits=orbits, horizon=horizon, returned=returned, singular=singular,
        return_fraction=fraction,
        n_grid=tuple(int(n) for n in grid),
        birkhoff=tuple(birkhoff),
        hist_edges=tuple(edges),
        hist_counts=tuple(counts),
        rhos=tuple(float(r) for r in rhos),
        qn=tuple(qn_rows),
        kappa_hat=float(kappa),
        statuses=res.status,
        first_returns=res.first_return,
        s_grid=res.s_grid,
        grid_set=res.grid_set,
        total_collisions=int(res.collisions.sum()),
        max_flat_run=int(res.max_flat_run.max(initial=0)),
        v_norm_err=float(res.v_norm_err.max(initial=0.0)),
    )


def schmidt_estimator(stats: RecurrenceStats, rhos=None):
    """Empirical distribution mass of |S_n / n| <= rho over the grid.

    Returns (rows, kappa_hat) with one row (n, rho, Q_n) per grid pair.  The
    implied constant is the smallest Q_n / rho among unsaturated entries
    (Q_n < 1), the regime where the mass bound has content.
    """
    if rhos is None:
        rhos = stats.rhos
    ok = stats.statuses == engine.OK
    n_ok = int(ok.sum())
    rows = []
    kappa = math.inf
    for gi, n in enumerate(stats.n_grid):
        absn = np.abs(stats.s_grid[ok, gi]).astype(np.float64)
        for rho in rhos:
            q = float((absn <= rho * n).sum()) / n_ok if n_ok else 0.0
            rows.append((int(n), float(rho), q))
            if 0.0 < q < 1.0:
                kappa = min(kappa, q / rho)
    if not math.isfinite(kappa):
        kappa = min(1.0 / r for r in rhos)
    return tuple(rows), float(kappa)


# ---------------------------------------------------------------------------
# Flux invariance.
# ---------------------------------------------------------------------------

@dataclass
class FluxStats:
    samples: int
    singular: int
    ks_position: float
    ks_sin_theta: float
    positions: np.ndarray
    sines: np.ndarray


def ks_uniform(values: np.ndarray) -> float:
    """Kolmogorov-Smirnov distance of values in [0, 1] from the uniform law."""
    x = np.sort(values)
    n = len(x)
    if n == 0:
        return 1.0
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - x), np.max(x - (i - 1) / n)))


def flux_experiment(realization: TubeRealization, samples: int,
                    cap: int = DEFAULT_CAP, workers: int = 1) -> FluxStats:
    """Push flux-measure samples through one cell crossing and test that the
    exit ensemble is flux-distributed again (position and sin(theta) uniform)."""
    tpl = realization.template
    ct = engine.compile_tube(tpl, realization.process.library)
    window, win_lo = realization_window(realization, 1)
    sampler = Mu0Sampler(tpl, rng.key64(realization.master_seed, rng.KIND_MU0, 1))
    res = _run_chunked(ct, window, win_lo, sampler, samples, 1, cap,
                       None, workers)
    ok = res.status == engine.OK
    qf = res.q_final[ok]
    vf = res.v_final[ok]
    gf = res.gate_final[ok]
    sf = res.sub_final[ok]
    pos = np.empty(len(qf))
    sines = np.empty(len(qf))
    for gate in (1, 2):
        for sub in range(len(tpl.gate_sides(gate))):
            m = (gf == gate) & (sf == sub)
            if not m.any():
                continue
            seg = tpl.gate_segment(gate, sub)
            d = tpl.gate_direction(gate, sub)
            pos[m] = ((qf[m, 0] - seg.a.x) * d.x
                      + (qf[m, 1] - seg.a.y) * d.y) / seg.length()
            sines[m] = vf[m, 0] * d.x + vf[m, 1] * d.y
    return FluxStats(
        samples=samples, singular=int(samples - ok.sum()),
        ks_position=ks_uniform(pos),
        ks_sin_theta=ks_uniform((sines + 1.0) / 2.0),
        positions=pos, sines=sines)


# ---------------------------------------------------------------------------
# Time reversal.
# ---------------------------------------------------------------------------

@dataclass
class ReplayStats:
    orbits: int
    replayed: int
    flagged: int
    max_error: float
    errors: np.ndarray


def replay_experiment(realization: TubeRealization, orbits: int,
                      crossings: int, cap: int = DEFAULT_CAP,
                      workers: int = 1, seed_kind: int = rng.KIND_ORBIT) -> ReplayStats:
    """Run orbits forward, reverse the final velocity, run back, compare.

    The reversed final state is compared to the initial condition in
    absolute tube coordinates.  Orbits that turn singular in either
    direction are flagged and excluded from the error statistic.
    """
    tpl = realization.template
    tau = tpl.tau
    ct = engine.compile_tube(tpl, realization.process.library)
    # the reversed leg starts up to `crossings` cells away from the origin
    window, win_lo = realization_window(realization, 2 * crossings + 2)
    sampler = Mu0Sampler(tpl, rng.key64(realization.master_seed, seed_kind))
    fwd = _run_chunked(ct, window, win_lo, sampler, orbits, crossings, cap,
                       None, workers)

    ok = fwd.status == engine.OK
    idx = np.nonzero(ok)[0]
    n_rev = len(idx)
    q = np.empty((n_rev, 2))
    v = -fwd.v_final[idx]
    gate = np.empty(n_rev, dtype=np.int8)
    sub = fwd.sub_final[idx].copy()
    roff = np.empty(n_rev, dtype=np.int64)
    on_gate1 = fwd.gate_final[idx] == 1
    q[:, 0] = fwd.q_final[idx, 0] + np.where(on_gate1, tau.x, -tau.x)
    q[:, 1] = fwd.q_final[idx, 1] + np.where(on_gate1, tau.y, -tau.y)
    gate[:] = np.where(on_gate1, 2, 1)
    roff[:] = fwd.offset_final[idx] + np.where(on_gate1, -1, 1)

    def rev_starts(lo, hi):
        return {"q": q[lo:hi], "v": v[lo:hi], "gate": gate[lo:hi],
                "sub": sub[lo:hi], "offset": roff[lo:hi]}

    rev = _run_chunked(ct, window, win_lo, None, n_rev, crossings, cap,
                       None, workers, starts_for=rev_starts)

    flagged = int(orbits - n_rev)
    errors = []
    for j in range(n_rev):
        if rev.status[j] != engine.OK:
            flagged += 1
            continue
        p0 = sampler.sample_one(int(idx[j]))
        off = rev.offset_final[j]
        dq = max(abs(rev.q_final[j, 0] + off * tau.x - p0.q.x),
                 abs(rev.q_final[j, 1] + off * tau.y - p0.q.y))
        dv = max(abs(rev.v_final[j, 0] + p0.v.x), abs(rev.v_final[j, 1] + p0.v.y))
        errors.append(max(dq, dv))

    errors = np.array(errors)
    return ReplayStats(
        orbits=orbits,
        replayed=len(errors),
        flagged=flagged,
        max_error=float(errors.max(initial=0.0)),
        errors=errors)
