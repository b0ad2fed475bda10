"""End-to-end acceptance checks for the whole package.

One test per criterion; each prints a single PASS line with its headline
numbers so a `pytest -s` run reads as a checklist.  The heavy quenched-tube
runs are shared through module fixtures.
"""

import math
import time

import numpy as np
import pytest

from conftest import SPECS
from lorentztube import engine
from lorentztube.dynamics import traverse_cell
from lorentztube.experiments import (
    Mu0Sampler,
    ks_uniform,
    realization_window,
    recurrence_experiment,
    replay_experiment,
)
from lorentztube.geometry import Vec2, reflect, unit_from_angle
from lorentztube.specio import parse_spec, run
from lorentztube.tube import (
    Bounds,
    CellConfig,
    ConfigurationProcess,
    TubeRealization,
    Wall,
)
from lorentztube.validators import check_assumptions
from oracles import bisect_hit_time
from test_geometry import _random_cases, kernel_hit_time


def _ok(n, msg):
    print(f"ACCEPTANCE {n} PASS: {msg}")


@pytest.fixture(scope="module")
def quenched_spec():
    return parse_spec((SPECS / "quenched_two_disc.json").read_text())


@pytest.fixture(scope="module")
def quenched_rz(quenched_spec):
    return quenched_spec.realization()


@pytest.fixture(scope="module")
def quenched_runs(quenched_rz):
    """The positive-control runs: 1000 orbits at horizons 1e3, 1e4, 1e5."""
    t0 = time.perf_counter()
    stats = {h: recurrence_experiment(quenched_rz, orbits=1000, horizon=h)
             for h in (1000, 10_000, 100_000)}
    return stats, time.perf_counter() - t0


def _square():
    from lorentztube.tube import square_template
    return square_template()


def test_acceptance_1_geometry_kernel():
    t0 = time.perf_counter()
    hits = 0
    for origin, d, shape in _random_cases(1000, seed=19571116):
        t_kernel = kernel_hit_time(origin, d, shape)
        t_oracle = bisect_hit_time(origin, d, shape)
        if t_kernel is not None and t_kernel > 8.0:
            t_kernel = None
        assert (t_kernel is None) == (t_oracle is None)
        if t_kernel is not None:
            assert abs(t_kernel - t_oracle) < 1e-8
            hits += 1
    rnd = np.random.default_rng(19571116)
    worst_norm = 0.0
    worst_inv = 0.0
    for _ in range(1000):
        v = unit_from_angle(rnd.uniform(-math.pi, math.pi))
        n = unit_from_angle(rnd.uniform(-math.pi, math.pi))
        if abs(v.dot(n)) < 1e-6:
            continue
        w = reflect(v, n)
        worst_norm = max(worst_norm, abs(w.norm() - 1.0))
        back = -reflect(-w, n)
        worst_inv = max(worst_inv, abs(back.x - v.x), abs(back.y - v.y))
    elapsed = time.perf_counter() - t0
    assert worst_norm < 1e-12
    assert worst_inv < 1e-12
    assert elapsed < 1.0
    _ok(1, f"{hits} oracle hits agree to 1e-8; norm err {worst_norm:.1e}; "
           f"involution err {worst_inv:.1e}; {elapsed:.2f}s")


def test_acceptance_2_flux_invariance():
    spec = parse_spec((SPECS / "periodic_disc.json").read_text())
    tpl = spec.template
    cfg = spec.process.library[0]
    sampler = Mu0Sampler(tpl, 314159)
    t0 = time.perf_counter()
    pos, sines = [], []
    singular = 0
    for i in range(100_000):
        x = sampler.sample_one(i)
        res = traverse_cell(x, cfg, tpl)
        if res.status != "ok":
            singular += 1
            continue
        gate, sub = res.exit.gate, res.exit.subgate
        seg = tpl.gate_segment(gate, sub)
        d = tpl.gate_direction(gate, sub)
        pos.append((res.exit.q - seg.a).dot(d) / seg.length())
        sines.append(res.exit.v.dot(d))
    elapsed = time.perf_counter() - t0
    ks_pos = ks_uniform(np.array(pos))
    ks_sin = ks_uniform((np.array(sines) + 1.0) / 2.0)
    assert ks_pos < 0.02
    assert ks_sin < 0.02
    assert elapsed < 30.0
    _ok(2, f"KS(position) {ks_pos:.4f}, KS(sin theta) {ks_sin:.4f}, "
           f"{singular} singular of 100000, {elapsed:.1f}s single core")


def test_acceptance_3_time_reversal():
    lib = (CellConfig((Wall(Vec2(0.3, 0.0), Vec2(0.7, 0.35)),), name="w1"),
           CellConfig((Wall(Vec2(0.3, 1.0), Vec2(0.7, 0.65)),), name="w2"))
    rz = TubeRealization(_square(), ConfigurationProcess(lib, "iid"), 8128)
    stats = replay_experiment(rz, orbits=10_000, crossings=1000)
    replay_fraction = stats.replayed / stats.orbits
    assert stats.replayed + stats.flagged == stats.orbits
    assert replay_fraction >= 0.999
    assert stats.max_error < 1e-9
    _ok(3, f"{stats.replayed}/{stats.orbits} orbits of 1000 crossings replay "
           f"within {stats.max_error:.1e}; {stats.flagged} flagged singular")


def test_acceptance_4_conjugacy():
    lib = (CellConfig((Wall(Vec2(0.3, 0.0), Vec2(0.7, 0.35)),), name="w1"),
           CellConfig((Wall(Vec2(0.3, 1.0), Vec2(0.7, 0.65)),), name="w2"))
    rz = TubeRealization(_square(), ConfigurationProcess(lib, "iid"), 6174)
    ct = engine.compile_tube(rz.template, rz.process.library)
    horizon = 1000
    window, lo = realization_window(rz, horizon)
    sampler = Mu0Sampler(rz.template, 271828)
    starts = sampler.start_arrays(0, 1000)
    pov = engine.run_batch(ct, window, lo, starts, horizon, 10_000,
                           trace_exits=True, pov_frame=True)
    tub = engine.run_batch(ct, window, lo, starts, horizon, 10_000,
                           trace_exits=True, pov_frame=False)
    assert (pov.steps == tub.steps).all()
    assert (pov.exits == tub.exits).all()
    assert (pov.offset_final == tub.offset_final).all()
    completed = int((pov.status == engine.OK).sum())
    assert completed >= 990
    _ok(4, f"re-centered map and tube map agree exactly on {completed} "
           f"complete orbits x {horizon} crossings (integer exit sequences)")


def test_acceptance_5_negative_control():
    spec = parse_spec((SPECS / "empty_channel.json").read_text())
    stats = recurrence_experiment(spec.realization(), orbits=spec.budgets.orbits,
                                  horizon=spec.budgets.horizon, rhos=spec.rhos)
    assert stats.singular == 0
    assert stats.return_fraction == 0.0
    assert all(b == 1.0 for b in stats.birkhoff)
    _ok(5, f"empty channel: return fraction exactly 0, mean |S_n/n| exactly 1 "
           f"at all {len(stats.n_grid)} grid points")


def test_acceptance_6_positive_control(quenched_spec, quenched_rz, quenched_runs):
    stats, elapsed = quenched_runs
    report = check_assumptions(quenched_rz, samples=10_000, attempts=1000,
                               declared=quenched_spec.bounds)
    assert report.clean()
    fractions = [stats[h].return_fraction for h in (1000, 10_000, 100_000)]
    assert fractions == sorted(fractions)
    assert fractions[-1] >= 0.9
    # a declared-valid tube must never hit the collision cap in the runs
    for h in (1000, 10_000, 100_000):
        assert not (stats[h].statuses == engine.CAP).any()
    assert elapsed < 300.0
    _ok(6, f"validators clean; return fractions {[round(f, 4) for f in fractions]} "
           f"non-decreasing over horizons 1e3/1e4/1e5; {elapsed:.0f}s")


def test_periodic_control_matches_quenched(quenched_runs):
    # the periodic single-disc tube at the same budget is the control: its
    # return fraction is high and the quenched tube lands within 0.05 of it
    spec = parse_spec((SPECS / "periodic_disc.json").read_text())
    control = recurrence_experiment(spec.realization(), orbits=1000,
                                    horizon=100_000)
    assert control.return_fraction >= 0.95
    stats, _ = quenched_runs
    assert abs(stats[100_000].return_fraction - control.return_fraction) < 0.05
    fr = [control.return_fraction_by(h) for h in (1000, 10_000, 100_000)]
    assert fr == sorted(fr)


def test_acceptance_7_mass_near_zero(quenched_runs):
    stats, _ = quenched_runs
    big = stats[100_000]
    qn = {(n, rho): q for n, rho, q in big.qn}
    curve = [qn[(n, 0.1)] for n in big.n_grid]
    # strictly increasing until the empirical mass saturates at 1
    assert all(curve[i] < curve[i + 1] or curve[i] == 1.0
               for i in range(len(curve) - 1))
    assert curve[0] < curve[1]
    assert curve[-1] > 0.9
    channel_spec = parse_spec((SPECS / "empty_channel.json").read_text())
    channel_stats = recurrence_experiment(channel_spec.realization(), orbits=100,
                                          horizon=1000, rhos=(0.1, 0.5, 1.0))
    for n, rho, q in channel_stats.qn:
        assert q == (1.0 if rho >= 1.0 else 0.0)
    _ok(7, f"Q_n([-0.1, 0.1]) increasing {[round(c, 3) for c in curve]} with "
           f"{curve[-1]:.3f} > 0.9 at n=1e5; channel mass 0 below rho = 1")


def test_acceptance_8_process_layer(square):
    configs = tuple(CellConfig(name=f"c{i}") for i in range(3))
    P = ((0.6, 0.3, 0.1), (0.2, 0.5, 0.3), (0.25, 0.25, 0.5))
    proc = ConfigurationProcess(configs, "markov", transition=P)
    rz = TubeRealization(square, proc, 1789)
    idx, _, _ = rz.window(0, 10_000)
    counts = np.zeros((3, 3))
    for a, b in zip(idx[:-1], idx[1:]):
        counts[a, b] += 1
    worst_fwd = 0.0
    for a in range(3):
        freq = counts[a] / counts[a].sum()
        worst_fwd = max(worst_fwd, float(np.max(np.abs(freq - np.array(P[a])))))
    assert worst_fwd < 0.03
    back_idx, _, _ = rz.window(-10_000, 0)
    marg = np.bincount(back_idx, minlength=3) / 10_000
    worst_back = float(np.max(np.abs(marg - np.array(proc.stationary))))
    assert worst_back < 0.03
    rnd = np.random.default_rng(12)
    fresh = TubeRealization(square, proc, 1789)
    order = rnd.permutation(np.arange(-10_000, 10_000))
    permuted = {int(n): fresh.index(int(n)) for n in order}
    serial = TubeRealization(square, proc, 1789)
    assert all(permuted[n] == serial.index(n) for n in range(-10_000, 10_000))
    _ok(8, f"transition freq err {worst_fwd:.4f} < 0.03; backward marginal err "
           f"{worst_back:.4f} < 0.03; permuted generation identical")


def test_acceptance_9_determinism(tmp_path):
    data_files = ("orbit_summary.tsv", "summary.tsv", "birkhoff.tsv",
                  "qn.tsv", "return_hist.tsv")
    checked = []
    for name in ("empty_channel", "periodic_disc"):
        spec = parse_spec((SPECS / f"{name}.json").read_text())
        run(spec, tmp_path / name / "w1", workers=1)
        run(spec, tmp_path / name / "w2", workers=2)
        for f in data_files:
            a = (tmp_path / name / "w1" / f).read_bytes()
            b = (tmp_path / name / "w2" / f).read_bytes()
            assert a == b, f"{name}/{f} differs between worker counts"
        checked.append(name)
    _ok(9, f"byte-identical data files across worker counts for {checked}")
