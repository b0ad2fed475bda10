import math

import numpy as np
import pytest

from lorentztube.experiments import (
    Mu0Sampler,
    default_grid,
    flux_experiment,
    ks_uniform,
    recurrence_experiment,
    replay_experiment,
    sample_mu0,
    schmidt_estimator,
)
from lorentztube.geometry import Vec2
from lorentztube.tube import CellConfig, ConfigurationProcess, TubeRealization, Wall


class TestMu0:
    def test_midpoint_u_gives_normal_incidence(self, square):
        sampler = Mu0Sampler(square, 1, gates=(1,))
        p = sampler._build(0.0, 0.5, 0.5)
        assert p.gate == 1
        assert p.v.dot(square.gate_normal(1)) == pytest.approx(1.0, abs=1e-12)
        assert p.q.y == pytest.approx(0.5)

    def test_sin_theta_mean_is_zero(self, square):
        sampler = Mu0Sampler(square, 2)
        sines = []
        for p in sample_mu0(sampler, 100_000):
            d = square.gate_direction(p.gate, p.subgate)
            sines.append(p.v.dot(d))
        assert abs(np.mean(sines)) < 0.01

    def test_cos_theta_mean_is_pi_over_four(self, square):
        sampler = Mu0Sampler(square, 3)
        coss = []
        for p in sample_mu0(sampler, 100_000):
            o = square.gate_normal(p.gate, p.subgate)
            coss.append(p.v.dot(o))
        assert np.mean(coss) == pytest.approx(math.pi / 4, abs=0.01)

    def test_deterministic_given_seed(self, square):
        a = Mu0Sampler(square, 4).sample(10)
        b = Mu0Sampler(square, 4).sample(10)
        assert a == b


def test_ks_uniform_statistic():
    assert ks_uniform(np.linspace(0.0005, 0.9995, 1000)) < 0.002
    assert ks_uniform(np.full(100, 0.5)) == pytest.approx(0.5)


def test_default_grid_is_log_spaced():
    assert list(default_grid(100_000)) == [10, 100, 1000, 10_000, 100_000]
    assert list(default_grid(500)) == [10, 100, 500]


class TestChannelControl:
    def test_exact_transience(self, channel):
        stats = recurrence_experiment(channel, orbits=150, horizon=2000)
        assert stats.singular == 0
        assert stats.returned == 0
        assert stats.return_fraction == 0.0
        assert all(b == 1.0 for b in stats.birkhoff)
        assert all(c == 0 for c in stats.hist_counts)
        for n, rho, q in stats.qn:
            assert q == (1.0 if rho >= 1.0 else 0.0)

    def test_schmidt_rows_cover_grid(self, channel):
        stats = recurrence_experiment(channel, orbits=50, horizon=1000)
        rows, kappa = schmidt_estimator(stats)
        assert len(rows) == len(stats.n_grid) * len(stats.rhos)


@pytest.fixture(scope="module")
def stats(quenched):
    return recurrence_experiment(quenched, orbits=400, horizon=5000)


class TestScatteringTube:
    def test_mostly_returns(self, stats):
        assert stats.return_fraction > 0.9
        assert stats.singular < 10

    def test_birkhoff_eventually_decreasing(self, stats):
        b = stats.birkhoff
        assert b[-1] < b[0]
        assert all(b[i + 1] <= b[i] + 1e-9 for i in range(1, len(b) - 1))

    def test_return_fraction_nondecreasing_in_horizon(self, stats):
        fr = [stats.return_fraction_by(h) for h in (100, 1000, 5000)]
        assert fr == sorted(fr)

    def test_histogram_counts_match_returns(self, stats):
        assert sum(stats.hist_counts) == stats.returned

    def test_workers_do_not_change_results(self, quenched):
        a = recurrence_experiment(quenched, orbits=300, horizon=800, workers=1)
        b = recurrence_experiment(quenched, orbits=300, horizon=800, workers=4)
        assert a.return_fraction == b.return_fraction
        assert a.birkhoff == b.birkhoff
        assert a.qn == b.qn
        assert (a.statuses == b.statuses).all()
        assert (a.s_grid == b.s_grid).all()


class TestFlux:
    def test_exit_ensemble_uniform(self, periodic_disc):
        stats = flux_experiment(periodic_disc, samples=30_000)
        assert stats.ks_position < 0.02
        assert stats.ks_sin_theta < 0.02
        assert stats.singular < 30

    def test_channel_flux_is_exactly_preserved(self, channel):
        stats = flux_experiment(channel, samples=5000)
        assert stats.singular == 0
        assert stats.ks_position < 0.03


class TestReplay:
    def test_polygonal_long_replay(self, square):
        lib = (CellConfig((Wall(Vec2(0.3, 0.0), Vec2(0.7, 0.35)),), name="w"),)
        rz = TubeRealization(square, ConfigurationProcess(lib, "iid"), 55)
        stats = replay_experiment(rz, orbits=300, crossings=500)
        assert stats.replayed >= 299
        assert stats.max_error < 1e-9

    def test_dispersing_single_crossing_replay(self, quenched):
        stats = replay_experiment(quenched, orbits=300, crossings=1)
        assert stats.replayed >= 298
        assert stats.max_error < 1e-9

    def test_dispersing_replay_error_grows_hyperbolically(self, quenched):
        # each collision multiplies state error by the dispersing expansion,
        # so a few crossings already push replays far above round-off
        short = replay_experiment(quenched, orbits=200, crossings=1)
        longer = replay_experiment(quenched, orbits=200, crossings=3)
        assert longer.replayed >= 198
        assert longer.max_error > 10 * short.max_error
        assert longer.max_error < 1e-3


def test_flux_engine_matches_scalar_path(periodic_disc):
    from lorentztube.dynamics import traverse_cell
    from lorentztube import randomness as rng
    stats = flux_experiment(periodic_disc, samples=2000)
    tpl = periodic_disc.template
    cfg = periodic_disc.cell(0)
    sampler = Mu0Sampler(tpl, rng.key64(periodic_disc.master_seed, rng.KIND_MU0, 1))
    checked = 0
    scalar_pos = []
    for i in range(2000):
        res = traverse_cell(sampler.sample_one(i), cfg, tpl)
        if res.status != "ok":
            continue
        gate, sub = res.exit.gate, res.exit.subgate
        seg = tpl.gate_segment(gate, sub)
        d = tpl.gate_direction(gate, sub)
        scalar_pos.append((res.exit.q - seg.a).dot(d) / seg.length())
        checked += 1
    assert checked == len(stats.positions)
    assert np.max(np.abs(np.sort(stats.positions) - np.sort(scalar_pos))) < 1e-12
