import json

import numpy as np
import pytest

from starsirs.analytics import round_failure_prob
from starsirs.couplings import CONTAINMENT_SAMPLES, run_coupled_xy, run_sustained
from starsirs.experiments import wilson_interval
from starsirs.general import run_star
from starsirs.model import ProcessParams
from starsirs.rng import SeedSpec


def test_no_leaves():
    run = run_coupled_xy(ProcessParams(0, 1.0, 1.0), SeedSpec(1))
    assert run.psi_x == 0 and run.psi_y == 0 and run.ok


@pytest.mark.parametrize("k", range(40))
def test_coupling_flags(k):
    run = run_coupled_xy(ProcessParams(500, 0.08, 1.0), SeedSpec(20, (k,)))
    assert run.ok
    assert run.psi_x <= run.psi_y
    assert all(a <= b for a, b in run.recovery_counts)


def test_snapshots_are_taken():
    run = run_coupled_xy(ProcessParams(50, 0.5, 1.0), SeedSpec(3))
    snaps = [r.snapshots for r in run.y.rounds if r.snapshots is not None]
    assert snaps and all(s.shape == (CONTAINMENT_SAMPLES + 2, 51) for s in snaps)


def test_coupled_run_matches_uncoupled_y():
    # the shared cache reproduces the Y run addressed by the same seed
    p = ProcessParams(80, 0.3, 1.5, "y")
    run = run_coupled_xy(p, SeedSpec(4))
    plain = run_star(p, SeedSpec(4))
    assert run.y.tau == plain.tau and run.psi_y == plain.psi


def test_json_line():
    seed = SeedSpec(5, (2,))
    run = run_coupled_xy(ProcessParams(30, 0.5, 1.0), seed)
    d = json.loads(run.json_line(seed))
    assert d["master_seed"] == 5 and d["stream_path"] == [2]
    assert d["psi_x"] == run.psi_x and d["containment_ok"] is True


def test_independent_clocks_break_dominance():
    # without shared clocks X beats Y on a visible fraction of pairs, so
    # the coupled check above is not vacuous
    px = ProcessParams(500, 0.08, 1.0, "x")
    py = ProcessParams(500, 0.08, 1.0, "y")
    worse = sum(run_star(px, SeedSpec(6, (k, 0))).psi > run_star(py, SeedSpec(6, (k, 1))).psi
                for k in range(300))
    assert worse > 10


def test_round_cap_on_y():
    run = run_coupled_xy(ProcessParams(60, 1.0, 1.0), SeedSpec(7), round_cap=3)
    assert len(run.y.rounds) <= 3 and run.ok


def test_sustained_agrees_with_plain_until_extinction():
    p = ProcessParams(40, 0.4, 1.0)
    for k in range(20):
        sus = run_sustained(p, SeedSpec(8, (k,)), round_cap=50)
        plain = run_star(p, SeedSpec(8, (k,)))
        assert sus.extinction_time == plain.tau
        m = len(plain.rounds)
        for a, b in zip(sus.run.rounds[:m - 1], plain.rounds[:m - 1]):
            assert (a.tau, a.tau_R, a.tau_S, a.end, a.I_R) == (b.tau, b.tau_R, b.tau_S, b.end, b.I_R)
        if m <= 50:
            last = sus.run.rounds[m - 1]
            assert (last.tau, last.tau_R, last.I_R) == (plain.rounds[-1].tau, plain.rounds[-1].tau_R,
                                                         plain.rounds[-1].I_R)
            assert not last.succeeded


@pytest.mark.parametrize("cap", [1, 7, 40])
def test_sustained_round_count(cap):
    sus = run_sustained(ProcessParams(10, 0.3, 1.0), SeedSpec(9), round_cap=cap)
    assert len(sus.records) == cap
    assert [r.index for r in sus.records] == list(range(1, cap + 1))


def test_sustained_requires_x():
    with pytest.raises(ValueError):
        run_sustained(ProcessParams(10, 0.3, 1.0, "y"), SeedSpec(1), round_cap=5)


@pytest.mark.parametrize("a", [1, 5])
def test_sustained_failures_match_formula(a):
    lam, alpha = 0.5, 1.0
    p = ProcessParams(20, lam, alpha)
    hits = fails = 0
    k = 0
    while hits < 20_000:
        for r in run_sustained(p, SeedSpec(10, (k,)), round_cap=2000).records:
            if r.I_i_R == a:
                hits += 1
                fails += not r.succeeded
        k += 1
    lo, hi = wilson_interval(fails, hits)
    assert lo <= round_failure_prob(a, lam, alpha) <= hi
