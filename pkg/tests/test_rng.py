import numpy as np
import pytest
from scipy import stats

from starsirs.rng import (DEIMMUNIZATION, INFECTION, RECOVERY, ClockBundle, SeedSpec,
                          clock_identity, derive_stream, next_bundle_event, sample_exponential)


def test_same_seed_same_draws():
    a = derive_stream(SeedSpec(11, (3, 4))).random(1000)
    b = derive_stream(SeedSpec(11, (3, 4))).random(1000)
    assert np.array_equal(a, b)


def test_distinct_paths_differ():
    a = derive_stream(SeedSpec(11, (0,))).random(1000)
    b = derive_stream(SeedSpec(11, (1,))).random(1000)
    assert not np.array_equal(a, b)
    c = derive_stream(SeedSpec(12, (0,))).random(1000)
    assert not np.array_equal(a, c)


def test_uniform_mean():
    u = derive_stream(SeedSpec(5, (0,))).random(10**6)
    sigma = (1 / (12 * 10**6)) ** 0.5
    assert abs(u.mean() - 0.5) < 4 * sigma


def test_path_depth_limit():
    derive_stream(SeedSpec(1, (1, 2, 3, 4)))
    with pytest.raises(ValueError):
        derive_stream(SeedSpec(1, (1, 2, 3, 4, 5)))


def test_seed_validation():
    with pytest.raises(ValueError):
        SeedSpec(-1)
    with pytest.raises(ValueError):
        SeedSpec(1, (0, -2))
    assert SeedSpec(1, (2,)).child(3, 4) == SeedSpec(1, (2, 3, 4))


def test_exponential_mean():
    rng = derive_stream(SeedSpec(2, (0,)))
    x = np.array([sample_exponential(rng, 1.0) for _ in range(10**6)])
    assert abs(x.mean() - 1.0) < 4 * 1e-3


def test_exponential_scaling():
    r1 = derive_stream(SeedSpec(2, (7,)))
    r2 = derive_stream(SeedSpec(2, (7,)))
    for _ in range(100):
        assert sample_exponential(r2, 2.0) == sample_exponential(r1, 1.0) / 2.0


@pytest.mark.parametrize("rate", [0.0, -1.0])
def test_exponential_rejects_bad_rate(rate):
    with pytest.raises(ValueError):
        sample_exponential(derive_stream(SeedSpec(1)), rate)


def test_minimum_of_exponentials():
    rng = derive_stream(SeedSpec(3, (0,)))
    m = np.minimum(rng.exponential(1.0, 10**5), rng.exponential(1 / 0.5, 10**5))
    d = stats.kstest(m, "expon", args=(0, 1 / 1.5)).statistic
    assert d < 0.01


def test_clock_identity_layout():
    assert clock_identity(0, 3) == (RECOVERY, 0)
    assert clock_identity(4, 3) == (DEIMMUNIZATION, 1)
    assert clock_identity(7, 3) == (INFECTION, 1)


def test_single_active_clock():
    rates = np.zeros(6)
    rates[4] = 1.0
    b = ClockBundle(rates, 2, SeedSpec(1, (0,)))
    t = 0.0
    for _ in range(50):
        t2, c = next_bundle_event(b, t)
        assert c == 4 and t2 > t
        t = t2


def test_all_zero_rates():
    b = ClockBundle(np.zeros(4), 2, SeedSpec(1))
    assert next_bundle_event(b, 0.0) == (np.inf, -1)


def test_successive_events_increase():
    b = ClockBundle.for_star(20, 0.5, 1.0, SeedSpec(9, (0,)))
    t = 0.0
    for _ in range(5000):
        t2, _ = next_bundle_event(b, t)
        assert t2 > t
        t = t2


def test_first_event_owner_follows_rates():
    # n = 1 star at lambda = alpha = 1: Q and D for both vertices plus the
    # two directed infection clocks, six unit-rate clocks in total
    trials = 100_000
    counts = np.zeros(6)
    for k in range(trials):
        b = ClockBundle.for_star(1, 1.0, 1.0, SeedSpec(4, (k,)))
        counts[next_bundle_event(b, 0.0)[1]] += 1
    p = 1 / 6
    sigma = (p * (1 - p) / trials) ** 0.5
    assert np.all(np.abs(counts / trials - p) < 3 * sigma)


def test_single_clock_gaps_exponential():
    rates = np.zeros(3)
    rates[1] = 2.5
    b = ClockBundle(rates, 1, SeedSpec(6, (0,)))
    b.ensure(50_000)
    gaps = np.diff(np.concatenate([[0.0], b.times]))[:100_000]
    assert gaps.size == 100_000
    assert stats.kstest(gaps, "expon", args=(0, 1 / 2.5)).pvalue > 0.001


def test_superposition_gaps():
    k = 7
    b = ClockBundle(np.ones(k), k, SeedSpec(6, (1,)))
    b.ensure(100_000 / k + 10)
    gaps = np.diff(np.concatenate([[0.0], b.times]))[:100_000]
    assert stats.kstest(gaps, "expon", args=(0, 1 / k)).pvalue > 0.001


def test_realization_independent_of_reading_pattern():
    seed = SeedSpec(8, (2, 3))
    a = ClockBundle.for_star(30, 0.3, 2.0, seed)
    a.ensure(40.0)
    b = ClockBundle.for_star(30, 0.3, 2.0, seed)
    t = 0.0
    seen = []
    while t < 40.0:
        t, c = next_bundle_event(b, t)
        seen.append((t, c))
    keep = a.times <= 40.0
    assert [(float(x), int(c)) for x, c in zip(a.times[keep], a.owners[keep])] == seen[:-1]


def test_bundle_rejects_negative_rate():
    with pytest.raises(ValueError):
        ClockBundle(np.array([1.0, -1.0]), 1, SeedSpec(1))


def test_star_bundle_rates():
    b = ClockBundle.for_star(3, 0.2, 0.7, SeedSpec(1))
    assert np.allclose(b.rates[:4], 1.0)
    assert np.allclose(b.rates[4:8], 0.7)
    assert np.allclose(b.rates[8:], 0.2) and b.rates.size == 14
