"""Arrival-schedule generators: determinism, bounds, count law."""

import math
import statistics

import pytest

from parley.traffic import ArrivalSchedule, InvalidRate, fixed_schedule, poisson_schedule


def test_zero_rate_gives_empty_schedule():
    s = poisson_schedule(0, 120.0, seed=1)
    assert s.timestamps == ()
    assert len(s) == 0


def test_negative_rate_rejected():
    with pytest.raises(InvalidRate):
        poisson_schedule(-1, 60.0)


def test_nonpositive_duration_rejected():
    with pytest.raises(ValueError):
        poisson_schedule(10, 0)


def test_same_inputs_same_schedule():
    a = poisson_schedule(30, 600.0, seed=77)
    b = poisson_schedule(30, 600.0, seed=77)
    assert a.timestamps == b.timestamps
    c = poisson_schedule(30, 600.0, seed=78)
    assert c.timestamps != a.timestamps


def test_timestamps_sorted_and_within_window():
    s = poisson_schedule(60, 300.0, seed=3)
    ts = s.timestamps
    assert all(0.0 <= t < 300.0 for t in ts)
    assert all(ts[i] < ts[i + 1] for i in range(len(ts) - 1))


def test_count_law_mean_and_variance():
    # rate 90/min for 60 min => lambda = 5400 per run
    lam = 5400.0
    counts = [len(poisson_schedule(90, 3600.0, seed=s)) for s in range(200)]
    mean = statistics.fmean(counts)
    se = math.sqrt(lam / len(counts))
    assert abs(mean - lam) < 3 * se
    var = statistics.variance(counts)
    assert 0.75 < var / lam < 1.25


def test_gap_mean_matches_rate():
    s = poisson_schedule(120, 3600.0, seed=11)
    gaps = [b - a for a, b in zip(s.timestamps, s.timestamps[1:])]
    assert abs(statistics.fmean(gaps) - 0.5) < 0.02


def test_endurance_rate_lands_near_expected_count():
    # 2.24 per minute over 720 minutes => about 1613 emissions
    lam = 2.24 * 720
    for seed in range(5):
        n = len(poisson_schedule(2.24, 720 * 60.0, seed=seed))
        assert abs(n - lam) / lam < 0.10


def test_fixed_schedule_exact_times():
    assert fixed_schedule(3, 30.0).timestamps == (0.0, 30.0, 60.0)
    assert len(fixed_schedule(6, 20.0)) == 6
    assert fixed_schedule(1, 0.0).timestamps == (0.0,)


def test_fixed_schedule_validation():
    with pytest.raises(ValueError):
        fixed_schedule(0, 10.0)
    with pytest.raises(ValueError):
        fixed_schedule(3, -1.0)


def test_schedule_len_protocol():
    s = fixed_schedule(4, 5.0)
    assert isinstance(s, ArrivalSchedule)
    assert len(s) == 4
