"""Arrival schedules that drive call-for-proposal emission.

Two generators: a Poisson process for sustained load (inter-arrival gaps
are inverse-CDF exponential draws over a seeded uniform stream, so the
schedule is a pure function of rate, duration, seed) and a fixed-spacing
generator for runs that must hit an exact emission count.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass


class InvalidRate(Exception):
    """Arrival rate outside the accepted range."""


@dataclass(frozen=True)
class ArrivalSchedule:
    rate_per_min: float
    duration: float  # seconds
    seed: int
    timestamps: tuple[float, ...]  # seconds from run start, sorted, within [0, duration)

    def __len__(self) -> int:
        return len(self.timestamps)


def poisson_schedule(rate_per_min: float, duration: float, seed: int = 0) -> ArrivalSchedule:
    """Emission times of a homogeneous Poisson process over [0, duration).

    duration is in seconds; gaps have mean 60/rate_per_min seconds.
    """
    if rate_per_min < 0:
        raise InvalidRate(f"rate_per_min must be >= 0, got {rate_per_min}")
    if duration <= 0:
        raise ValueError(f"duration must be positive, got {duration}")
    if rate_per_min == 0:
        return ArrivalSchedule(0.0, duration, seed, ())
    mean_gap = 60.0 / rate_per_min
    rng = random.Random(seed)
    times: list[float] = []
    t = -mean_gap * math.log(1.0 - rng.random())
    while t < duration:
        times.append(t)
        t += -mean_gap * math.log(1.0 - rng.random())
    return ArrivalSchedule(float(rate_per_min), float(duration), seed, tuple(times))


def fixed_schedule(count: int, spacing: float) -> ArrivalSchedule:
    """Exactly `count` emissions at 0, spacing, 2*spacing, ..."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if spacing < 0:
        raise ValueError(f"spacing must be >= 0, got {spacing}")
    times = tuple(i * spacing for i in range(count))
    duration = times[-1] + max(spacing, 1.0)
    rate = count / (duration / 60.0)
    return ArrivalSchedule(rate, duration, 0, times)
