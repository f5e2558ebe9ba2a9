"""Sampling oracles and producer-boundary behavior."""

import math
import time

import pytest

from parley.agents import (
    DELAY_KINDS,
    VALUE_KINDS,
    Distribution,
    InvalidDistribution,
    ProducerContext,
    ScriptedBidder,
    constant,
    exponential,
    normal,
    parse_distribution,
    produce_offer,
    sample,
    uniform,
    wrap_external_producer,
)
from parley.envelope import Offer, make_envelope, validate
from parley.trace import TraceSink

import random


def test_constant_bidder_is_exact():
    b = ScriptedBidder(constant(5.0), constant(0.0), seed=7)
    for _ in range(10):
        assert b.produce_offer() == (5.0, 0.0)


def test_same_seed_replays_value_delay_sequence():
    mk = lambda: ScriptedBidder(uniform(0, 1), exponential(0.002), seed=31)
    a, b = mk(), mk()
    seq_a = [a.produce_offer() for _ in range(50)]
    seq_b = [b.produce_offer() for _ in range(50)]
    assert seq_a == seq_b
    c = ScriptedBidder(uniform(0, 1), exponential(0.002), seed=32)
    assert [c.produce_offer() for _ in range(50)] != seq_a


def test_exponential_sample_mean_near_configured_mean():
    rng = random.Random(12)
    dist = exponential(0.003)
    n = 10_000
    mean = sum(sample(dist, rng) for _ in range(n)) / n
    assert abs(mean - 0.003) / 0.003 < 0.05


def test_uniform_samples_respect_bounds_and_midpoint():
    rng = random.Random(5)
    dist = uniform(1.0, 5.0)
    xs = [sample(dist, rng) for _ in range(10_000)]
    assert all(1.0 <= x < 5.0 for x in xs)
    assert abs(sum(xs) / len(xs) - 3.0) < 0.05


def test_normal_is_clipped_at_zero():
    rng = random.Random(9)
    dist = normal(0.0, 1.0)
    xs = [sample(dist, rng) for _ in range(20_000)]
    assert all(x >= 0.0 for x in xs)
    # E[max(Z, 0)] = 1/sqrt(2*pi) for a standard normal
    expected = 1.0 / math.sqrt(2.0 * math.pi)
    assert abs(sum(xs) / len(xs) - expected) / expected < 0.05


def test_normal_far_from_zero_keeps_its_mean():
    rng = random.Random(10)
    dist = normal(5.0, 1.0)
    xs = [sample(dist, rng) for _ in range(10_000)]
    assert abs(sum(xs) / len(xs) - 5.0) < 0.05


def test_invalid_parameters_are_rejected():
    with pytest.raises(InvalidDistribution):
        uniform(5, 1)
    with pytest.raises(InvalidDistribution):
        normal(0, -1)
    with pytest.raises(InvalidDistribution):
        exponential(0)
    with pytest.raises(InvalidDistribution):
        exponential(-2)
    with pytest.raises(InvalidDistribution):
        constant(float("nan"))


def test_role_restrictions():
    assert "exponential" not in VALUE_KINDS and "normal" not in DELAY_KINDS
    with pytest.raises(InvalidDistribution):
        ScriptedBidder(exponential(1.0), constant(0.0))
    with pytest.raises(InvalidDistribution):
        ScriptedBidder(constant(1.0), normal(1.0, 0.1))
    with pytest.raises(InvalidDistribution):
        ScriptedBidder(constant(1.0), constant(-0.5))


def test_parse_distribution_forms():
    assert parse_distribution("constant:3") == Distribution("constant", (3.0,))
    assert parse_distribution("uniform:1,5") == Distribution("uniform", (1.0, 5.0))
    assert parse_distribution("normal:4,1.5") == Distribution("normal", (4.0, 1.5))
    assert parse_distribution("exponential:2.0") == Distribution("exponential", (2.0,))
    assert parse_distribution("uniform: 1 , 5") == Distribution("uniform", (1.0, 5.0))


def test_parse_distribution_rejects_malformed():
    for bad in ("gauss:1,2", "uniform", "uniform:1", "uniform:a,b", "constant:1,2", ""):
        with pytest.raises(InvalidDistribution):
            parse_distribution(bad)


def test_module_level_produce_offer_delegates():
    b = ScriptedBidder(constant(2.0), constant(0.001))
    assert produce_offer(b) == (2.0, 0.001)


# ---------------------------------------------------------------------------
# external producer boundary

CTX = ProducerContext(round_id="round-7")


def fb(value=9.0, delay=0.004, seed=3):
    return ScriptedBidder(constant(value), constant(delay), seed=seed)


def test_valid_output_passes_through_unchanged():
    full = {
        "$schema": Offer.SCHEMA,
        "round_id": "round-7",
        "value": 7.5,
        "timestamp": "2025-01-01T00:00:00.000Z",
        "conditions": {"lane": "a"},
    }
    p = wrap_external_producer(lambda ctx: dict(full), fallback=fb())
    assert p.produce(CTX) == full
    assert p.invocations == 1


def test_json_text_output_gets_missing_basics_filled():
    p = wrap_external_producer(lambda ctx: '{"value": 3.25}', fallback=fb())
    fields = p.produce(CTX)
    assert fields["value"] == 3.25
    assert fields["round_id"] == "round-7"
    assert fields["$schema"] == Offer.SCHEMA
    assert "timestamp" in fields


def test_flaky_output_retries_then_succeeds():
    outputs = iter(["not json", {"value": float("inf")}, {"value": 4.0}])
    sink = TraceSink()
    p = wrap_external_producer(lambda ctx: next(outputs), fallback=fb(),
                               retries=2, trace=sink, agent_id="ext-1")
    fields = p.produce(CTX)
    assert fields["value"] == 4.0
    assert p.invocations == 3
    retry_events = [e for e in sink.events if e.kind == "retry"]
    assert len(retry_events) == 2
    assert all(e.detail["stage"] == "producer" for e in retry_events)
    assert [e.detail["attempt"] for e in retry_events] == [2, 3]


def test_always_failing_falls_back_after_bounded_attempts():
    def boom(ctx):
        raise RuntimeError("model unavailable")

    sink = TraceSink()
    p = wrap_external_producer(boom, fallback=fb(value=9.0), retries=1, trace=sink)
    fields = p.produce(CTX)
    assert fields["value"] == 9.0
    assert p.invocations == 2  # retries + 1, never more
    assert [e.kind for e in sink.events] == ["retry", "producer-fallback"]


def test_retries_zero_means_single_attempt():
    p = wrap_external_producer(lambda ctx: "junk", fallback=fb(value=1.5), retries=0)
    assert p.produce(CTX)["value"] == 1.5
    assert p.invocations == 1


def test_timeout_overrun_counts_as_failure():
    def slow(ctx):
        time.sleep(0.02)
        return {"value": 2.0}

    p = wrap_external_producer(slow, fallback=fb(value=6.0), timeout=0.001, retries=0)
    assert p.produce(CTX)["value"] == 6.0


def test_raised_timeout_error_counts_as_failure():
    def never(ctx):
        raise TimeoutError("upstream gave up")

    p = wrap_external_producer(never, fallback=fb(value=8.0), retries=0)
    assert p.produce(CTX)["value"] == 8.0


def test_producer_output_always_builds_a_valid_envelope():
    cases = [
        lambda ctx: {"value": 2.5},
        lambda ctx: "not json at all",
        lambda ctx: {"value": "NaN-ish"},
    ]
    for fn in cases:
        p = wrap_external_producer(fn, fallback=fb(), retries=1)
        fields = p.produce(CTX)
        env = make_envelope("agent://ext", ["topic://negotiation"], Offer.from_dict(fields))
        assert validate(env).ok


def test_produce_offer_pairs_value_with_fallback_delay():
    p = wrap_external_producer(lambda ctx: {"value": 3.0}, fallback=fb(delay=0.004))
    assert p.produce_offer(CTX) == (3.0, 0.004)
