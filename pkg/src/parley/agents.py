"""Bidder behavior models and the payload-producer boundary.

A contractor needs two numbers per call for proposals: what to bid and how
long to think.  ScriptedBidder draws both from configured distributions
using a private RNG stream, so a fixed seed replays the exact (value,
delay) sequence.  All sampling is written as explicit transforms over
uniform draws (inverse-CDF for the exponential, Box-Muller for the
normal) so the sequences depend only on the seeded uniform generator,
not on stdlib method internals.

wrap_external_producer() is the plug point for non-scripted payload
sources (for example a text model behind an API).  Whatever the injected
callable returns is parsed and checked against the offer schema; bad or
slow output is retried a bounded number of times and then replaced by a
draw from a scripted fallback, so nothing malformed ever reaches the
transport from this boundary.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

from .envelope import Offer, UnknownSchema, iso_from_epoch, validate_payload_fields


def derive_seed(*parts: object) -> int:
    """Stable child seed from labeled parts (sha256, not the salted hash()),
    so every agent gets an independent stream that replays across runs."""
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


class InvalidDistribution(Exception):
    """Distribution kind or parameters outside the accepted space."""


@dataclass(frozen=True)
class Distribution:
    kind: str
    params: tuple[float, ...]


def constant(v: float) -> Distribution:
    if not math.isfinite(v):
        raise InvalidDistribution("constant value must be finite")
    return Distribution("constant", (float(v),))


def uniform(lo: float, hi: float) -> Distribution:
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
        raise InvalidDistribution(f"uniform requires lo <= hi, got ({lo}, {hi})")
    return Distribution("uniform", (float(lo), float(hi)))


def normal(mean: float, sigma: float) -> Distribution:
    if not (math.isfinite(mean) and math.isfinite(sigma)) or sigma < 0:
        raise InvalidDistribution(f"normal requires sigma >= 0, got {sigma}")
    return Distribution("normal", (float(mean), float(sigma)))


def exponential(mean: float) -> Distribution:
    if not math.isfinite(mean) or mean <= 0:
        raise InvalidDistribution(f"exponential requires mean > 0, got {mean}")
    return Distribution("exponential", (float(mean),))


_FACTORIES: dict[str, Callable[..., Distribution]] = {
    "constant": constant,
    "uniform": uniform,
    "normal": normal,
    "exponential": exponential,
}

VALUE_KINDS = frozenset({"constant", "uniform", "normal"})
DELAY_KINDS = frozenset({"constant", "uniform", "exponential"})


def parse_distribution(text: str) -> Distribution:
    """Parse the flat config form, e.g. "uniform:1.0,5.0" or "constant:3".

    The factory functions do the parameter checking, so every malformed
    spelling lands on InvalidDistribution with a usable message.
    """
    if not isinstance(text, str) or ":" not in text:
        raise InvalidDistribution(f"expected 'kind:p1[,p2]', got {text!r}")
    kind, _, rest = text.partition(":")
    kind = kind.strip()
    factory = _FACTORIES.get(kind)
    if factory is None:
        raise InvalidDistribution(f"unknown distribution kind: {kind!r}")
    try:
        params = [float(p) for p in rest.split(",") if p.strip() != ""]
    except ValueError as exc:
        raise InvalidDistribution(f"bad parameter in {text!r}") from exc
    try:
        return factory(*params)
    except TypeError as exc:
        raise InvalidDistribution(f"wrong parameter count in {text!r}") from exc


def sample(dist: Distribution, rng: random.Random) -> float:
    """One draw.  Normal is Box-Muller clipped at zero; exponential is
    inverse-CDF.  Uniform draws feed every transform."""
    if dist.kind == "constant":
        return dist.params[0]
    if dist.kind == "uniform":
        lo, hi = dist.params
        return lo + (hi - lo) * rng.random()
    if dist.kind == "normal":
        mean, sigma = dist.params
        u1 = 1.0 - rng.random()  # (0, 1]: keeps the log finite
        u2 = rng.random()
        z = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
        return max(0.0, mean + sigma * z)
    if dist.kind == "exponential":
        mean = dist.params[0]
        return -mean * math.log(1.0 - rng.random())
    raise InvalidDistribution(f"unknown distribution kind: {dist.kind!r}")


# ---------------------------------------------------------------------------
# producers

@dataclass(frozen=True)
class ProducerContext:
    """What a producer may look at when shaping an offer."""

    round_id: str
    constraints: Mapping[str, Any] = field(default_factory=dict)
    history: tuple = ()


class ScriptedBidder:
    """Deterministic (value, delay) source over a private RNG stream.

    Draw order is fixed (value first, then delay) so a seed fully pins
    the sequence regardless of how the numbers get used downstream.
    """

    def __init__(self, value_distribution: Distribution | str,
                 delay_distribution: Distribution | str, seed: int = 0):
        if isinstance(value_distribution, str):
            value_distribution = parse_distribution(value_distribution)
        if isinstance(delay_distribution, str):
            delay_distribution = parse_distribution(delay_distribution)
        if value_distribution.kind not in VALUE_KINDS:
            raise InvalidDistribution(
                f"{value_distribution.kind!r} cannot be a value distribution")
        if delay_distribution.kind not in DELAY_KINDS:
            raise InvalidDistribution(
                f"{delay_distribution.kind!r} cannot be a delay distribution")
        if delay_distribution.kind in ("constant", "uniform") and delay_distribution.params[0] < 0:
            raise InvalidDistribution("delays cannot be negative")
        self.value_distribution = value_distribution
        self.delay_distribution = delay_distribution
        self._rng = random.Random(seed)

    def produce_offer(self, ctx: ProducerContext | None = None) -> tuple[float, float]:
        value = sample(self.value_distribution, self._rng)
        delay = sample(self.delay_distribution, self._rng)
        return value, delay

    def produce(self, ctx: ProducerContext) -> dict[str, Any]:
        value, _ = self.produce_offer(ctx)
        return {"value": value}


def produce_offer(bidder: ScriptedBidder, ctx: ProducerContext | None = None) -> tuple[float, float]:
    return bidder.produce_offer(ctx)


class ExternalProducer:
    """Validating wrapper around an injected payload callable.

    Each attempt calls the external function, parses its output (JSON
    text or a mapping), fills in round_id / timestamp when absent, and
    checks the result against the offer schema.  An exception from the
    callable, output that fails validation, or a wall-clock overrun of
    `timeout` all count as one failed attempt.  The callable runs
    synchronously, so an overrunning call is detected after the fact
    rather than interrupted.  After retries are spent the scripted
    fallback supplies the value and a "producer-fallback" event is
    traced; the delay always comes from the fallback's stream.
    """

    def __init__(self, fn: Callable[[ProducerContext], Any], *,
                 fallback: ScriptedBidder, timeout: float | None = None,
                 retries: int = 1, trace=None, clock=None, agent_id: str | None = None):
        if retries < 0:
            raise ValueError("retries must be non-negative")
        self._fn = fn
        self._fallback = fallback
        self._timeout = timeout
        self._retries = retries
        self._trace = trace
        self._clock = clock
        self._agent_id = agent_id
        self.invocations = 0

    def _now(self) -> float:
        return self._clock.now() if self._clock is not None else 0.0

    def _emit(self, kind: str, **fields) -> None:
        if self._trace is not None:
            self._trace.emit(kind, self._now(), agent_id=self._agent_id, **fields)

    def _one_attempt(self, ctx: ProducerContext) -> dict[str, Any] | None:
        started = time.monotonic()
        try:
            raw = self._fn(ctx)
        except Exception:
            return None
        if self._timeout is not None and time.monotonic() - started > self._timeout:
            return None
        if isinstance(raw, str):
            try:
                raw = json.loads(raw)
            except ValueError:
                return None
        if not isinstance(raw, Mapping):
            return None
        fields = dict(raw)
        fields.setdefault("$schema", Offer.SCHEMA)
        fields.setdefault("round_id", ctx.round_id)
        fields.setdefault("timestamp", iso_from_epoch(self._now()))
        try:
            result = validate_payload_fields(fields)
        except UnknownSchema:
            return None
        return fields if result.ok else None

    def produce(self, ctx: ProducerContext) -> dict[str, Any]:
        for attempt in range(1, self._retries + 2):
            self.invocations += 1
            fields = self._one_attempt(ctx)
            if fields is not None:
                return fields
            if attempt <= self._retries:
                self._emit("retry", detail={"stage": "producer", "attempt": attempt + 1})
        self._emit("producer-fallback")
        value = sample(self._fallback.value_distribution, self._fallback._rng)
        return {
            "$schema": Offer.SCHEMA,
            "round_id": ctx.round_id,
            "value": value,
            "timestamp": iso_from_epoch(self._now()),
        }

    def produce_offer(self, ctx: ProducerContext) -> tuple[float, float]:
        fields = self.produce(ctx)
        delay = sample(self._fallback.delay_distribution, self._fallback._rng)
        return float(fields["value"]), delay


def wrap_external_producer(fn: Callable[[ProducerContext], Any], *,
                           fallback: ScriptedBidder, timeout: float | None = None,
                           retries: int = 1, trace=None, clock=None,
                           agent_id: str | None = None) -> ExternalProducer:
    """Bound-retry, schema-checked adapter from an external callable to a
    producer the exchange can trust.  Nothing invalid escapes: the worst
    case is a fallback draw after retries+1 failed invocations."""
    return ExternalProducer(fn, fallback=fallback, timeout=timeout, retries=retries,
                            trace=trace, clock=clock, agent_id=agent_id)
