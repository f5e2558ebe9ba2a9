"""Call-for-proposal rounds: one initiator, many contractors, over the bus.

The initiator broadcasts a Cfp on the negotiation topic, snapshots the
contractor roster as the expected complement, and records offers arriving
at its inbox.  Policy evaluation runs as scheduled events: once at the
round's horizon boundaries and once after each offer arrival (deduped per
round and instant, so a batch of same-instant offers is judged as one set).
A terminal decision is applied exactly once; whatever arrives afterwards is
traced as a late offer and dropped.

Contractors answer each Cfp according to a cyclic response pattern:

  respond  bid after the configured think-time draw
  batch    bid after the shared batch delay (so co-configured contractors
           land in the same instant and the round fills in one step)
  skip     sit the round out

The pattern defaults to always-respond; scheduling is entirely clock-driven
so a fixed seed replays byte-identical traces.

Offer latency is measured on the initiator's clock only: receive time
minus that round's Cfp publish time, in milliseconds, rounded to 3 places.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field as dc_field
from typing import Any, Sequence

from .agents import Distribution, ProducerContext, derive_seed, sample
from .envelope import (
    Accept,
    Cfp,
    Confirm,
    Envelope,
    Offer,
    Reject,
    iso_from_epoch,
    make_envelope,
)
from .gateway import AuthToken, DedupStore, Exchange, Registry
from .policy import (
    Award,
    ConfirmFirst,
    Continue,
    OfferRecord,
    PolicyConfig,
    RoundState,
    decide,
)
from .transport import AT_LEAST_ONCE, subject_for_uri

DEFAULT_TOPIC = "topic://negotiation"

ACK_ALWAYS = "always"
ACK_NEVER = "never"
ACK_DROP_PREFIX = "drop-prob:"

RESPOND = "respond"
BATCH = "batch"
SKIP = "skip"

_TOKEN_REFRESH_MARGIN_S = 60.0


class RoundStartFailed(Exception):
    """The gateway refused the Cfp."""


def _parse_ack_behavior(text: str) -> float | None:
    """None means never ack; 0.0 means always; p in (0,1] is the drop chance."""
    if text == ACK_ALWAYS:
        return 0.0
    if text == ACK_NEVER:
        return None
    if text.startswith(ACK_DROP_PREFIX):
        p = float(text[len(ACK_DROP_PREFIX):])
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"ack drop probability out of range: {p}")
        return p
    raise ValueError(f"unknown ack behavior: {text!r}")


def _parse_pattern(pattern: Sequence[str] | str) -> tuple[str, ...]:
    entries = tuple(p.strip() for p in pattern.split(",")) if isinstance(pattern, str) else tuple(pattern)
    if not entries:
        raise ValueError("round_pattern cannot be empty")
    for e in entries:
        if e not in (RESPOND, BATCH, SKIP):
            raise ValueError(f"unknown round_pattern entry: {e!r}")
    return entries


@dataclass
class ContractorConfig:
    agent_id: str
    bidder: Any  # anything with produce()/produce_offer()
    response_delay: Distribution | None = None
    ack_behavior: str = ACK_ALWAYS
    round_pattern: Sequence[str] | str = (RESPOND,)
    batch_delay: float = 0.002
    seed: int = 0

    def __post_init__(self) -> None:
        _parse_ack_behavior(self.ack_behavior)
        self.round_pattern = _parse_pattern(self.round_pattern)
        if self.batch_delay < 0:
            raise ValueError("batch_delay cannot be negative")


class _TokenHolder:
    """Issues and silently refreshes a gateway token for one agent."""

    def __init__(self, exchange: Exchange, agent_id: str, validity_s: float,
                 fixed: AuthToken | None = None) -> None:
        self._exchange = exchange
        self._agent_id = agent_id
        self._validity = validity_s
        self._fixed = fixed
        self._current: AuthToken | None = fixed

    def get(self) -> AuthToken:
        if self._fixed is not None:
            return self._fixed
        now = self._exchange.clock.now()
        if self._current is None or self._current.expires_at - now < _TOKEN_REFRESH_MARGIN_S:
            self._current = self._exchange.gateway.issue(self._agent_id, self._validity)
        return self._current


class Contractor:
    """Bids on broadcast rounds; acknowledges direct messages per config."""

    def __init__(self, cfg: ContractorConfig, exchange: Exchange, registry: Registry, *,
                 topic: str = DEFAULT_TOPIC, initiator_id: str = "alice",
                 trace=None, token_validity: float = 7200.0) -> None:
        self.cfg = cfg
        self._exchange = exchange
        self._clock = exchange.clock
        self._trace = trace
        self._initiator_id = initiator_id
        self._rng = random.Random(derive_seed("contractor", cfg.agent_id, cfg.seed))
        self._ack_drop = _parse_ack_behavior(cfg.ack_behavior)
        self._token = _TokenHolder(exchange, cfg.agent_id, token_validity)
        self._seen = DedupStore()
        self._cfp_ordinal = 0
        self.cfps_seen = 0
        self.offers_sent = 0
        self.confirms_received = 0
        self.accepts_received = 0
        self.rejects_received = 0
        registry.register(cfg.agent_id)
        exchange.bus.subscribe(subject_for_uri(topic), self._on_topic, owner=cfg.agent_id)
        exchange.bus.subscribe(subject_for_uri(f"agent://{cfg.agent_id}"),
                               self._on_inbox, owner=cfg.agent_id)

    # -- inbound ------------------------------------------------------------

    def _on_topic(self, env: Envelope) -> None:
        if not isinstance(env.payload, Cfp):
            return
        self._exchange.ack(env.msg_id, self.cfg.agent_id)
        if not self._seen.check_and_add(env.msg_id):
            return  # redelivery of a Cfp we already answered
        self.cfps_seen += 1
        entry = self.cfg.round_pattern[self._cfp_ordinal % len(self.cfg.round_pattern)]
        self._cfp_ordinal += 1
        if entry == SKIP:
            return
        ctx = ProducerContext(round_id=env.payload.round_id,
                              constraints=env.payload.constraints or {})
        if entry == BATCH:
            value = float(self.cfg.bidder.produce(ctx)["value"])
            delay = self.cfg.batch_delay
        elif self.cfg.response_delay is not None:
            value = float(self.cfg.bidder.produce(ctx)["value"])
            delay = sample(self.cfg.response_delay, self._rng)
        else:
            value, delay = self.cfg.bidder.produce_offer(ctx)
        self._clock.call_later(delay, lambda rid=env.payload.round_id, v=value: self._send_offer(rid, v))

    def _send_offer(self, round_id: str, value: float) -> None:
        now = self._clock.now()
        offer = Offer(round_id=round_id, value=value, timestamp=iso_from_epoch(now))
        env = make_envelope(f"agent://{self.cfg.agent_id}",
                            [f"agent://{self._initiator_id}"], offer,
                            clock=self._clock, rng=self._rng)
        result, _receipt = self._exchange.submit(env, self._token.get(), AT_LEAST_ONCE)
        if result.admitted:
            self.offers_sent += 1
            if self._trace is not None:
                self._trace.emit("offer-sent", self._clock.now(), round_id=round_id,
                                 agent_id=self.cfg.agent_id, msg_id=env.msg_id)

    def _on_inbox(self, env: Envelope) -> None:
        p = env.payload
        if isinstance(p, Confirm):
            self.confirms_received += 1
        elif isinstance(p, Accept):
            self.accepts_received += 1
        elif isinstance(p, Reject):
            self.rejects_received += 1
        else:
            return
        if self._ack_drop is None:
            return
        if self._ack_drop == 0.0 or self._rng.random() >= self._ack_drop:
            self._exchange.ack(env.msg_id, self.cfg.agent_id)


class Initiator:
    """Owns round state; publishes Cfps and applies policy decisions."""

    def __init__(self, agent_id: str, exchange: Exchange, registry: Registry,
                 policy: PolicyConfig, *, topic: str = DEFAULT_TOPIC, trace=None,
                 seed: int = 0, token_validity: float = 7200.0,
                 fixed_token: AuthToken | None = None) -> None:
        self.agent_id = agent_id
        self.policy = policy
        self.topic = topic
        self._exchange = exchange
        self._clock = exchange.clock
        self._registry = registry
        self._trace = trace
        self._rng = random.Random(derive_seed("initiator", agent_id, seed))
        self._token = _TokenHolder(exchange, agent_id, token_validity, fixed=fixed_token)
        self.rounds: dict[str, RoundState] = {}
        self.round_order: list[str] = []
        self.late_offers: dict[str, int] = {}
        self._seen_offers = DedupStore()
        self._eval_pending: set[str] = set()
        self._round_seq = 0
        exchange.bus.subscribe(subject_for_uri(f"agent://{agent_id}"),
                               self._on_inbox, owner=agent_id)

    # -- outbound -----------------------------------------------------------

    def start_round(self, deadline_s: float, constraints: dict | None = None) -> str:
        now = self._clock.now()
        self._round_seq += 1
        round_id = f"round-{self._round_seq:06d}"
        cfp = Cfp(round_id=round_id, deadline=iso_from_epoch(now + deadline_s),
                  constraints=constraints or {})
        env = make_envelope(f"agent://{self.agent_id}", [self.topic], cfp,
                            clock=self._clock, rng=self._rng)
        result, _receipt = self._exchange.submit(env, self._token.get(), AT_LEAST_ONCE)
        if not result.admitted:
            raise RoundStartFailed(result.reason or "rejected")
        state = RoundState(
            round_id=round_id,
            cfp_msg_id=env.msg_id,
            cfp_sent_at=now,
            deadline=now + deadline_s,
            expected_contractors=len(self._registry.names()),
        )
        self.rounds[round_id] = state
        self.round_order.append(round_id)
        self.late_offers[round_id] = 0
        if self._trace is not None:
            self._trace.emit("cfp-sent", self._clock.now(), round_id=round_id,
                             agent_id=self.agent_id, msg_id=env.msg_id)
        horizon = min(state.deadline, state.cfp_sent_at + self.policy.round_timeout)
        self._clock.call_at(horizon, lambda rid=round_id: self._evaluate(rid))
        if state.deadline > horizon:
            self._clock.call_at(state.deadline, lambda rid=round_id: self._evaluate(rid))
        return round_id

    # -- inbound ------------------------------------------------------------

    def _on_inbox(self, env: Envelope) -> None:
        if isinstance(env.payload, Offer):
            self.on_offer(env)

    def on_offer(self, env: Envelope) -> None:
        now = self._clock.now()
        payload: Offer = env.payload
        sender = env.sender_name()
        self._exchange.ack(env.msg_id, self.agent_id)
        state = self.rounds.get(payload.round_id)
        if state is None:
            if self._trace is not None:
                self._trace.emit("unknown-round", self._clock.now(), round_id=payload.round_id,
                                 agent_id=sender, msg_id=env.msg_id)
            return
        if not self._seen_offers.check_and_add(env.msg_id):
            return  # transport redelivery; already recorded or already judged
        latency_ms = round((now - state.cfp_sent_at) * 1000.0, 3)
        if state.is_terminal:
            self.late_offers[payload.round_id] += 1
            if self._trace is not None:
                self._trace.emit("late-offer", self._clock.now(), round_id=payload.round_id,
                                 agent_id=sender, latency_ms=latency_ms, msg_id=env.msg_id)
            return
        if any(o.agent_id == sender for o in state.offers):
            return  # one bid per contractor per round
        state.offers.append(OfferRecord(agent_id=sender, value=float(payload.value),
                                        received_at=now, msg_id=env.msg_id))
        if self._trace is not None:
            self._trace.emit("offer-received", self._clock.now(), round_id=payload.round_id,
                             agent_id=sender, latency_ms=latency_ms, msg_id=env.msg_id)
        if payload.round_id not in self._eval_pending:
            self._eval_pending.add(payload.round_id)
            self._clock.call_later(0.0, lambda rid=payload.round_id: self._evaluate(rid))

    # -- policy application ---------------------------------------------------

    def _evaluate(self, round_id: str) -> None:
        self._eval_pending.discard(round_id)
        state = self.rounds[round_id]
        if state.is_terminal:
            return
        decision = decide(self.policy, state, self._clock.now())
        if isinstance(decision, Continue):
            return
        state.terminal = decision
        if isinstance(decision, ConfirmFirst):
            self._send_verdict(Confirm, decision.offer, round_id, "confirm")
        elif isinstance(decision, Award):
            self._send_verdict(Accept, decision.winner, round_id, "accept")
            for loser in decision.losers:
                self._send_verdict(Reject, loser, round_id, "reject")
        if self._trace is not None:
            self._trace.emit("round-terminal", self._clock.now(), round_id=round_id,
                             agent_id=self.agent_id,
                             detail={"offers": len(state.offers),
                                     "expected": state.expected_contractors,
                                     "decision": decision.kind})

    def _send_verdict(self, payload_cls, offer: OfferRecord, round_id: str, kind: str) -> None:
        payload = payload_cls(ref_msg_id=offer.msg_id, round_id=round_id)
        env = make_envelope(f"agent://{self.agent_id}",
                            [f"agent://{offer.agent_id}"], payload,
                            clock=self._clock, rng=self._rng)
        result, _ = self._exchange.submit(env, self._token.get(), AT_LEAST_ONCE)
        if result.admitted and self._trace is not None:
            self._trace.emit(kind, self._clock.now(), round_id=round_id,
                             agent_id=offer.agent_id, msg_id=env.msg_id)

    # -- accounting -----------------------------------------------------------

    def offers_recorded(self) -> int:
        return sum(len(s.offers) for s in self.rounds.values())

    def late_total(self) -> int:
        return sum(self.late_offers.values())
