"""Bilateral alternating offers: two parties trade counter-proposals under
a deadline until one accepts, one quits, or time runs out.

Party a always opens with turn 0, so turn parity identifies the legal
sender at every step.  alt_step() is the whole protocol: it checks turn
number, sender legality and expiry against the shared session record,
asks the responding strategy to accept / counter / quit, applies the
transition, and hands back the payload to send.  The session runner wires
two parties over the exchange with a fixed think delay per turn; the
deadline timer is scheduled before the opening proposal, so at the exact
deadline instant expiry wins against any same-time message.

Terms are a flat map with one required numeric key, price.  A quit (or a
strategy with nothing left to propose) is sent as a Reject referencing
the offer on the table, which doubles as the termination notice.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from .agents import derive_seed
from .envelope import (
    Accept,
    AlternatingOffer,
    Envelope,
    Reject,
    epoch_from_iso,
    iso_from_epoch,
    make_envelope,
)
from .gateway import Exchange
from .trace import TraceSink
from .transport import AT_LEAST_ONCE, subject_for_uri

ACTIVE = "active"
AGREED = "agreed"
TERMINATED = "terminated"

ACCEPT = "accept"
COUNTER = "counter"
QUIT = "quit"

DEFAULT_TURN_DELAY_S = 0.010


class WrongTurn(Exception):
    """Turn number or sender out of order; the session did not change."""


class Expired(Exception):
    """Deadline or offer validity passed; the session is now terminated."""


@dataclass
class AltSession:
    session_id: str
    parties: tuple[str, str]  # (a, b); a opens with turn 0
    deadline: float  # absolute epoch seconds
    offer_validity_s: float | None = None
    turn: int = 0
    current_terms: dict[str, Any] = field(default_factory=dict)
    status: str = ACTIVE
    history: list[dict[str, Any]] = field(default_factory=list)
    proposals_sent: int = 0
    last_offer_msg_id: str | None = None

    def legal_sender(self, turn: int) -> str:
        return self.parties[turn % 2]


@dataclass(frozen=True)
class AltOutcome:
    status: str
    turns: int  # proposals actually sent
    final_terms: dict[str, Any]
    history: tuple[dict[str, Any], ...]
    ended_at: float


class AltStrategy:
    """Override propose() and evaluate(); both defaults keep talks going."""

    def propose(self, turn: int, history: Sequence[Mapping[str, Any]]) -> dict[str, Any] | None:
        raise NotImplementedError

    def evaluate(self, terms: Mapping[str, Any]) -> str:
        return COUNTER


class ScriptedConcession(AltStrategy):
    """Proposes a fixed price ladder, one rung per own proposal; quits when
    the ladder runs out."""

    def __init__(self, prices: Sequence[float]):
        self._prices = list(prices)
        self._next = 0

    def propose(self, turn, history):
        if self._next >= len(self._prices):
            return None
        price = self._prices[self._next]
        self._next += 1
        return {"price": price}


class AcceptThreshold(AltStrategy):
    """Accepts any price at or under the threshold, otherwise counters down
    its own ladder."""

    def __init__(self, threshold: float, counters: Sequence[float] = ()):
        self._threshold = threshold
        self._ladder = ScriptedConcession(counters)

    def propose(self, turn, history):
        return self._ladder.propose(turn, history)

    def evaluate(self, terms):
        return ACCEPT if terms.get("price", float("inf")) <= self._threshold else COUNTER


class NeverAccept(AltStrategy):
    """Stonewalls at one price forever; only the deadline ends it."""

    def __init__(self, price: float):
        self._price = price

    def propose(self, turn, history):
        return {"price": self._price}


class AcceptAny(AltStrategy):
    def __init__(self, opening: Mapping[str, Any] | None = None):
        self._opening = dict(opening or {"price": 1.0})

    def propose(self, turn, history):
        return dict(self._opening)

    def evaluate(self, terms):
        return ACCEPT


class QuitImmediately(AltStrategy):
    def propose(self, turn, history):
        return None

    def evaluate(self, terms):
        return QUIT


def alt_step(session: AltSession, env: Envelope, strategy: AltStrategy, clock):
    """Process one inbound proposal for the responding party.

    Returns the payload to send back: a counter AlternatingOffer, an
    Accept, or a Reject (quit).  Raises WrongTurn without touching the
    session; raises Expired after marking it terminated.
    """
    payload = env.payload
    if not isinstance(payload, AlternatingOffer):
        raise WrongTurn(f"expected an alternating offer, got {type(payload).__name__}")
    if session.status != ACTIVE:
        raise WrongTurn(f"session is {session.status}")
    if payload.turn != session.turn:
        raise WrongTurn(f"turn {payload.turn} arrived while expecting {session.turn}")
    sender = env.sender_name()
    if sender != session.legal_sender(payload.turn):
        raise WrongTurn(f"{sender} may not move on turn {payload.turn}")
    now = clock.now()
    expiry = session.deadline
    if payload.valid_until:
        expiry = min(expiry, epoch_from_iso(payload.valid_until))
    if now >= expiry:
        session.status = TERMINATED
        raise Expired(f"offer expired at {expiry}")

    terms = dict(payload.terms or {})
    session.history.append({"turn": payload.turn, "sender": sender,
                            "terms": terms, "msg_id": env.msg_id})
    session.current_terms = terms
    session.last_offer_msg_id = env.msg_id

    verdict = strategy.evaluate(terms)
    if verdict == ACCEPT:
        session.status = AGREED
        return Accept(ref_msg_id=env.msg_id, round_id=session.session_id)
    if verdict == QUIT:
        session.status = TERMINATED
        return Reject(ref_msg_id=env.msg_id, round_id=session.session_id)

    counter = strategy.propose(payload.turn + 1, tuple(session.history))
    if counter is None:
        session.status = TERMINATED
        return Reject(ref_msg_id=env.msg_id, round_id=session.session_id)
    session.turn = payload.turn + 1
    session.current_terms = dict(counter)
    valid_until = session.deadline
    if session.offer_validity_s is not None:
        valid_until = min(valid_until, now + session.offer_validity_s)
    return AlternatingOffer(session_id=session.session_id, turn=session.turn,
                            terms=dict(counter), valid_until=iso_from_epoch(valid_until))


class _Party:
    def __init__(self, agent_id: str, peer_id: str, strategy: AltStrategy,
                 session: AltSession, exchange: Exchange, trace: TraceSink | None,
                 turn_delay: float, seed: int, token_validity: float) -> None:
        self.agent_id = agent_id
        self.peer_id = peer_id
        self.strategy = strategy
        self.session = session
        self._exchange = exchange
        self._clock = exchange.clock
        self._trace = trace
        self._turn_delay = turn_delay
        self._rng = random.Random(derive_seed("alt", agent_id, seed))
        self._token = exchange.gateway.issue(agent_id, token_validity)
        exchange.bus.subscribe(subject_for_uri(f"agent://{agent_id}"),
                               self._on_inbox, owner=agent_id)

    def _on_inbox(self, env: Envelope) -> None:
        self._exchange.ack(env.msg_id, self.agent_id)
        if isinstance(env.payload, AlternatingOffer):
            self._clock.call_later(self._turn_delay, lambda e=env: self._respond(e))

    def _respond(self, env: Envelope) -> None:
        if self.session.status != ACTIVE:
            return
        try:
            out = alt_step(self.session, env, self.strategy, self._clock)
        except (WrongTurn, Expired):
            return
        self.send(out)

    def send(self, payload) -> None:
        env = make_envelope(f"agent://{self.agent_id}", [f"agent://{self.peer_id}"],
                            payload, clock=self._clock, rng=self._rng)
        result, _ = self._exchange.submit(env, self._token, AT_LEAST_ONCE)
        if not result.admitted:
            return
        if isinstance(payload, AlternatingOffer):
            self.session.proposals_sent += 1
        if self._trace is None:
            return
        if isinstance(payload, AlternatingOffer):
            self._trace.emit("alt-turn", self._clock.now(), round_id=self.session.session_id,
                             agent_id=self.agent_id, msg_id=env.msg_id,
                             detail={"turn": payload.turn,
                                     "price": payload.terms.get("price")})
        elif isinstance(payload, Accept):
            self._trace.emit("accept", self._clock.now(), round_id=self.session.session_id,
                             agent_id=self.agent_id, msg_id=env.msg_id)
        elif isinstance(payload, Reject):
            self._trace.emit("reject", self._clock.now(), round_id=self.session.session_id,
                             agent_id=self.agent_id, msg_id=env.msg_id)


def run_alt_session(exchange: Exchange, a_strategy: AltStrategy, b_strategy: AltStrategy,
                    deadline_s: float, *, trace: TraceSink | None = None,
                    session_id: str = "session-000001",
                    party_a: str = "alt-a", party_b: str = "alt-b",
                    turn_delay: float = DEFAULT_TURN_DELAY_S,
                    offer_validity_s: float | None = None,
                    seed: int = 0, drain: bool = True) -> AltOutcome:
    """Drive one session to a terminal status and report the outcome.

    The deadline timer is armed before anything is sent; expiry at exactly
    the deadline beats any message carrying the same timestamp.
    """
    clock = exchange.clock
    start = clock.now()
    session = AltSession(session_id=session_id, parties=(party_a, party_b),
                         deadline=start + deadline_s,
                         offer_validity_s=offer_validity_s)

    def expire() -> None:
        if session.status == ACTIVE:
            session.status = TERMINATED

    clock.call_at(session.deadline, expire)
    token_validity = max(7200.0, deadline_s * 2)
    a = _Party(party_a, party_b, a_strategy, session, exchange, trace,
               turn_delay, seed, token_validity)
    _Party(party_b, party_a, b_strategy, session, exchange, trace,
           turn_delay, seed + 1, token_validity)

    opening = a_strategy.propose(0, ())
    if opening is None:
        session.status = TERMINATED
        a.send(Reject(ref_msg_id=session.session_id, round_id=session.session_id))
    else:
        session.current_terms = dict(opening)
        valid_until = session.deadline
        if offer_validity_s is not None:
            valid_until = min(valid_until, start + offer_validity_s)
        a.send(AlternatingOffer(session_id=session.session_id, turn=0,
                                terms=dict(opening),
                                valid_until=iso_from_epoch(valid_until)))

    while session.status == ACTIVE and clock.pending():
        clock.run(max_events=1)
    ended_at = clock.now()
    if drain:
        clock.run()  # settle in-flight deliveries and acks; nobody moves after terminal

    return AltOutcome(status=session.status, turns=session.proposals_sent,
                      final_terms=dict(session.current_terms),
                      history=tuple(session.history), ended_at=ended_at)
