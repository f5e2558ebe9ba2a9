"""Round governance: when to stop collecting offers and what to do then.

decide() is a pure function of (config, round state, now); it never touches
a clock or transport, which is what makes every policy decision replayable
and unit-testable.  Callers re-invoke it at each offer arrival and at the
timeout boundaries; once it stops returning Continue for a state, it stays
terminal for every later instant (monotone termination).

Three escalation levels govern a round:

  low     collect everything until min(deadline, cfp_sent_at + round_timeout),
          then close (award only in award mode, and only if offers arrived).
  medium  first-response: the first offer(s) on the table decide the round.
          If the offer set is already complete at evaluation time the round
          simply closes (nothing was cut short, so no Confirm is emitted);
          otherwise the earliest offer is confirmed and the round ends early.
          An offerless timeout closes with no award.
  high    wait for the full expected complement or the deadline, whichever
          comes first.

Winner selection is argmax over offer value (higher is better) with two
tie-break orders: earliest arrival (default) or lowest agent id.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

LOW = "low"
MEDIUM = "medium"
HIGH = "high"

COLLECT_ONLY = "collect-only"
AWARD = "award"

EARLIEST_ARRIVAL = "earliest-arrival"
LOWEST_AGENT_ID = "lowest-agent-id"


class NoOffers(Exception):
    """select_winner() called with an empty offer list."""


@dataclass(frozen=True)
class PolicyConfig:
    kind: str = LOW
    round_timeout: float = 2.0  # seconds past the CFP send
    award_mode: str = COLLECT_ONLY
    tie_break: str = EARLIEST_ARRIVAL

    def __post_init__(self) -> None:
        if self.kind not in (LOW, MEDIUM, HIGH):
            raise ValueError(f"unknown policy kind: {self.kind!r}")
        if self.award_mode not in (COLLECT_ONLY, AWARD):
            raise ValueError(f"unknown award mode: {self.award_mode!r}")
        if self.tie_break not in (EARLIEST_ARRIVAL, LOWEST_AGENT_ID):
            raise ValueError(f"unknown tie break: {self.tie_break!r}")
        if self.round_timeout <= 0:
            raise ValueError("round_timeout must be positive")


@dataclass(frozen=True)
class OfferRecord:
    """One recorded bid: payload value plus arrival bookkeeping."""

    agent_id: str
    value: float
    received_at: float
    msg_id: str


@dataclass
class RoundState:
    """Mutable per-round ledger owned by the initiator."""

    round_id: str
    cfp_msg_id: str
    cfp_sent_at: float
    deadline: float  # absolute epoch seconds
    expected_contractors: int
    offers: list[OfferRecord] = field(default_factory=list)
    terminal: "Decision | None" = None

    @property
    def is_terminal(self) -> bool:
        return self.terminal is not None


# ---------------------------------------------------------------------------
# decisions

@dataclass(frozen=True)
class Continue:
    kind = "continue"


@dataclass(frozen=True)
class CloseNoAward:
    kind = "close-no-award"


@dataclass(frozen=True)
class ConfirmFirst:
    kind = "confirm-first"
    offer: OfferRecord = None  # type: ignore[assignment]


@dataclass(frozen=True)
class Award:
    kind = "award"
    winner: OfferRecord = None  # type: ignore[assignment]
    losers: tuple[OfferRecord, ...] = ()


Decision = Union[Continue, CloseNoAward, ConfirmFirst, Award]

_CONTINUE = Continue()


def decide(cfg: PolicyConfig, state: RoundState, now: float) -> Decision:
    """Pure policy evaluation; no side effects, deterministic."""
    n = len(state.offers)
    if cfg.kind == LOW:
        horizon = min(state.deadline, state.cfp_sent_at + cfg.round_timeout)
        if now < horizon:
            return _CONTINUE
        return _close(cfg, state)
    if cfg.kind == MEDIUM:
        horizon = min(state.deadline, state.cfp_sent_at + cfg.round_timeout)
        if 0 < state.expected_contractors <= n:
            return CloseNoAward()  # already complete; nothing to cut short
        if n >= 1:
            return ConfirmFirst(offer=state.offers[0])
        if now >= horizon:
            return CloseNoAward()
        return _CONTINUE
    if cfg.kind == HIGH:
        if n >= state.expected_contractors or now >= state.deadline:
            return _close(cfg, state)
        return _CONTINUE
    raise ValueError(f"unknown policy kind: {cfg.kind!r}")


def _close(cfg: PolicyConfig, state: RoundState) -> Decision:
    if cfg.award_mode == AWARD and state.offers:
        winner = select_winner(state.offers, cfg.tie_break)
        losers = tuple(o for o in state.offers if o is not winner)
        return Award(winner=winner, losers=losers)
    return CloseNoAward()


def select_winner(offers: Sequence[OfferRecord] | Iterable[OfferRecord],
                  tie_break: str = EARLIEST_ARRIVAL) -> OfferRecord:
    """Argmax by value; ties fall to the configured order."""
    pool = list(offers)
    if not pool:
        raise NoOffers("cannot select a winner from zero offers")
    best = max(o.value for o in pool)
    ties = [o for o in pool if o.value == best]
    if tie_break == EARLIEST_ARRIVAL:
        return min(ties, key=lambda o: o.received_at)  # min is stable: first arrival wins
    if tie_break == LOWEST_AGENT_ID:
        return min(ties, key=lambda o: o.agent_id)
    raise ValueError(f"unknown tie break: {tie_break!r}")
