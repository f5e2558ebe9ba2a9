"""Admission control at the edge of the exchange.

Every inbound envelope passes the same ordered checks, and the first
failure becomes the rejection reason:

    1. token signature verifies            -> "auth-failed"
       and the token has not expired       -> "token-expired"
    2. token.agent_id matches the sender   -> "agent-mismatch"
    3. scope.consent is opt-in             -> "consent-required"
    4. the envelope validates              -> "malformed"
    5. msg_id has not been seen            -> "duplicate"
    6. the sender has a rate token left    -> "rate-limited"

Rejected envelopes never reach the transport.  Every admit() call appends
exactly one audit record (and one trace event), admitted or not.

Auth tokens are an HMAC-SHA256 keyed hash over the canonical-JSON claims,
deliberately not a full JWT: the experiments need a verifiable bearer
credential, not an interoperable one.  Deduplication is a bounded,
insertion-ordered store, so memory stays flat over long runs at the cost
of forgetting very old ids once capacity is reached.
"""

from __future__ import annotations

import hashlib
import hmac
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from parley.clock import Clock
from parley.envelope import (
    CONSENT_OPT_IN,
    Envelope,
    UnknownSchema,
    canonical_json,
    iso_from_epoch,
    validate,
)
from parley.trace import TraceSink
from parley.transport import AT_LEAST_ONCE, DeliveryReceipt, InProcessBus, RetryPolicy

REASON_AUTH = "auth-failed"
REASON_TOKEN_EXPIRED = "token-expired"
REASON_AGENT_MISMATCH = "agent-mismatch"
REASON_CONSENT = "consent-required"
REASON_MALFORMED = "malformed"
REASON_DUPLICATE = "duplicate"
REASON_RATE = "rate-limited"


# ---------------------------------------------------------------------------
# auth tokens

@dataclass(frozen=True)
class AuthToken:
    agent_id: str
    issued_at: float
    expires_at: float
    signature: str


def _claims_digest(agent_id: str, issued_at: float, expires_at: float, secret: bytes) -> str:
    claims = canonical_json({"agent_id": agent_id, "issued_at": issued_at,
                             "expires_at": expires_at})
    return hmac.new(secret, claims, hashlib.sha256).hexdigest()


def _as_bytes(secret: bytes | str) -> bytes:
    return secret.encode("utf-8") if isinstance(secret, str) else secret


def issue_token(agent_id: str, secret: bytes | str, validity_s: float, clock: Clock) -> AuthToken:
    now = clock.now()
    return AuthToken(agent_id, now, now + validity_s,
                     _claims_digest(agent_id, now, now + validity_s, _as_bytes(secret)))


def verify_token(token: AuthToken, secret: bytes | str, clock: Clock) -> str | None:
    """None when the token is good, otherwise the rejection reason."""
    expected = _claims_digest(token.agent_id, token.issued_at, token.expires_at,
                              _as_bytes(secret))
    if not hmac.compare_digest(expected, token.signature or ""):
        return REASON_AUTH
    if clock.now() > token.expires_at:
        return REASON_TOKEN_EXPIRED
    return None


# ---------------------------------------------------------------------------
# supporting stores

class DedupStore:
    """Bounded set of seen msg_ids with insertion-order eviction."""

    def __init__(self, capacity: int = 100_000) -> None:
        if capacity < 1:
            raise ValueError("dedup capacity must be positive")
        self.capacity = capacity
        self._seen: "OrderedDict[str, None]" = OrderedDict()
        self.duplicates = 0  # observed repeats, for diagnostics

    def __contains__(self, msg_id: str) -> bool:
        return msg_id in self._seen

    def __len__(self) -> int:
        return len(self._seen)

    def add(self, msg_id: str) -> None:
        if msg_id in self._seen:
            return
        self._seen[msg_id] = None
        while len(self._seen) > self.capacity:
            self._seen.popitem(last=False)

    def check_and_add(self, msg_id: str) -> bool:
        """True when msg_id is new (and is now recorded)."""
        if msg_id in self._seen:
            self.duplicates += 1
            return False
        self.add(msg_id)
        return True


class RateLimiter:
    """Per-agent token bucket: `capacity` burst, `refill_rate` tokens/s."""

    def __init__(self, capacity: float = 50, refill_rate: float = 50.0) -> None:
        if capacity <= 0 or refill_rate < 0:
            raise ValueError("capacity must be positive and refill_rate non-negative")
        self.capacity = capacity
        self.refill_rate = refill_rate
        self._buckets: dict[str, tuple[float, float]] = {}  # agent -> (tokens, stamp)

    def try_acquire(self, agent_id: str, now: float) -> bool:
        tokens, stamp = self._buckets.get(agent_id, (float(self.capacity), now))
        tokens = min(float(self.capacity), tokens + (now - stamp) * self.refill_rate)
        if tokens >= 1.0:
            self._buckets[agent_id] = (tokens - 1.0, now)
            return True
        self._buckets[agent_id] = (tokens, now)
        return False


class Registry:
    """Control-plane roster of agents eligible to bid."""

    def __init__(self) -> None:
        self._names: list[str] = []

    def register(self, agent_id: str) -> None:
        if agent_id not in self._names:
            self._names.append(agent_id)

    def names(self) -> tuple[str, ...]:
        return tuple(self._names)

    def count(self) -> int:
        return len(self._names)


# ---------------------------------------------------------------------------
# the gateway

@dataclass(frozen=True)
class AdmissionResult:
    admitted: bool
    reason: str | None = None


@dataclass(frozen=True)
class AuditRecord:
    ts: float
    agent_id: str | None
    msg_id: str | None
    decision: str  # "admitted" | "rejected"
    reason: str | None

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"ts": iso_from_epoch(self.ts), "agent_id": self.agent_id,
                             "msg_id": self.msg_id, "decision": self.decision}
        if self.reason is not None:
            d["reason"] = self.reason
        return d


class Gateway:
    """Stateful admission controller in front of one transport."""

    def __init__(self, secret: bytes | str, clock: Clock, *,
                 trace: TraceSink | None = None,
                 audit_path: str | Path | None = None,
                 dedup_capacity: int = 100_000,
                 rate_capacity: float = 50,
                 rate_refill: float = 50.0) -> None:
        self.secret = _as_bytes(secret)
        self.clock = clock
        self.trace = trace
        self.dedup = DedupStore(dedup_capacity)
        self.limiter = RateLimiter(rate_capacity, rate_refill)
        self.audit_records: list[AuditRecord] = []
        self._audit_fh = open(audit_path, "w", encoding="utf-8") if audit_path else None

    def issue(self, agent_id: str, validity_s: float = 3600.0) -> AuthToken:
        return issue_token(agent_id, self.secret, validity_s, self.clock)

    def admit(self, env: Envelope, token: AuthToken) -> AdmissionResult:
        """Run the ordered admission checks; always audits, never raises."""
        reason = self._first_failure(env, token)
        if reason is None:
            self.dedup.add(env.msg_id)
            self._record(env, token, "admitted", None)
            return AdmissionResult(True)
        self._record(env, token, "rejected", reason)
        return AdmissionResult(False, reason)

    def _first_failure(self, env: Envelope, token: AuthToken) -> str | None:
        reason = verify_token(token, self.secret, self.clock)
        if reason is not None:
            return reason
        if token.agent_id != env.sender_name():
            return REASON_AGENT_MISMATCH
        if env.scope.consent != CONSENT_OPT_IN:
            return REASON_CONSENT
        try:
            if not validate(env).ok:
                return REASON_MALFORMED
        except UnknownSchema:
            return REASON_MALFORMED
        if env.msg_id in self.dedup:
            self.dedup.duplicates += 1
            return REASON_DUPLICATE
        if not self.limiter.try_acquire(token.agent_id, self.clock.now()):
            return REASON_RATE
        return None

    def _record(self, env: Envelope, token: AuthToken, decision: str, reason: str | None) -> None:
        record = AuditRecord(self.clock.now(), token.agent_id, env.msg_id, decision, reason)
        self.audit_records.append(record)
        if self._audit_fh is not None:
            self._audit_fh.write(canonical_json(record.to_dict()).decode("utf-8") + "\n")
        if self.trace is not None:
            if decision == "admitted":
                self.trace.emit("admitted", record.ts, agent_id=token.agent_id,
                                msg_id=env.msg_id)
            else:
                self.trace.emit("rejected-admission", record.ts, agent_id=token.agent_id,
                                msg_id=env.msg_id, detail={"reason": reason})

    def close(self) -> None:
        if self._audit_fh is not None:
            self._audit_fh.close()
            self._audit_fh = None


class Exchange:
    """Gateway plus transport: the only path agents publish through."""

    def __init__(self, gateway: Gateway, bus: InProcessBus) -> None:
        self.gateway = gateway
        self.bus = bus

    @property
    def clock(self) -> Clock:
        return self.bus.clock

    def submit(self, env: Envelope, token: AuthToken,
               reliability: str = AT_LEAST_ONCE,
               retry: RetryPolicy | None = None) -> tuple[AdmissionResult, DeliveryReceipt | None]:
        """Admit then publish; a rejection never touches the transport."""
        result = self.gateway.admit(env, token)
        if not result.admitted:
            return result, None
        return result, self.bus.publish(env, reliability, retry)

    def ack(self, ref_msg_id: str, acker: str) -> None:
        # acks are transport reliability signals, not admission traffic
        self.bus.ack(ref_msg_id, acker)
