"""Typed message envelopes and their canonical wire form.

Every message is an Envelope: routing metadata plus exactly one typed
payload.  The wire form is canonical JSON (UTF-8, sorted keys, compact
separators) with millisecond ISO-8601 timestamps, so equal envelopes always
serialize to equal bytes.  The attribute `sender` is spelled `from` on the
wire.

Payloads are tagged by their `$schema` string, which is retained purely as
an identifier; validation is driven by the declarative rule tables at the
bottom of this module, not by a JSON-Schema engine.  `from_dict` is
deliberately tolerant (missing fields become None) so that malformed input
can be carried to `validate`, which is strict.
"""

from __future__ import annotations

import json
import math
import random
import re
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Callable, Iterable, Mapping, Union

REDACTED = "[REDACTED]"
DEFAULT_TTL_S = 120

CONSENT_OPT_IN = "opt-in"
CONSENT_OPT_OUT = "opt-out"

_UUID_RE = re.compile(r"^[0-9a-f]{8}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{12}$")
_AGENT_URI_RE = re.compile(r"^agent://[A-Za-z0-9_.-]+$")
_DEST_URI_RE = re.compile(r"^(agent|topic|ack)://[A-Za-z0-9_.-]+$")


class MalformedFrame(Exception):
    """Raised by parse() when bytes do not decode to an envelope shape."""


class UnknownSchema(Exception):
    """Raised when a payload's $schema identifier is not in the tables."""


class EmptyRecipients(Exception):
    """Raised by make_envelope() when `to` is empty."""


# ---------------------------------------------------------------------------
# time helpers

def iso_from_epoch(t: float) -> str:
    """Format epoch seconds as ISO-8601 UTC with millisecond precision."""
    ms = round(t * 1000)
    dt = datetime.fromtimestamp(ms // 1000, tz=timezone.utc)
    return f"{dt:%Y-%m-%dT%H:%M:%S}.{ms % 1000:03d}Z"


def epoch_from_iso(ts: str) -> float:
    """Parse an ISO-8601 timestamp to epoch seconds (raises ValueError)."""
    dt = datetime.fromisoformat(ts.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def random_msg_id(rng: random.Random | None = None) -> str:
    """Fresh UUID4-format id; seedable so harness runs replay exactly."""
    if rng is None:
        return str(uuid.uuid4())
    return str(uuid.UUID(int=rng.getrandbits(128), version=4))


# ---------------------------------------------------------------------------
# payloads

def _clean_map(value: Mapping[str, Any] | None) -> dict[str, Any]:
    return dict(value) if value else {}


@dataclass(frozen=True)
class Cfp:
    """Call for proposals opening one negotiation round."""

    SCHEMA = "Negotiation.json#Cfp"
    kind = "cfp"

    round_id: str
    deadline: str  # ISO-8601; offers after this are late
    constraints: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"$schema": self.SCHEMA}
        if self.round_id is not None:
            d["round_id"] = self.round_id
        if self.deadline is not None:
            d["deadline"] = self.deadline
        if self.constraints:
            d["constraints"] = dict(self.constraints)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Cfp":
        return cls(d.get("round_id"), d.get("deadline"), _clean_map(d.get("constraints")))


@dataclass(frozen=True)
class Offer:
    """A contractor's bid in a round; higher value is better."""

    SCHEMA = "Negotiation.json#Offer"
    kind = "offer"

    round_id: str
    value: float
    timestamp: str  # ISO-8601 send time
    conditions: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"$schema": self.SCHEMA}
        if self.round_id is not None:
            d["round_id"] = self.round_id
        if self.value is not None:
            d["value"] = self.value
        if self.timestamp is not None:
            d["timestamp"] = self.timestamp
        if self.conditions:
            d["conditions"] = dict(self.conditions)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Offer":
        return cls(d.get("round_id"), d.get("value"), d.get("timestamp"),
                   _clean_map(d.get("conditions")))


@dataclass(frozen=True)
class _RoundRef:
    """Shared shape for the three round verdict payloads."""

    ref_msg_id: str
    round_id: str

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"$schema": self.SCHEMA}
        if self.ref_msg_id is not None:
            d["ref_msg_id"] = self.ref_msg_id
        if self.round_id is not None:
            d["round_id"] = self.round_id
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]):
        return cls(d.get("ref_msg_id"), d.get("round_id"))


@dataclass(frozen=True)
class Accept(_RoundRef):
    """Initiator accepts the referenced offer."""

    SCHEMA = "Negotiation.json#Accept"
    kind = "accept"


@dataclass(frozen=True)
class Reject(_RoundRef):
    """Initiator declines the referenced offer."""

    SCHEMA = "Negotiation.json#Reject"
    kind = "reject"


@dataclass(frozen=True)
class Confirm(_RoundRef):
    """Initiator's early-termination acknowledgment of a first offer."""

    SCHEMA = "Negotiation.json#Confirm"
    kind = "confirm"


@dataclass(frozen=True)
class Ack:
    """Transport-level receipt acknowledgment."""

    SCHEMA = "Negotiation.json#Ack"
    kind = "ack"

    ref_msg_id: str

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"$schema": self.SCHEMA}
        if self.ref_msg_id is not None:
            d["ref_msg_id"] = self.ref_msg_id
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Ack":
        return cls(d.get("ref_msg_id"))


@dataclass(frozen=True)
class AlternatingOffer:
    """One turn of a bilateral alternating-offers session."""

    SCHEMA = "AlternatingOffer.json"
    kind = "alt-offer"

    session_id: str
    turn: int
    terms: dict[str, Any]  # flat map; must include numeric "price"
    valid_until: str  # ISO-8601
    acceptance_conditions: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"$schema": self.SCHEMA}
        if self.session_id is not None:
            d["session_id"] = self.session_id
        if self.turn is not None:
            d["turn"] = self.turn
        if self.terms is not None:
            d["terms"] = dict(self.terms)
        if self.valid_until is not None:
            d["valid_until"] = self.valid_until
        if self.acceptance_conditions:
            d["acceptance_conditions"] = dict(self.acceptance_conditions)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "AlternatingOffer":
        terms = d.get("terms")
        return cls(d.get("session_id"), d.get("turn"),
                   dict(terms) if isinstance(terms, Mapping) else terms,
                   d.get("valid_until"), _clean_map(d.get("acceptance_conditions")))


Payload = Union[Cfp, Offer, Accept, Reject, Confirm, Ack, AlternatingOffer]

PAYLOAD_TYPES: dict[str, Any] = {
    cls.SCHEMA: cls for cls in (Cfp, Offer, Accept, Reject, Confirm, Ack, AlternatingOffer)
}


# ---------------------------------------------------------------------------
# envelope

@dataclass(frozen=True)
class ConsentScope:
    consent: str = CONSENT_OPT_IN
    ttl: int = DEFAULT_TTL_S  # seconds the message stays deliverable

    def to_dict(self) -> dict[str, Any]:
        return {"consent": self.consent, "ttl": self.ttl}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ConsentScope":
        return cls(d.get("consent"), d.get("ttl"))


@dataclass(frozen=True)
class Envelope:
    """Routing metadata plus one typed payload.  `sender` is `from` on wire."""

    msg_id: str
    ts: str  # ISO-8601 creation time
    sender: str  # agent://<name>
    to: tuple[str, ...]
    capabilities: tuple[str, ...]
    scope: ConsentScope
    payload: Payload

    def ts_epoch(self) -> float:
        return epoch_from_iso(self.ts)

    def sender_name(self) -> str:
        return self.sender.split("://", 1)[1] if "://" in self.sender else self.sender

    def to_wire(self) -> dict[str, Any]:
        return {
            "msg_id": self.msg_id,
            "ts": self.ts,
            "from": self.sender,
            "to": list(self.to),
            "capabilities": list(self.capabilities),
            "scope": self.scope.to_dict(),
            "payload": self.payload.to_dict(),
        }


def make_envelope(
    sender: str,
    to: Iterable[str],
    payload: Payload,
    *,
    scope: ConsentScope | None = None,
    capabilities: Iterable[str] = (),
    clock=None,
    rng: random.Random | None = None,
) -> Envelope:
    """Build an envelope with a fresh msg_id and the current timestamp.

    `clock` supplies time (defaults to the system clock); `rng` makes the
    msg_id reproducible.  Raises EmptyRecipients when `to` is empty.
    """
    to_tuple = tuple(to)
    if not to_tuple:
        raise EmptyRecipients("envelope needs at least one recipient")
    now = clock.now() if clock is not None else datetime.now(timezone.utc).timestamp()
    return Envelope(
        msg_id=random_msg_id(rng),
        ts=iso_from_epoch(now),
        sender=sender if "://" in sender else f"agent://{sender}",
        to=to_tuple,
        capabilities=tuple(capabilities),
        scope=scope or ConsentScope(),
        payload=payload,
    )


# ---------------------------------------------------------------------------
# wire encoding

def canonical_json(obj: Any) -> bytes:
    """UTF-8 JSON with sorted keys and compact separators; rejects NaN."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=False, allow_nan=False).encode("utf-8")


def serialize(env: Envelope) -> bytes:
    return canonical_json(env.to_wire())


def parse(data: bytes | str) -> Envelope:
    """Decode wire bytes to an Envelope.

    Shape errors raise MalformedFrame; an unrecognized payload $schema
    raises UnknownSchema.  Field-level problems are left for validate().
    """
    try:
        raw = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedFrame(f"not valid JSON: {exc}") from None
    if not isinstance(raw, Mapping):
        raise MalformedFrame("envelope must be a JSON object")
    payload_raw = raw.get("payload")
    if not isinstance(payload_raw, Mapping):
        raise MalformedFrame("payload must be a JSON object")
    schema = payload_raw.get("$schema")
    cls = PAYLOAD_TYPES.get(schema)
    if cls is None:
        raise UnknownSchema(f"unknown payload schema: {schema!r}")
    to = raw.get("to")
    caps = raw.get("capabilities")
    scope_raw = raw.get("scope")
    return Envelope(
        msg_id=raw.get("msg_id"),
        ts=raw.get("ts"),
        sender=raw.get("from"),
        to=tuple(to) if isinstance(to, list) else (),
        capabilities=tuple(caps) if isinstance(caps, list) else (),
        scope=ConsentScope.from_dict(scope_raw) if isinstance(scope_raw, Mapping) else ConsentScope(None, None),
        payload=cls.from_dict(payload_raw),
    )


# ---------------------------------------------------------------------------
# validation

@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    violations: tuple[str, ...] = ()


def _is_finite_number(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _is_nonneg_int(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool) and v >= 0


def _is_timestamp(v: Any) -> bool:
    if not isinstance(v, str):
        return False
    try:
        epoch_from_iso(v)
    except ValueError:
        return False
    return True


def _is_str(v: Any) -> bool:
    return isinstance(v, str) and bool(v)


def _is_map(v: Any) -> bool:
    return isinstance(v, Mapping) and all(isinstance(k, str) for k in v)


@dataclass(frozen=True)
class FieldRule:
    name: str
    required: bool
    check: Callable[[Any], bool]
    message: str  # violation text when the check fails


def _rules(*rules: FieldRule) -> tuple[FieldRule, ...]:
    return rules

_REF_RULES = _rules(
    FieldRule("ref_msg_id", True, _is_str, "ref_msg_id must be a string"),
    FieldRule("round_id", True, _is_str, "round_id must be a string"),
)

# Declarative validation tables; $schema is the lookup key.
PAYLOAD_RULES: dict[str, tuple[FieldRule, ...]] = {
    Cfp.SCHEMA: _rules(
        FieldRule("round_id", True, _is_str, "round_id must be a string"),
        FieldRule("deadline", True, _is_timestamp, "deadline is not a valid timestamp"),
        FieldRule("constraints", False, _is_map, "constraints must be a map"),
    ),
    Offer.SCHEMA: _rules(
        FieldRule("round_id", True, _is_str, "round_id must be a string"),
        FieldRule("value", True, _is_finite_number, "value is not a finite number"),
        FieldRule("timestamp", True, _is_timestamp, "timestamp is not a valid timestamp"),
        FieldRule("conditions", False, _is_map, "conditions must be a map"),
    ),
    Accept.SCHEMA: _REF_RULES,
    Reject.SCHEMA: _REF_RULES,
    Confirm.SCHEMA: _REF_RULES,
    Ack.SCHEMA: _rules(
        FieldRule("ref_msg_id", True, _is_str, "ref_msg_id must be a string"),
    ),
    AlternatingOffer.SCHEMA: _rules(
        FieldRule("session_id", True, _is_str, "session_id must be a string"),
        FieldRule("turn", True, _is_nonneg_int, "turn must be a non-negative integer"),
        FieldRule("terms", True, _is_map, "terms must be a map"),
        FieldRule("valid_until", True, _is_timestamp, "valid_until is not a valid timestamp"),
        FieldRule("acceptance_conditions", False, _is_map, "acceptance_conditions must be a map"),
    ),
}


def _check_fields(d: Mapping[str, Any], rules: tuple[FieldRule, ...], out: list[str]) -> None:
    for rule in rules:
        if rule.name not in d or d[rule.name] is None:
            if rule.required:
                out.append(f"missing required field: {rule.name}")
            continue
        if not rule.check(d[rule.name]):
            out.append(rule.message)


def validate(env: Envelope | Mapping[str, Any]) -> ValidationResult:
    """Validate an envelope (or its wire dict) against the rule tables.

    Returns every violation found, not just the first.  Raises
    UnknownSchema when the payload kind is not in the tables at all.
    """
    d = env.to_wire() if isinstance(env, Envelope) else dict(env)
    violations: list[str] = []

    if not _is_str(d.get("msg_id")) or not _UUID_RE.match(d["msg_id"]):
        violations.append("msg_id is not a UUID string")
    if not _is_timestamp(d.get("ts")):
        violations.append("ts is not a valid timestamp")
    sender = d.get("from")
    if not _is_str(sender) or not _AGENT_URI_RE.match(sender):
        violations.append("from is not an agent:// URI")
    to = d.get("to")
    if not isinstance(to, (list, tuple)) or len(to) == 0:
        violations.append("to must be a non-empty list")
    else:
        for entry in to:
            if not _is_str(entry) or not _DEST_URI_RE.match(entry):
                violations.append(f"to entry is not a recognized URI: {entry!r}")
    caps = d.get("capabilities")
    if caps is not None and (not isinstance(caps, (list, tuple))
                             or any(not isinstance(c, str) for c in caps)):
        violations.append("capabilities must be a list of strings")

    scope = d.get("scope")
    if not isinstance(scope, Mapping):
        violations.append("missing required field: scope")
    else:
        if scope.get("consent") not in (CONSENT_OPT_IN, CONSENT_OPT_OUT):
            violations.append("enum out of range: scope.consent")
        if not _is_nonneg_int(scope.get("ttl")):
            violations.append("scope.ttl must be a non-negative integer")

    payload = d.get("payload")
    if not isinstance(payload, Mapping):
        violations.append("missing required field: payload")
        return ValidationResult(False, tuple(violations))
    schema = payload.get("$schema")
    rules = PAYLOAD_RULES.get(schema)
    if rules is None:
        raise UnknownSchema(f"unknown payload schema: {schema!r}")
    _check_fields(payload, rules, violations)

    # terms must carry a numeric price (alternating-offers sessions trade on it)
    if schema == AlternatingOffer.SCHEMA and _is_map(payload.get("terms")):
        price = payload["terms"].get("price")
        if price is None:
            violations.append("missing required field: terms.price")
        elif not _is_finite_number(price):
            violations.append("terms.price is not a finite number")

    return ValidationResult(not violations, tuple(violations))


def validate_payload_fields(payload: Mapping[str, Any]) -> ValidationResult:
    """Validate a bare payload wire dict (with $schema) outside any envelope.

    Used at the producer boundary, where payload fields exist before an
    envelope does.  Raises UnknownSchema when $schema is not recognized.
    """
    violations: list[str] = []
    schema = payload.get("$schema")
    rules = PAYLOAD_RULES.get(schema)
    if rules is None:
        raise UnknownSchema(f"unknown payload schema: {schema!r}")
    _check_fields(payload, rules, violations)
    if schema == AlternatingOffer.SCHEMA and _is_map(payload.get("terms")):
        price = payload["terms"].get("price")
        if price is None:
            violations.append("missing required field: terms.price")
        elif not _is_finite_number(price):
            violations.append("terms.price is not a finite number")
    return ValidationResult(not violations, tuple(violations))


# ---------------------------------------------------------------------------
# sanitize

def sanitize(payload: Mapping[str, Any], sensitive_keys: Iterable[str]) -> dict[str, Any]:
    """Recursive copy of `payload` with values under sensitive keys redacted.

    Matching is by exact key at any nesting depth (maps inside maps and
    inside lists).  Idempotent: sanitizing twice changes nothing more.
    """
    keys = frozenset(sensitive_keys)

    def walk(node: Any) -> Any:
        if isinstance(node, Mapping):
            return {k: (REDACTED if k in keys else walk(v)) for k, v in node.items()}
        if isinstance(node, (list, tuple)):
            return [walk(v) for v in node]
        return node

    return walk(dict(payload))
