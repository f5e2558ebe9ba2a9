"""Structured trace events and the JSONL sink that records them.

Every observable step of a run (sends, receipts, retries, admissions, round
terminals, ...) is one TraceEvent.  The sink keeps events in memory and
optionally streams them to a JSONL file as canonical JSON, one event per
line, so identical runs write identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator

from parley.envelope import canonical_json, iso_from_epoch

# kinds the aggregator knows by name; anything else lands in its "other" bucket
TRACE_KINDS = frozenset({
    "cfp-sent", "offer-sent", "offer-received", "confirm", "accept", "reject",
    "ack", "retry", "late-offer", "admitted", "rejected-admission",
    "round-terminal", "alt-turn", "producer-fallback",
})


@dataclass(frozen=True)
class TraceEvent:
    ts: float  # epoch seconds
    kind: str
    round_id: str | None = None
    agent_id: str | None = None
    latency_ms: float | None = None
    msg_id: str | None = None
    detail: dict[str, Any] | None = None

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"ts": iso_from_epoch(self.ts), "kind": self.kind}
        if self.round_id is not None:
            d["round_id"] = self.round_id
        if self.agent_id is not None:
            d["agent_id"] = self.agent_id
        if self.latency_ms is not None:
            d["latency_ms"] = self.latency_ms
        if self.msg_id is not None:
            d["msg_id"] = self.msg_id
        if self.detail:
            d["detail"] = self.detail
        return d


class TraceSink:
    """Collects trace events in causal order; optionally streams JSONL.

    Emissions must carry non-decreasing timestamps (a sink belongs to one
    run on one clock); a regression raises ValueError rather than writing
    an out-of-order trace.
    """

    def __init__(self, path: str | Path | None = None) -> None:
        self.events: list[TraceEvent] = []
        self._last_ts: float | None = None
        self._fh = open(path, "w", encoding="utf-8") if path is not None else None

    def emit(self, kind: str, ts: float, **fields: Any) -> TraceEvent:
        if self._last_ts is not None and ts < self._last_ts:
            raise ValueError(f"trace time went backwards: {ts} < {self._last_ts}")
        self._last_ts = ts
        event = TraceEvent(ts=ts, kind=kind, **fields)
        self.events.append(event)
        if self._fh is not None:
            self._fh.write(canonical_json(event.to_dict()).decode("utf-8") + "\n")
        return event

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self) -> "TraceSink":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()


def read_trace(path: str | Path) -> Iterator[dict[str, Any]]:
    """Yield trace events from a JSONL file as plain dicts."""
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)
