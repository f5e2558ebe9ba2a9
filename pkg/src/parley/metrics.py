"""Offline aggregation over trace streams.

Everything here is a pure function of the event sequence: counts by kind,
per-minute volume buckets, latency percentiles (nearest rank), per-agent
and per-round means, round completeness, and a least-squares drift slope
over windowed latency means.  Re-running aggregation over the same trace
file yields byte-identical report files.

Rounds are reconstructed from "round-terminal" events, whose detail map
carries the final offer count, the expected complement, and the decision.
A round with zero offers is empty; effective rounds (at least one offer)
form the completeness denominator, and a round is complete when its
recorded offers equal the expected complement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .envelope import canonical_json, epoch_from_iso, iso_from_epoch
from .trace import TraceEvent

DRIFT_WINDOW_S = 600.0  # ten minutes

KNOWN_KINDS = (
    "cfp-sent", "offer-sent", "offer-received", "confirm", "accept", "reject",
    "ack", "retry", "late-offer", "admitted", "rejected-admission",
    "round-terminal", "alt-turn", "producer-fallback",
)


class EmptySamples(Exception):
    """Percentile of nothing."""


class InsufficientData(Exception):
    """Drift needs at least two populated windows."""


def percentile(samples: Sequence[float], q: float) -> float:
    """Nearest-rank percentile: sort ascending, take element ceil(q/100*n)-1."""
    if not samples:
        raise EmptySamples("percentile requires at least one sample")
    if not 0 < q <= 100:
        raise ValueError(f"q must be in (0, 100], got {q}")
    ordered = sorted(samples)
    rank = math.ceil(q / 100.0 * len(ordered))
    return ordered[rank - 1]


@dataclass(frozen=True)
class MinuteBucket:
    minute_index: int
    cfps: int
    offers: int
    confirms: int


@dataclass(frozen=True)
class LatencySummary:
    n: int
    mean_ms: float
    p50_ms: float
    p95_ms: float
    per_agent: Mapping[str, float]
    per_round: Mapping[str, float]


@dataclass(frozen=True)
class RoundRecord:
    round_id: str
    ts: float
    offers: int
    expected: int
    complete: bool
    mean_ms: float | None
    decision: str | None


@dataclass(frozen=True)
class DriftResult:
    slope_ms_per_hour: float
    window_means: tuple[float, ...]


@dataclass
class Aggregate:
    counts: dict[str, int] = field(default_factory=dict)
    buckets: tuple[MinuteBucket, ...] = ()
    latency: LatencySummary | None = None
    rounds: tuple[RoundRecord, ...] = ()
    rounds_total: int = 0
    rounds_effective: int = 0
    rounds_empty: int = 0
    rounds_complete: int = 0
    completeness_ratio: float | None = None
    drift_ms_per_hour: float | None = None
    latency_series: tuple[tuple[float, float], ...] = ()
    offers_by_agent: dict[str, int] = field(default_factory=dict)


def _norm(event: TraceEvent | Mapping[str, Any]) -> tuple[float, str, str | None, str | None, float | None, Mapping]:
    if isinstance(event, TraceEvent):
        return (event.ts, event.kind, event.round_id, event.agent_id,
                event.latency_ms, event.detail or {})
    ts = event.get("ts")
    if isinstance(ts, str):
        ts = epoch_from_iso(ts)
    return (float(ts), event["kind"], event.get("round_id"), event.get("agent_id"),
            event.get("latency_ms"), event.get("detail") or {})


def aggregate(events: Iterable[TraceEvent | Mapping[str, Any]],
              drift_window: float = DRIFT_WINDOW_S) -> Aggregate:
    counts: dict[str, int] = {k: 0 for k in KNOWN_KINDS}
    counts["other"] = 0
    minute_counts: dict[int, list[int]] = {}
    first_minute: int | None = None
    series: list[tuple[float, float]] = []
    agent_sums: dict[str, list[float]] = {}
    round_sums: dict[str, list[float]] = {}
    rounds: list[RoundRecord] = []

    for raw in events:
        ts, kind, round_id, agent_id, latency_ms, detail = _norm(raw)
        counts[kind if kind in counts else "other"] += 1
        abs_minute = int(ts // 60.0)
        if first_minute is None:
            first_minute = abs_minute
        if kind in ("cfp-sent", "offer-received", "confirm"):
            slot = minute_counts.setdefault(abs_minute, [0, 0, 0])
            slot[("cfp-sent", "offer-received", "confirm").index(kind)] += 1
        if kind == "offer-received" and latency_ms is not None:
            series.append((ts, float(latency_ms)))
            if agent_id is not None:
                agent_sums.setdefault(agent_id, []).append(float(latency_ms))
            if round_id is not None:
                round_sums.setdefault(round_id, []).append(float(latency_ms))
        if kind == "round-terminal":
            offers = int(detail.get("offers", 0))
            expected = int(detail.get("expected", 0))
            lat = round_sums.get(round_id or "", [])
            rounds.append(RoundRecord(
                round_id=round_id or "",
                ts=ts,
                offers=offers,
                expected=expected,
                complete=offers == expected and offers > 0,
                mean_ms=(sum(lat) / len(lat)) if lat else None,
                decision=detail.get("decision"),
            ))

    agg = Aggregate(counts=counts)
    agg.latency_series = tuple(series)

    if first_minute is not None and minute_counts:
        last = max(minute_counts)
        agg.buckets = tuple(
            MinuteBucket(i - first_minute, *minute_counts.get(i, [0, 0, 0]))
            for i in range(first_minute, last + 1)
        )

    if series:
        lats = [l for _, l in series]
        agg.latency = LatencySummary(
            n=len(lats),
            mean_ms=sum(lats) / len(lats),
            p50_ms=percentile(lats, 50),
            p95_ms=percentile(lats, 95),
            per_agent={a: sum(v) / len(v) for a, v in sorted(agent_sums.items())},
            per_round={r: sum(v) / len(v) for r, v in round_sums.items()},
        )

    agg.offers_by_agent = {a: len(v) for a, v in sorted(agent_sums.items())}
    agg.rounds = tuple(rounds)
    agg.rounds_total = len(rounds)
    agg.rounds_empty = sum(1 for r in rounds if r.offers == 0)
    agg.rounds_effective = agg.rounds_total - agg.rounds_empty
    agg.rounds_complete = sum(1 for r in rounds if r.complete)
    if agg.rounds_effective:
        agg.completeness_ratio = agg.rounds_complete / agg.rounds_effective

    try:
        agg.drift_ms_per_hour = drift(series, drift_window).slope_ms_per_hour
    except InsufficientData:
        agg.drift_ms_per_hour = None
    return agg


def drift(series: Sequence[tuple[float, float]], window: float = DRIFT_WINDOW_S) -> DriftResult:
    """Least-squares slope of windowed latency means, in ms per hour.

    Windows are fixed-width spans starting at the first sample's timestamp;
    each populated window contributes (midpoint_ts, mean latency).
    """
    if window <= 0:
        raise ValueError("window must be positive")
    if not series:
        raise InsufficientData("no samples")
    t0 = series[0][0]
    sums: dict[int, list[float]] = {}
    for ts, lat in series:
        sums.setdefault(int((ts - t0) // window), []).append(lat)
    if len(sums) < 2:
        raise InsufficientData("series spans fewer than two windows")
    points = [
        (t0 + (idx + 0.5) * window, sum(v) / len(v))
        for idx, v in sorted(sums.items())
    ]
    n = len(points)
    mean_x = sum(x for x, _ in points) / n
    mean_y = sum(y for _, y in points) / n
    sxx = sum((x - mean_x) ** 2 for x, _ in points)
    sxy = sum((x - mean_x) * (y - mean_y) for x, y in points)
    slope_per_s = sxy / sxx
    return DriftResult(slope_ms_per_hour=slope_per_s * 3600.0,
                       window_means=tuple(y for _, y in points))


# ---------------------------------------------------------------------------
# report files

def _fmt(x: float | None) -> str:
    return "" if x is None else f"{x:.3f}"


def write_reports(agg: Aggregate, outdir: str | Path) -> list[Path]:
    """Write per_minute.csv, latency_summary.csv, per_agent.csv,
    per_round.csv and summary.json under outdir.  Deterministic bytes."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    p = out / "per_minute.csv"
    lines = ["minute,cfps,offers,confirms"]
    lines += [f"{b.minute_index},{b.cfps},{b.offers},{b.confirms}" for b in agg.buckets]
    p.write_text("\n".join(lines) + "\n", encoding="utf-8")
    written.append(p)

    p = out / "latency_summary.csv"
    lines = ["n,mean_ms,p50_ms,p95_ms"]
    if agg.latency is not None:
        s = agg.latency
        lines.append(f"{s.n},{_fmt(s.mean_ms)},{_fmt(s.p50_ms)},{_fmt(s.p95_ms)}")
    p.write_text("\n".join(lines) + "\n", encoding="utf-8")
    written.append(p)

    p = out / "per_agent.csv"
    lines = ["agent,offers,mean_ms"]
    if agg.latency is not None:
        for agent, mean in agg.latency.per_agent.items():
            lines.append(f"{agent},{agg.offers_by_agent.get(agent, 0)},{_fmt(mean)}")
    p.write_text("\n".join(lines) + "\n", encoding="utf-8")
    written.append(p)

    p = out / "per_round.csv"
    lines = ["round_id,ts,offers,expected,complete,mean_ms"]
    for r in agg.rounds:
        flag = "true" if r.complete else "false"
        lines.append(f"{r.round_id},{iso_from_epoch(r.ts)},{r.offers},{r.expected},{flag},{_fmt(r.mean_ms)}")
    p.write_text("\n".join(lines) + "\n", encoding="utf-8")
    written.append(p)

    p = out / "summary.json"
    payload = {
        "counts": {k: v for k, v in agg.counts.items() if v},
        "rounds": {
            "total": agg.rounds_total,
            "effective": agg.rounds_effective,
            "empty": agg.rounds_empty,
            "complete": agg.rounds_complete,
            "completeness": agg.completeness_ratio,
        },
        "latency_ms": None if agg.latency is None else {
            "n": agg.latency.n,
            "mean": round(agg.latency.mean_ms, 3),
            "p50": round(agg.latency.p50_ms, 3),
            "p95": round(agg.latency.p95_ms, 3),
        },
        "drift_ms_per_hour": agg.drift_ms_per_hour,
    }
    body = canonical_json(payload)
    if isinstance(body, bytes):
        body = body.decode("utf-8")
    p.write_text(body + "\n", encoding="utf-8")
    written.append(p)

    return written
