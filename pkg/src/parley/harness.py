"""Scenario driver: load a config, wire the stack, run it, summarize.

A scenario file is flat TOML.  Every duration in it is written at natural
scale (seconds of negotiation time); ``time_compression`` divides them all
uniformly at wiring time, so a 2 hour run can execute as a 72 second one
under the real clock without changing any count.  Under the virtual clock
compression only rescales timestamps.
"""

from __future__ import annotations

import dataclasses
import json
import random
import time
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .agents import (
    Distribution,
    InvalidDistribution,
    ScriptedBidder,
    constant,
    derive_seed,
    exponential,
    parse_distribution,
    uniform,
)
from .clock import RealClock, VirtualClock
from .cnet import (
    ACK_ALWAYS,
    Contractor,
    ContractorConfig,
    Initiator,
    _parse_ack_behavior,
    _parse_pattern,
)
from .gateway import Exchange, Gateway, Registry
from .metrics import Aggregate, aggregate, write_reports
from .policy import (
    AWARD,
    COLLECT_ONLY,
    EARLIEST_ARRIVAL,
    HIGH,
    LOW,
    LOWEST_AGENT_ID,
    MEDIUM,
    PolicyConfig,
)
from .trace import TraceSink
from .traffic import fixed_schedule, poisson_schedule
from .transport import InProcessBus, ProbabilisticDrop, RetryPolicy, ScheduledDrop

__all__ = [
    "ConfigError",
    "RequiresMultipleSeeds",
    "ScenarioConfig",
    "RunSummary",
    "load_scenario",
    "parse_scenario",
    "bundled_scenarios",
    "bundled_scenario_path",
    "run_scenario",
    "repeat_runs",
]

SCENARIO_DIR = Path(__file__).parent / "scenarios"

_POLICIES = (LOW, MEDIUM, HIGH)
_SCHEDULES = ("fixed", "poisson")
_CLOCKS = ("virtual", "real")
_AWARD_MODES = (COLLECT_ONLY, AWARD)
_TIE_BREAKS = (EARLIEST_ARRIVAL, LOWEST_AGENT_ID)

_KNOWN_KEYS = {
    "name", "contractors", "policy", "round_timeout", "award_mode",
    "tie_break", "schedule", "cfp_count", "cfp_spacing", "rate_per_min",
    "cfp_deadline", "duration", "time_compression", "seed", "clock",
    "value_dist", "delay_dist", "delay_base", "delay_step", "round_pattern",
    "batch_delay", "ack_behavior", "drop_probability", "drop_first_attempts",
    "max_retries", "retry_base_delay",
}


class ConfigError(Exception):
    """Invalid scenario config; message starts with the offending field."""

    def __init__(self, field_path: str, problem: str) -> None:
        self.field_path = field_path
        super().__init__(f"{field_path}: {problem}")


class RequiresMultipleSeeds(Exception):
    """A stability check over a single seed cannot measure deviation."""


def _want(raw: dict, key: str, types, default):
    value = raw.get(key, default)
    if value is default and key not in raw:
        return default
    if isinstance(value, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise ConfigError(key, f"expected {types}, got bool")
    if not isinstance(value, types):
        names = types.__name__ if not isinstance(types, tuple) else "/".join(t.__name__ for t in types)
        raise ConfigError(key, f"expected {names}, got {type(value).__name__}")
    return value


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    contractors: int = 5
    policy: str = LOW
    round_timeout: float = 2.0
    award_mode: str = COLLECT_ONLY
    tie_break: str = EARLIEST_ARRIVAL
    schedule: str = "fixed"
    cfp_count: int = 3
    cfp_spacing: float = 30.0
    rate_per_min: float = 2.24
    cfp_deadline: float = 2.0
    duration: float = 120.0
    time_compression: float = 1.0
    seed: int = 42
    clock: str = "virtual"
    value_dist: str = "uniform:0,10"
    delay_dist: str = "uniform:0.001,0.005"
    delay_base: float | None = None
    delay_step: float = 0.0
    round_pattern: str = "respond"
    batch_delay: float = 0.002
    ack_behavior: str = ACK_ALWAYS
    drop_probability: float = 0.0
    drop_first_attempts: int = 0
    max_retries: int = 3
    retry_base_delay: float = 0.1


def parse_scenario(raw: dict, *, default_name: str = "scenario") -> ScenarioConfig:
    """Validate a raw mapping and freeze it into a ScenarioConfig.

    Raises ConfigError naming the first bad field.  Unknown keys are
    rejected rather than ignored so typos surface immediately.
    """
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a table of key = value pairs")
    unknown = sorted(set(raw) - _KNOWN_KEYS)
    if unknown:
        raise ConfigError(unknown[0], "unknown key")

    name = _want(raw, "name", str, default_name)
    if not name:
        raise ConfigError("name", "must not be empty")

    contractors = _want(raw, "contractors", int, 5)
    if contractors < 1:
        raise ConfigError("contractors", "must be >= 1")

    policy = _want(raw, "policy", str, LOW)
    if policy not in _POLICIES:
        raise ConfigError("policy", f"must be one of {', '.join(_POLICIES)}")
    round_timeout = float(_want(raw, "round_timeout", (int, float), 2.0))
    if round_timeout <= 0:
        raise ConfigError("round_timeout", "must be positive")
    award_mode = _want(raw, "award_mode", str, COLLECT_ONLY)
    if award_mode not in _AWARD_MODES:
        raise ConfigError("award_mode", f"must be one of {', '.join(_AWARD_MODES)}")
    tie_break = _want(raw, "tie_break", str, EARLIEST_ARRIVAL)
    if tie_break not in _TIE_BREAKS:
        raise ConfigError("tie_break", f"must be one of {', '.join(_TIE_BREAKS)}")

    schedule = _want(raw, "schedule", str, "fixed")
    if schedule not in _SCHEDULES:
        raise ConfigError("schedule", f"must be one of {', '.join(_SCHEDULES)}")
    cfp_count = _want(raw, "cfp_count", int, 3)
    if schedule == "fixed" and cfp_count < 1:
        raise ConfigError("cfp_count", "must be >= 1 for a fixed schedule")
    cfp_spacing = float(_want(raw, "cfp_spacing", (int, float), 30.0))
    if cfp_spacing < 0:
        raise ConfigError("cfp_spacing", "must be >= 0")
    rate_per_min = float(_want(raw, "rate_per_min", (int, float), 2.24))
    if rate_per_min < 0:
        raise ConfigError("rate_per_min", "must be >= 0")

    cfp_deadline = float(_want(raw, "cfp_deadline", (int, float), 2.0))
    if cfp_deadline <= 0:
        raise ConfigError("cfp_deadline", "must be positive")
    duration = float(_want(raw, "duration", (int, float), 120.0))
    if duration < 0:
        raise ConfigError("duration", "must be >= 0")
    time_compression = float(_want(raw, "time_compression", (int, float), 1.0))
    if time_compression <= 0:
        raise ConfigError("time_compression", "must be positive")
    seed = _want(raw, "seed", int, 42)

    clock = _want(raw, "clock", str, "virtual")
    if clock not in _CLOCKS:
        raise ConfigError("clock", f"must be one of {', '.join(_CLOCKS)}")

    value_dist = _want(raw, "value_dist", str, "uniform:0,10")
    try:
        parse_distribution(value_dist)
    except InvalidDistribution as exc:
        raise ConfigError("value_dist", str(exc)) from exc
    delay_dist = _want(raw, "delay_dist", str, "uniform:0.001,0.005")
    try:
        parse_distribution(delay_dist)
    except InvalidDistribution as exc:
        raise ConfigError("delay_dist", str(exc)) from exc

    delay_base = raw.get("delay_base")
    if delay_base is not None:
        if isinstance(delay_base, bool) or not isinstance(delay_base, (int, float)):
            raise ConfigError("delay_base", "expected a number of seconds")
        delay_base = float(delay_base)
        if delay_base < 0:
            raise ConfigError("delay_base", "must be >= 0")
    delay_step = float(_want(raw, "delay_step", (int, float), 0.0))
    if delay_step < 0:
        raise ConfigError("delay_step", "must be >= 0")

    round_pattern = _want(raw, "round_pattern", str, "respond")
    try:
        _parse_pattern(round_pattern)
    except ValueError as exc:
        raise ConfigError("round_pattern", str(exc)) from exc
    batch_delay = float(_want(raw, "batch_delay", (int, float), 0.002))
    if batch_delay < 0:
        raise ConfigError("batch_delay", "must be >= 0")
    ack_behavior = _want(raw, "ack_behavior", str, ACK_ALWAYS)
    try:
        _parse_ack_behavior(ack_behavior)
    except ValueError as exc:
        raise ConfigError("ack_behavior", str(exc)) from exc

    drop_probability = float(_want(raw, "drop_probability", (int, float), 0.0))
    if not 0.0 <= drop_probability <= 1.0:
        raise ConfigError("drop_probability", "must be within [0, 1]")
    drop_first_attempts = _want(raw, "drop_first_attempts", int, 0)
    if drop_first_attempts < 0:
        raise ConfigError("drop_first_attempts", "must be >= 0")
    max_retries = _want(raw, "max_retries", int, 3)
    if max_retries < 0:
        raise ConfigError("max_retries", "must be >= 0")
    retry_base_delay = float(_want(raw, "retry_base_delay", (int, float), 0.1))
    if retry_base_delay <= 0:
        raise ConfigError("retry_base_delay", "must be positive")

    return ScenarioConfig(
        name=name, contractors=contractors, policy=policy,
        round_timeout=round_timeout, award_mode=award_mode, tie_break=tie_break,
        schedule=schedule, cfp_count=cfp_count, cfp_spacing=cfp_spacing,
        rate_per_min=rate_per_min, cfp_deadline=cfp_deadline, duration=duration,
        time_compression=time_compression, seed=seed, clock=clock,
        value_dist=value_dist, delay_dist=delay_dist, delay_base=delay_base,
        delay_step=delay_step, round_pattern=round_pattern,
        batch_delay=batch_delay, ack_behavior=ack_behavior,
        drop_probability=drop_probability,
        drop_first_attempts=drop_first_attempts, max_retries=max_retries,
        retry_base_delay=retry_base_delay,
    )


def load_scenario(path: str | Path) -> ScenarioConfig:
    """Read and validate one TOML scenario file."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError("<file>", f"no such file: {path}")
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<file>", f"not valid TOML: {exc}")
    return parse_scenario(raw, default_name=path.stem)


def bundled_scenarios() -> list[str]:
    return sorted(p.stem for p in SCENARIO_DIR.glob("*.toml"))


def bundled_scenario_path(name: str) -> Path:
    path = SCENARIO_DIR / f"{name}.toml"
    if not path.exists():
        raise ConfigError("<file>", f"no bundled scenario named {name!r}"
                          f" (have: {', '.join(bundled_scenarios())})")
    return path


def resolve_scenario(ref: str | Path) -> ScenarioConfig:
    """Accept either a filesystem path or a bundled scenario name.

    A bundled name wins over a same-named directory in the working
    directory; only an actual file shadows the bundled catalog.
    """
    path = Path(ref)
    if path.is_file():
        return load_scenario(path)
    if isinstance(ref, str) and "/" not in ref and not ref.endswith(".toml"):
        return load_scenario(bundled_scenario_path(ref))
    raise ConfigError("<file>", f"no such file: {ref}")


@dataclass(frozen=True)
class RunSummary:
    """What one run produced, in the shape the delimited reports use."""

    name: str
    seed: int
    cfps: int = 0
    offers: int = 0
    confirms: int = 0
    accepts: int = 0
    rejects: int = 0
    late_offers: int = 0
    retries: int = 0
    rounds_total: int = 0
    rounds_effective: int = 0
    rounds_empty: int = 0
    rounds_complete: int = 0
    completeness: float = 0.0
    mean_latency_ms: float = 0.0
    p50_latency_ms: float = 0.0
    p95_latency_ms: float = 0.0
    drift_ms_per_hour: float = 0.0
    wall_time_s: float = 0.0
    out_dir: str | None = None

    def to_dict(self) -> dict:
        return {
            "name": self.name, "seed": self.seed, "cfps": self.cfps,
            "offers": self.offers, "confirms": self.confirms,
            "accepts": self.accepts, "rejects": self.rejects,
            "late_offers": self.late_offers, "retries": self.retries,
            "rounds": {
                "total": self.rounds_total,
                "effective": self.rounds_effective,
                "empty": self.rounds_empty,
                "complete": self.rounds_complete,
            },
            "completeness": self.completeness,
            "latency_ms": {
                "mean": self.mean_latency_ms,
                "p50": self.p50_latency_ms,
                "p95": self.p95_latency_ms,
            },
            "drift_ms_per_hour": self.drift_ms_per_hour,
            "wall_time_s": self.wall_time_s,
            "out_dir": self.out_dir,
        }


def _scale_delay_dist(dist: Distribution, factor: float) -> Distribution:
    if factor == 1.0:
        return dist
    p = dist.params
    if dist.kind == "constant":
        return constant(p[0] * factor)
    if dist.kind == "uniform":
        return uniform(p[0] * factor, p[1] * factor)
    if dist.kind == "exponential":
        return exponential(p[0] * factor)
    raise InvalidDistribution(f"cannot rescale a {dist.kind} delay")


def summarize(agg: Aggregate, *, name: str, seed: int, wall_time_s: float = 0.0,
              out_dir: str | None = None) -> RunSummary:
    lat = agg.latency
    return RunSummary(
        name=name,
        seed=seed,
        cfps=agg.counts.get("cfp-sent", 0),
        offers=agg.counts.get("offer-received", 0),
        confirms=agg.counts.get("confirm", 0),
        accepts=agg.counts.get("accept", 0),
        rejects=agg.counts.get("reject", 0),
        late_offers=agg.counts.get("late-offer", 0),
        retries=agg.counts.get("retry", 0),
        rounds_total=agg.rounds_total,
        rounds_effective=agg.rounds_effective,
        rounds_empty=agg.rounds_empty,
        rounds_complete=agg.rounds_complete,
        completeness=agg.completeness_ratio if agg.completeness_ratio is not None else 0.0,
        mean_latency_ms=lat.mean_ms if lat is not None else 0.0,
        p50_latency_ms=lat.p50_ms if lat is not None else 0.0,
        p95_latency_ms=lat.p95_ms if lat is not None else 0.0,
        drift_ms_per_hour=agg.drift_ms_per_hour if agg.drift_ms_per_hour is not None else 0.0,
        wall_time_s=wall_time_s,
        out_dir=out_dir,
    )


def _emission_times(cfg: ScenarioConfig) -> list[float]:
    """CFP send offsets at natural scale, clipped to the configured window."""
    if cfg.duration == 0.0:
        return []
    if cfg.schedule == "poisson":
        return list(poisson_schedule(cfg.rate_per_min, cfg.duration,
                                     seed=derive_seed(cfg.seed, "traffic")).timestamps)
    times = fixed_schedule(cfg.cfp_count, cfg.cfp_spacing).timestamps
    return [t for t in times if t < cfg.duration]


def run_scenario(cfg: ScenarioConfig, *, out_dir: str | Path | None = None,
                 write_outputs: bool = True) -> RunSummary:
    """Execute one scenario end to end and return its summary.

    With ``write_outputs`` the run directory receives trace.jsonl,
    audit.jsonl, the delimited reports, and summary.json.  The virtual
    clock path is fully deterministic for a given config and seed.
    """
    started = time.perf_counter()
    comp = cfg.time_compression
    virtual = cfg.clock == "virtual"
    clock = VirtualClock() if virtual else RealClock()

    out_path: Path | None = None
    trace = None
    audit_path = None
    if write_outputs:
        out_path = Path(out_dir) if out_dir is not None else Path("runs") / f"{cfg.name}-seed{cfg.seed}"
        out_path.mkdir(parents=True, exist_ok=True)
        audit_path = out_path / "audit.jsonl"
        if audit_path.exists():
            audit_path.unlink()

    sink = TraceSink(out_path / "trace.jsonl" if out_path is not None else None)

    drop_policy = None
    if cfg.drop_probability > 0.0:
        drop_policy = ProbabilisticDrop(cfg.drop_probability,
                                        rng=random.Random(derive_seed(cfg.seed, "drop")))
    elif cfg.drop_first_attempts > 0:
        drop_policy = ScheduledDrop(cfg.drop_first_attempts)

    retry = RetryPolicy(max_retries=cfg.max_retries,
                        base_delay=cfg.retry_base_delay / comp)
    bus = InProcessBus(clock, trace=sink,
                       rng=random.Random(derive_seed(cfg.seed, "jitter")),
                       drop_policy=drop_policy, default_retry=retry)
    gateway = Gateway(f"scenario:{cfg.name}", clock, trace=sink, audit_path=audit_path)
    exchange = Exchange(gateway, bus)
    registry = Registry()

    policy = PolicyConfig(kind=cfg.policy, round_timeout=cfg.round_timeout / comp,
                          award_mode=cfg.award_mode, tie_break=cfg.tie_break)
    initiator = Initiator("alice", exchange, registry, policy, trace=sink,
                          seed=derive_seed(cfg.seed, "initiator"))

    base_delay_dist = parse_distribution(cfg.delay_dist)
    contractors: list[Contractor] = []
    for i in range(cfg.contractors):
        agent_id = f"bidder-{i:02d}"
        bidder = ScriptedBidder(cfg.value_dist, "constant:0",
                                seed=derive_seed(cfg.seed, "bidder", i))
        if cfg.delay_base is not None:
            response = constant((cfg.delay_base + i * cfg.delay_step) / comp)
        else:
            response = _scale_delay_dist(base_delay_dist, 1.0 / comp)
        ccfg = ContractorConfig(agent_id=agent_id, bidder=bidder,
                                response_delay=response,
                                ack_behavior=cfg.ack_behavior,
                                round_pattern=cfg.round_pattern,
                                batch_delay=cfg.batch_delay / comp,
                                seed=derive_seed(cfg.seed, "contractor", i))
        contractors.append(Contractor(ccfg, exchange, registry, trace=sink,
                                      initiator_id=initiator.agent_id))

    deadline_s = cfg.cfp_deadline / comp
    start = clock.now()
    times = _emission_times(cfg)
    for t in times:
        clock.call_at(start + t / comp,
                      lambda d=deadline_s: initiator.start_round(d))

    if virtual:
        clock.run()
    else:
        span = (max(times) if times else 0.0) / comp + deadline_s + policy.round_timeout
        time.sleep(span + 0.25)
        clock.close()

    sink.close()
    gateway.close()

    agg = aggregate(sink.events)
    if out_path is not None:
        write_reports(agg, out_path)

    return summarize(agg, name=cfg.name, seed=cfg.seed,
                     wall_time_s=time.perf_counter() - started,
                     out_dir=str(out_path) if out_path is not None else None)


_STABILITY_METRICS = ("cfps", "offers", "confirms", "accepts", "rejects",
                      "rounds_effective", "rounds_empty", "completeness",
                      "mean_latency_ms", "p50_latency_ms", "p95_latency_ms")


def repeat_runs(cfg: ScenarioConfig, seeds: list[int], *,
                out_dir: str | Path | None = None) -> dict:
    """Run the same scenario under several seeds and compare the summaries.

    Returns per-seed summaries plus, per metric, the maximum relative
    deviation (max - min over the absolute mean; 0 when all runs agree,
    also 0 when every run reports an exact zero).
    """
    if len(seeds) < 2:
        raise RequiresMultipleSeeds("need at least two seeds to compare runs")
    base = Path(out_dir) if out_dir is not None else Path("runs") / f"{cfg.name}-repeat"
    summaries: list[RunSummary] = []
    for seed in seeds:
        run_cfg = dataclasses.replace(cfg, seed=seed)
        summaries.append(run_scenario(run_cfg, out_dir=base / f"seed-{seed}"))

    deviation: dict[str, float] = {}
    for metric in _STABILITY_METRICS:
        values = [float(getattr(s, metric)) for s in summaries]
        lo, hi = min(values), max(values)
        mean = sum(values) / len(values)
        if hi == lo:
            deviation[metric] = 0.0
        elif mean == 0.0:
            deviation[metric] = float("inf")
        else:
            deviation[metric] = (hi - lo) / abs(mean)

    report = {
        "name": cfg.name,
        "seeds": list(seeds),
        "per_seed": [s.to_dict() for s in summaries],
        "max_relative_deviation": deviation,
    }
    (base / "stability.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return report
