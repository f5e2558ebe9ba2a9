"""parley: a typed, policy-governed negotiation message exchange.

The library stacks up in layers: envelopes (typed payloads with a canonical
wire form), a subject-based transport with at-least-once delivery, a
gateway that admits or rejects traffic at the edge, pure negotiation
policies, the round/session protocols built on them, and a harness that
runs whole scripted scenarios on a virtual clock and aggregates the trace.
"""

from parley.envelope import (
    Ack,
    AlternatingOffer,
    Accept,
    Cfp,
    Confirm,
    ConsentScope,
    Envelope,
    Offer,
    Reject,
    ValidationResult,
    make_envelope,
    parse,
    sanitize,
    serialize,
    validate,
)
from parley.clock import Clock, RealClock, VirtualClock
from parley.trace import TraceSink, read_trace
from parley.transport import InProcessBus, RetryPolicy
from parley.gateway import Exchange, Gateway, Registry
from parley.policy import PolicyConfig, decide, select_winner
from parley.agents import ScriptedBidder, wrap_external_producer
from parley.cnet import Contractor, ContractorConfig, Initiator
from parley.altoffers import AltOutcome, run_alt_session
from parley.traffic import fixed_schedule, poisson_schedule
from parley.metrics import aggregate, percentile, write_reports
from parley.harness import (
    RunSummary,
    ScenarioConfig,
    load_scenario,
    repeat_runs,
    run_scenario,
)

__all__ = [
    "Ack",
    "Accept",
    "AltOutcome",
    "AlternatingOffer",
    "Cfp",
    "Clock",
    "Confirm",
    "ConsentScope",
    "Contractor",
    "ContractorConfig",
    "Envelope",
    "Exchange",
    "Gateway",
    "InProcessBus",
    "Initiator",
    "Offer",
    "PolicyConfig",
    "RealClock",
    "Registry",
    "Reject",
    "RetryPolicy",
    "RunSummary",
    "ScenarioConfig",
    "ScriptedBidder",
    "TraceSink",
    "ValidationResult",
    "VirtualClock",
    "aggregate",
    "decide",
    "fixed_schedule",
    "load_scenario",
    "make_envelope",
    "parse",
    "percentile",
    "poisson_schedule",
    "read_trace",
    "repeat_runs",
    "run_alt_session",
    "run_scenario",
    "sanitize",
    "select_winner",
    "serialize",
    "validate",
    "wrap_external_producer",
    "write_reports",
]

__version__ = "0.1.0"
