import json

import pytest

from parley.clock import VirtualClock
from parley.envelope import (
    ConsentScope,
    Offer,
    iso_from_epoch,
    make_envelope,
)
from parley.gateway import (
    AuthToken,
    DedupStore,
    Exchange,
    Gateway,
    RateLimiter,
    Registry,
    issue_token,
    verify_token,
)
from parley.trace import TraceSink
from parley.transport import InProcessBus

SECRET = "test-secret"


def _gateway(**kwargs):
    clock = VirtualClock()
    return Gateway(SECRET, clock, **kwargs), clock


def _offer_env(clock, sender="alice", **kwargs):
    payload = Offer(round_id="r1", value=2.0, timestamp=iso_from_epoch(clock.now()))
    return make_envelope(f"agent://{sender}", ["topic://negotiation"], payload,
                         clock=clock, **kwargs)


# ---------------------------------------------------------------------------
# tokens

def test_token_round_trip_verifies():
    clock = VirtualClock()
    token = issue_token("alice", SECRET, 3600, clock)
    assert verify_token(token, SECRET, clock) is None


def test_token_valid_through_expiry_instant_then_fails():
    clock = VirtualClock()
    token = issue_token("alice", SECRET, 10, clock)
    clock.run_until(clock.now() + 10)
    assert verify_token(token, SECRET, clock) is None  # now == expires_at
    clock.run_until(clock.now() + 0.001)
    assert verify_token(token, SECRET, clock) == "token-expired"


def test_wrong_secret_and_tampering_fail_signature():
    clock = VirtualClock()
    token = issue_token("alice", SECRET, 3600, clock)
    assert verify_token(token, "other-secret", clock) == "auth-failed"
    forged = AuthToken("mallory", token.issued_at, token.expires_at, token.signature)
    assert verify_token(forged, SECRET, clock) == "auth-failed"
    stretched = AuthToken("alice", token.issued_at, token.expires_at + 9999, token.signature)
    assert verify_token(stretched, SECRET, clock) == "auth-failed"


# ---------------------------------------------------------------------------
# dedup store and rate limiter oracles

def test_dedup_store_bounded_insertion_order_eviction():
    store = DedupStore(capacity=3)
    for msg_id in ("a", "b", "c"):
        assert store.check_and_add(msg_id)
    assert not store.check_and_add("a")  # still remembered
    store.add("d")  # evicts "a", the oldest
    assert "a" not in store
    assert all(m in store for m in ("b", "c", "d"))
    assert len(store) == 3
    assert store.duplicates == 1


def test_token_bucket_arithmetic():
    limiter = RateLimiter(capacity=2, refill_rate=1.0)
    t0 = 1000.0
    assert limiter.try_acquire("a", t0)
    assert limiter.try_acquire("a", t0)
    assert not limiter.try_acquire("a", t0)  # burst spent
    assert not limiter.try_acquire("a", t0 + 0.5)  # only half a token back
    assert limiter.try_acquire("a", t0 + 1.5)  # 0.5 + 1.0 refilled
    assert not limiter.try_acquire("a", t0 + 1.5)
    # independent buckets per agent
    assert limiter.try_acquire("b", t0)


def test_refill_never_exceeds_capacity():
    limiter = RateLimiter(capacity=3, refill_rate=100.0)
    t0 = 0.0
    for _ in range(3):
        assert limiter.try_acquire("a", t0)
    assert not limiter.try_acquire("a", t0)
    # a long idle refills to capacity, not beyond
    t1 = t0 + 1000.0
    for _ in range(3):
        assert limiter.try_acquire("a", t1)
    assert not limiter.try_acquire("a", t1)


# ---------------------------------------------------------------------------
# ordered admission

def test_happy_path_is_admitted_and_audited():
    gw, clock = _gateway()
    token = gw.issue("alice")
    env = _offer_env(clock)
    result = gw.admit(env, token)
    assert result.admitted and result.reason is None
    assert env.msg_id in gw.dedup
    assert [r.decision for r in gw.audit_records] == ["admitted"]


def test_rejection_reasons_in_documented_order():
    gw, clock = _gateway()
    good = gw.issue("alice")

    bad_sig = AuthToken("alice", good.issued_at, good.expires_at, "0" * 64)
    assert gw.admit(_offer_env(clock), bad_sig).reason == "auth-failed"

    short = gw.issue("alice", validity_s=1)
    clock.run_until(clock.now() + 5)
    assert gw.admit(_offer_env(clock), short).reason == "token-expired"

    bob_token = gw.issue("bob")
    assert gw.admit(_offer_env(clock, sender="alice"), bob_token).reason == "agent-mismatch"

    alice = gw.issue("alice")
    opted_out = _offer_env(clock, scope=ConsentScope(consent="opt-out"))
    assert gw.admit(opted_out, alice).reason == "consent-required"

    broken = make_envelope("agent://alice", ["topic://negotiation"],
                           Offer.from_dict({"round_id": "r1",
                                            "timestamp": iso_from_epoch(clock.now())}),
                           clock=clock)
    assert gw.admit(broken, alice).reason == "malformed"

    env = _offer_env(clock)
    assert gw.admit(env, alice).admitted
    assert gw.admit(env, alice).reason == "duplicate"

    assert len(gw.audit_records) == 7  # one line per attempt, no more


def test_first_failing_check_wins():
    gw, clock = _gateway()
    token = gw.issue("alice", validity_s=1)
    env = _offer_env(clock, scope=ConsentScope(consent="opt-out"))
    clock.run_until(clock.now() + 5)
    # both token expiry and consent would fail; expiry is checked first
    assert gw.admit(env, token).reason == "token-expired"


def test_burst_beyond_capacity_is_rate_limited():
    gw, clock = _gateway(rate_capacity=3, rate_refill=0.0)
    token = gw.issue("alice")
    results = [gw.admit(_offer_env(clock), token) for _ in range(5)]
    assert [r.admitted for r in results] == [True, True, True, False, False]
    assert results[3].reason == "rate-limited"
    reasons = [r.reason for r in gw.audit_records]
    assert reasons == [None, None, None, "rate-limited", "rate-limited"]


def test_malformed_submissions_do_not_spend_rate_tokens():
    gw, clock = _gateway(rate_capacity=1, rate_refill=0.0)
    token = gw.issue("alice")
    broken = make_envelope("agent://alice", ["topic://negotiation"],
                           Offer.from_dict({"round_id": "r1",
                                            "timestamp": iso_from_epoch(clock.now())}),
                           clock=clock)
    for _ in range(3):
        assert gw.admit(broken, token).reason in ("malformed", "duplicate")
    # the full burst is still available to a valid envelope
    assert gw.admit(_offer_env(clock), token).admitted


def test_rejected_duplicate_does_not_record_new_id():
    gw, clock = _gateway(rate_capacity=1, rate_refill=0.0)
    token = gw.issue("alice")
    first = _offer_env(clock)
    second = _offer_env(clock)
    assert gw.admit(first, token).admitted
    assert gw.admit(second, token).reason == "rate-limited"
    # the rate-limited envelope was not remembered; it may be resubmitted
    assert second.msg_id not in gw.dedup


def test_audit_log_file_is_jsonl(tmp_path):
    path = tmp_path / "audit.jsonl"
    clock = VirtualClock()
    gw = Gateway(SECRET, clock, audit_path=path)
    token = gw.issue("alice")
    gw.admit(_offer_env(clock), token)
    env = _offer_env(clock, scope=ConsentScope(consent="opt-out"))
    gw.admit(env, token)
    gw.close()
    lines = [json.loads(line) for line in path.read_text().splitlines()]
    assert len(lines) == 2
    assert lines[0]["decision"] == "admitted"
    assert lines[1] == {"ts": lines[1]["ts"], "agent_id": "alice",
                        "msg_id": env.msg_id, "decision": "rejected",
                        "reason": "consent-required"}


def test_admission_trace_events():
    sink = TraceSink()
    clock = VirtualClock()
    gw = Gateway(SECRET, clock, trace=sink)
    token = gw.issue("alice")
    gw.admit(_offer_env(clock), token)
    gw.admit(_offer_env(clock, scope=ConsentScope(consent="opt-out")), token)
    kinds = [e.kind for e in sink.events]
    assert kinds == ["admitted", "rejected-admission"]
    assert sink.events[1].detail == {"reason": "consent-required"}


# ---------------------------------------------------------------------------
# registry and exchange

def test_registry_roster():
    reg = Registry()
    for name in ("b1", "b2", "b1"):
        reg.register(name)
    assert reg.names() == ("b1", "b2")
    assert reg.count() == 2


def test_exchange_delivers_admitted_and_blocks_rejected():
    clock = VirtualClock()
    bus = InProcessBus(clock)
    gw = Gateway(SECRET, clock)
    exchange = Exchange(gw, bus)
    token = gw.issue("alice")

    seen = []

    def spy(env):
        seen.append(env)
        exchange.ack(env.msg_id, "spy")

    bus.subscribe("topic.negotiation", spy, owner="spy")

    ok_env = _offer_env(clock)
    result, receipt = exchange.submit(ok_env, token)
    assert result.admitted and receipt is not None

    bad = _offer_env(clock, scope=ConsentScope(consent="opt-out"))
    result, receipt = exchange.submit(bad, token)
    assert not result.admitted and receipt is None

    clock.run()
    assert [e.msg_id for e in seen] == [ok_env.msg_id]
    assert receipt is None and ok_env.msg_id in gw.dedup
