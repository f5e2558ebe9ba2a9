"""Subject-based pub/sub transport with at-least-once delivery.

Subjects are dot-separated tokens (`topic.negotiation`, `agent.alice.inbox`,
`ack.<msg_id>`); a `*` in a subscription pattern matches exactly one segment
and never spans dots.  Envelope recipient URIs map onto subjects:

    topic://negotiation  ->  topic.negotiation
    agent://alice        ->  agent.alice.inbox
    ack://<msg_id>       ->  ack.<msg_id>

Delivery to every matching subscriber is fan-out with independent ack
tracking.  Under at-least-once reliability the bus redelivers until the
destination acks, the retry budget runs out, or the envelope's TTL lapses;
redelivery n waits base_delay * backoff_factor**n, stretched by a seeded
jitter fraction.  Fire-and-forget makes exactly one attempt.

Fault injection is first class: a DropPolicy decides per delivery attempt
(and per transmitted ack) whether the message silently vanishes, which is
how lossy-network scenarios are scripted.

Two realizations share this contract: InProcessBus (deterministic under a
virtual clock) and the length-prefixed JSON frame socket pair at the bottom
of the module (each frame is 4 bytes of big-endian length followed by
canonical-JSON envelope bytes).
"""

from __future__ import annotations

import json
import logging
import queue
import random
import re
import socket
import struct
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

from parley.clock import Clock, Handle
from parley.envelope import Ack, Envelope, make_envelope, parse, serialize
from parley.trace import TraceSink

logger = logging.getLogger(__name__)

AT_LEAST_ONCE = "at-least-once"
FIRE_AND_FORGET = "fire-and-forget"

_SEGMENT_RE = re.compile(r"^[A-Za-z0-9_-]+$")


class InvalidSubject(Exception):
    """Subject or pattern does not follow the dot-segment grammar."""


class Expired(Exception):
    """Envelope is older than its scope.ttl and cannot be delivered."""


class FrameError(Exception):
    """Socket frame was truncated or oversized."""


# ---------------------------------------------------------------------------
# subjects

def split_subject(subject: str, *, allow_wildcard: bool = False) -> list[str]:
    parts = subject.split(".")
    for part in parts:
        if part == "*" and allow_wildcard:
            continue
        if not _SEGMENT_RE.match(part):
            raise InvalidSubject(f"bad subject segment {part!r} in {subject!r}")
    return parts


def subject_for_uri(uri: str) -> str:
    """Map a recipient URI onto its transport subject."""
    scheme, _, rest = uri.partition("://")
    if not rest:
        raise InvalidSubject(f"not a recipient URI: {uri!r}")
    if scheme == "topic":
        subject = rest if "." in rest else f"topic.{rest}"
    elif scheme == "agent":
        subject = f"agent.{rest}.inbox"
    elif scheme == "ack":
        subject = f"ack.{rest}"
    else:
        raise InvalidSubject(f"unsupported URI scheme: {uri!r}")
    split_subject(subject)
    return subject


def subject_matches(pattern: str, subject: str) -> bool:
    """True when pattern covers subject; `*` matches exactly one segment."""
    pparts = pattern.split(".")
    sparts = subject.split(".")
    if len(pparts) != len(sparts):
        return False
    return all(p == "*" or p == s for p, s in zip(pparts, sparts))


# ---------------------------------------------------------------------------
# retry policy and receipts

@dataclass(frozen=True)
class RetryPolicy:
    max_retries: int = 3
    base_delay: float = 0.1  # seconds
    backoff_factor: float = 2.0
    jitter_fraction: float = 0.1

    def delay(self, n: int, rng: random.Random | None = None) -> float:
        """Wait before redelivery n (0-based): base * factor**n, jittered."""
        d = self.base_delay * self.backoff_factor ** n
        if self.jitter_fraction and rng is not None:
            d *= 1.0 + rng.uniform(-self.jitter_fraction, self.jitter_fraction)
        return d


class DeliveryReceipt:
    """Completion record for one publish, resolved as the transport learns.

    status is None while in flight, then one of "acked" (every destination
    acknowledged), "exhausted" (some destination never acked within the
    retry budget), or "expired" (TTL lapsed before some destination could
    be served).  attempts is the largest per-destination attempt count.
    A publish that matched no subscriber resolves acked with 0 attempts.
    """

    def __init__(self, msg_id: str, reliability: str) -> None:
        self.msg_id = msg_id
        self.reliability = reliability
        self.status: str | None = None
        self.attempts = 0

    @property
    def done(self) -> bool:
        return self.status is not None

    def __repr__(self) -> str:  # handy in test failures
        return f"DeliveryReceipt({self.msg_id!r}, status={self.status!r}, attempts={self.attempts})"


@dataclass
class Subscription:
    sub_id: int
    pattern: str
    callback: Callable[[Envelope], None]
    owner: str | None = None  # agent name; lets acks match their destination


# ---------------------------------------------------------------------------
# fault injection

class DropPolicy:
    """Decides whether one delivery attempt is silently lost.

    `sub` is None when the attempt being judged is a transmitted ack rather
    than a subscriber delivery.  Implementations record what they dropped
    so tests can reconstruct ground truth.
    """

    def should_drop(self, env: Envelope, sub: Subscription | None, attempt: int) -> bool:
        raise NotImplementedError

    def __call__(self, env: Envelope, sub: Subscription | None, attempt: int) -> bool:
        return self.should_drop(env, sub, attempt)


class ProbabilisticDrop(DropPolicy):
    def __init__(self, probability: float, rng: random.Random | None = None,
                 include_acks: bool = False) -> None:
        if not 0.0 <= probability <= 1.0:
            raise ValueError("drop probability must be within [0, 1]")
        self.probability = probability
        self.rng = rng or random.Random()
        self.include_acks = include_acks
        self.dropped: list[tuple[str, str | None, int]] = []

    def should_drop(self, env: Envelope, sub: Subscription | None, attempt: int) -> bool:
        if env.payload.kind == "ack" and not self.include_acks:
            return False
        if self.rng.random() < self.probability:
            self.dropped.append((env.msg_id, sub.owner if sub else None, attempt))
            return True
        return False


class ScheduledDrop(DropPolicy):
    """Drop the first n delivery attempts, optionally for chosen msg_ids."""

    def __init__(self, first_attempts: int, msg_ids: Iterable[str] | None = None,
                 include_acks: bool = False) -> None:
        self.first_attempts = first_attempts
        self.msg_ids = set(msg_ids) if msg_ids is not None else None
        self.include_acks = include_acks
        self.dropped: list[tuple[str, str | None, int]] = []

    def should_drop(self, env: Envelope, sub: Subscription | None, attempt: int) -> bool:
        if env.payload.kind == "ack" and not self.include_acks:
            return False
        if self.msg_ids is not None and env.msg_id not in self.msg_ids:
            return False
        if attempt <= self.first_attempts:
            self.dropped.append((env.msg_id, sub.owner if sub else None, attempt))
            return True
        return False


# ---------------------------------------------------------------------------
# in-process bus

@dataclass
class _DestState:
    sub: Subscription
    attempts: int = 0
    acked: bool = False
    terminal: str | None = None  # "acked" | "exhausted" | "expired"
    timer: Handle | None = None


@dataclass
class _Pending:
    env: Envelope
    receipt: DeliveryReceipt
    retry: RetryPolicy
    expires_at: float
    dests: "dict[int, _DestState]" = field(default_factory=dict)


class InProcessBus:
    """Single-process realization of the transport contract.

    All delivery work is scheduled on the clock, so a virtual clock makes
    the whole bus deterministic.  Public entry points take a lock, which
    matters only under the real clock (the virtual clock is single
    threaded by construction).
    """

    def __init__(self, clock: Clock, *, trace: TraceSink | None = None,
                 rng: random.Random | None = None,
                 drop_policy: DropPolicy | None = None,
                 default_retry: RetryPolicy | None = None) -> None:
        self.clock = clock
        self.trace = trace
        self.rng = rng or random.Random()
        self.drop_policy = drop_policy
        self.default_retry = default_retry or RetryPolicy()
        self._subs: list[Subscription] = []
        self._pending: dict[str, _Pending] = {}
        self._next_sub_id = 0
        self._lock = threading.RLock()

    # -- subscription management

    def subscribe(self, pattern: str, callback: Callable[[Envelope], None],
                  owner: str | None = None) -> Subscription:
        split_subject(pattern, allow_wildcard=True)
        with self._lock:
            sub = Subscription(self._next_sub_id, pattern, callback, owner)
            self._next_sub_id += 1
            self._subs.append(sub)
            return sub

    def unsubscribe(self, sub: Subscription) -> None:
        with self._lock:
            self._subs = [s for s in self._subs if s.sub_id != sub.sub_id]

    # -- publishing

    def publish(self, env: Envelope, reliability: str = AT_LEAST_ONCE,
                retry: RetryPolicy | None = None) -> DeliveryReceipt:
        """Fan the envelope out to every matching subscriber.

        Raises Expired when the envelope is already older than its TTL.
        Returns a receipt the caller can poll once the clock has run.
        """
        if reliability not in (AT_LEAST_ONCE, FIRE_AND_FORGET):
            raise ValueError(f"unknown reliability mode: {reliability!r}")
        with self._lock:
            now = self.clock.now()
            born = env.ts_epoch()
            ttl = env.scope.ttl if env.scope.ttl is not None else 0
            if now - born >= ttl:
                raise Expired(f"envelope {env.msg_id} exceeded its {ttl}s TTL")

            if isinstance(env.payload, Ack):
                self._on_ack_transmitted(env)

            subjects = [subject_for_uri(uri) for uri in env.to]
            dests = [sub for sub in self._subs
                     if any(subject_matches(sub.pattern, s) for s in subjects)]

            receipt = DeliveryReceipt(env.msg_id, reliability)
            if reliability == FIRE_AND_FORGET:
                for sub in dests:
                    state = _DestState(sub)
                    self.clock.call_at(now, lambda s=state, e=env: self._fire_once(e, s))
                receipt.status = "acked"
                receipt.attempts = 1 if dests else 0
                return receipt

            pending = _Pending(env, receipt, retry or self.default_retry, born + ttl,
                               {sub.sub_id: _DestState(sub) for sub in dests})
            if not pending.dests:
                receipt.status = "acked"
                return receipt
            self._pending[env.msg_id] = pending
            for state in pending.dests.values():
                self.clock.call_at(now, lambda p=pending, s=state: self._attempt(p, s))
            return receipt

    def ack(self, ref_msg_id: str, acker: str) -> Envelope:
        """Acknowledge receipt of `ref_msg_id` on behalf of agent `acker`.

        Emits a real Ack envelope on the ack.<msg_id> subject (so remote
        observers see it) and settles the matching pending delivery.  An
        unknown id is a no-op that still lands in the trace.
        """
        env = make_envelope(f"agent://{acker}", [f"ack://{ref_msg_id}"],
                            Ack(ref_msg_id=ref_msg_id), clock=self.clock, rng=self.rng)
        with self._lock:
            if self.trace is not None:
                detail = None if ref_msg_id in self._pending else {"unknown": True}
                self.trace.emit("ack", self.clock.now(), agent_id=acker,
                                msg_id=ref_msg_id, detail=detail)
            self.publish(env, FIRE_AND_FORGET)
        return env

    # -- delivery machinery

    def _fire_once(self, env: Envelope, state: _DestState) -> None:
        with self._lock:
            state.attempts = 1
            if self.drop_policy is not None and self.drop_policy(env, state.sub, 1):
                return
            self._invoke(state.sub, env)

    def _attempt(self, pending: _Pending, state: _DestState) -> None:
        with self._lock:
            if state.terminal is not None:
                return
            now = self.clock.now()
            state.attempts += 1
            attempt = state.attempts
            if attempt > 1 and self.trace is not None:
                self.trace.emit("retry", now, agent_id=state.sub.owner,
                                msg_id=pending.env.msg_id, detail={"attempt": attempt})
            dropped = (self.drop_policy is not None
                       and self.drop_policy(pending.env, state.sub, attempt))
            if not dropped:
                self._invoke(state.sub, pending.env)
            if state.terminal is not None:  # callback acked synchronously
                return
            wait = pending.retry.delay(attempt - 1,
                                       self.rng if pending.retry.jitter_fraction else None)
            state.timer = self.clock.call_at(now + wait, lambda: self._after_wait(pending, state))

    def _after_wait(self, pending: _Pending, state: _DestState) -> None:
        with self._lock:
            if state.terminal is not None:
                return
            if state.attempts > pending.retry.max_retries:
                self._settle(pending, state, "exhausted")
            elif self.clock.now() >= pending.expires_at:
                # a retry scheduled past the TTL must not fire
                self._settle(pending, state, "expired")
            else:
                self._attempt(pending, state)

    def _invoke(self, sub: Subscription, env: Envelope) -> None:
        try:
            sub.callback(env)
        except Exception:
            logger.exception("subscriber %r failed on %s", sub.pattern, env.msg_id)

    def _on_ack_transmitted(self, ack_env: Envelope) -> None:
        ref = ack_env.payload.ref_msg_id
        if self.drop_policy is not None and self.drop_policy(ack_env, None, 1):
            return  # the ack itself was lost in transit
        pending = self._pending.get(ref)
        if pending is None:
            return  # unknown or already settled: no-op
        acker = ack_env.sender_name()
        owned = [s for s in pending.dests.values()
                 if s.terminal is None and s.sub.owner == acker]
        if not owned:
            owned = [s for s in pending.dests.values()
                     if s.terminal is None and s.sub.owner is None][:1]
        for state in owned:
            state.acked = True
            if state.timer is not None:
                state.timer.cancel()
            self._settle(pending, state, "acked")

    def _settle(self, pending: _Pending, state: _DestState, status: str) -> None:
        state.terminal = status
        if all(s.terminal is not None for s in pending.dests.values()):
            statuses = {s.terminal for s in pending.dests.values()}
            receipt = pending.receipt
            if "expired" in statuses:
                receipt.status = "expired"
            elif "exhausted" in statuses:
                receipt.status = "exhausted"
            else:
                receipt.status = "acked"
            receipt.attempts = max(s.attempts for s in pending.dests.values())
            self._pending.pop(pending.env.msg_id, None)


# ---------------------------------------------------------------------------
# socket framing: 4-byte big-endian length + canonical-JSON envelope bytes

MAX_FRAME = 16 * 1024 * 1024


def send_frame(sock: socket.socket, payload: bytes) -> None:
    sock.sendall(struct.pack(">I", len(payload)) + payload)


def recv_frame(sock: socket.socket) -> bytes | None:
    """Read one frame; None on clean EOF, FrameError on a torn frame."""
    header = _recv_exact(sock, 4)
    if header is None:
        return None
    (length,) = struct.unpack(">I", header)
    if length > MAX_FRAME:
        raise FrameError(f"frame of {length} bytes exceeds limit")
    body = _recv_exact(sock, length)
    if body is None:
        raise FrameError("connection closed mid-frame")
    return body


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            if buf:
                raise FrameError("connection closed mid-frame")
            return None  # clean EOF on a frame boundary
        buf += chunk
    return buf


class SocketRelay:
    """Minimal TCP realization of the transport contract.

    Clients connect, send one JSON handshake frame
    ``{"agent": name, "patterns": [...]}``, then exchange envelope frames:
    every frame after the handshake is canonical-JSON envelope bytes.
    Inbound envelopes are published (fire-and-forget) on the relay's bus;
    envelopes matching a client's patterns are pushed back out verbatim.
    """

    def __init__(self, bus: InProcessBus, host: str = "127.0.0.1", port: int = 0) -> None:
        self.bus = bus
        self._listener = socket.create_server((host, port))
        self.host, self.port = self._listener.getsockname()[:2]
        self._conns: list[socket.socket] = []
        self._subs: list[Subscription] = []
        self._closed = False
        self._thread = threading.Thread(target=self._accept_loop,
                                        name="parley-relay", daemon=True)
        self._thread.start()

    def close(self) -> None:
        self._closed = True
        for sub in self._subs:
            self.bus.unsubscribe(sub)
        for conn in self._conns:
            try:
                conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            conn.close()
        self._listener.close()

    def _accept_loop(self) -> None:
        while not self._closed:
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            self._conns.append(conn)
            threading.Thread(target=self._serve, args=(conn,), daemon=True).start()

    def _serve(self, conn: socket.socket) -> None:
        try:
            hello = recv_frame(conn)
            if hello is None:
                return
            spec = json.loads(hello)
            agent = spec.get("agent")
            write_lock = threading.Lock()

            def push(env: Envelope) -> None:
                try:
                    with write_lock:
                        send_frame(conn, serialize(env))
                except OSError:
                    pass

            for pattern in spec.get("patterns", []):
                self._subs.append(self.bus.subscribe(pattern, push, owner=agent))
            while True:
                frame = recv_frame(conn)
                if frame is None:
                    return
                self.bus.publish(parse(frame), FIRE_AND_FORGET)
        except (FrameError, json.JSONDecodeError, OSError):
            logger.debug("relay connection dropped", exc_info=True)
        finally:
            conn.close()


class SocketEnvelopeClient:
    """Counterpart of SocketRelay for tests and demos."""

    def __init__(self, host: str, port: int, *, agent: str | None = None,
                 patterns: Iterable[str] = ()) -> None:
        self._sock = socket.create_connection((host, port), timeout=10)
        send_frame(self._sock, json.dumps({"agent": agent, "patterns": list(patterns)}).encode())
        self._frames: "queue.Queue[bytes]" = queue.Queue()
        self._thread = threading.Thread(target=self._read_loop, daemon=True)
        self._thread.start()

    def send(self, env: Envelope) -> None:
        send_frame(self._sock, serialize(env))

    def recv_bytes(self, timeout: float = 5.0) -> bytes:
        return self._frames.get(timeout=timeout)

    def recv(self, timeout: float = 5.0) -> Envelope:
        return parse(self.recv_bytes(timeout))

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()

    def _read_loop(self) -> None:
        try:
            while True:
                frame = recv_frame(self._sock)
                if frame is None:
                    return
                self._frames.put(frame)
        except (FrameError, OSError):
            return
