"""Clocks and the event scheduler.

Two interchangeable clocks drive everything that waits: a virtual clock
whose time only moves when the event queue says so, and a real clock backed
by a worker thread.  Components never sleep; they schedule callbacks.

The virtual clock is the default for experiment runs.  Events fire in
(time, schedule-order) order, so two runs that schedule the same callbacks
in the same order replay identically -- including callbacks scheduled for
the same instant, which run in the order they were scheduled.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import threading
import time
from typing import Callable, Protocol, runtime_checkable

logger = logging.getLogger(__name__)

# 2025-01-01T00:00:00Z; fixed so virtual timestamps are stable across runs
VIRTUAL_EPOCH = 1735689600.0


class Handle:
    """Cancellation handle for a scheduled callback."""

    __slots__ = ("cancelled",)

    def __init__(self) -> None:
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


@runtime_checkable
class Clock(Protocol):
    def now(self) -> float:
        """Current time as epoch seconds."""

    def call_at(self, when: float, fn: Callable[[], None]) -> Handle:
        """Run fn at epoch time `when`."""

    def call_later(self, delay: float, fn: Callable[[], None]) -> Handle:
        """Run fn after `delay` seconds."""


class VirtualClock:
    """Discrete-event clock: time jumps from one scheduled event to the next.

    `run()` drains the queue; `run_until(t)` processes events due at or
    before t, then parks the clock at t.  Scheduling in the past clamps to
    the current instant (the callback still runs, at `now`).
    """

    def __init__(self, start: float = VIRTUAL_EPOCH) -> None:
        self._now = start
        self._heap: list[tuple[float, int, Handle, Callable[[], None]]] = []
        self._seq = itertools.count()

    def now(self) -> float:
        return self._now

    def call_at(self, when: float, fn: Callable[[], None]) -> Handle:
        handle = Handle()
        heapq.heappush(self._heap, (max(when, self._now), next(self._seq), handle, fn))
        return handle

    def call_later(self, delay: float, fn: Callable[[], None]) -> Handle:
        return self.call_at(self._now + delay, fn)

    def pending(self) -> int:
        return sum(1 for _, _, h, _ in self._heap if not h.cancelled)

    def run(self, max_events: int | None = None) -> int:
        """Drain the event queue; returns the number of callbacks fired."""
        fired = 0
        while self._heap:
            if max_events is not None and fired >= max_events:
                break
            fired += self._pop_one()
        return fired

    def run_until(self, deadline: float) -> int:
        """Process everything due at or before `deadline`, then park there."""
        fired = 0
        while self._heap and self._heap[0][0] <= deadline:
            fired += self._pop_one()
        self._now = max(self._now, deadline)
        return fired

    def advance(self, delta: float) -> int:
        return self.run_until(self._now + delta)

    def _pop_one(self) -> int:
        when, _, handle, fn = heapq.heappop(self._heap)
        self._now = max(self._now, when)
        if handle.cancelled:
            return 0
        fn()
        return 1


class RealClock:
    """Wall clock with a worker thread firing scheduled callbacks.

    Callbacks all run on the one worker thread, which serializes them; any
    thread may schedule.  `close()` stops the worker and drops pending work.
    """

    def __init__(self) -> None:
        self._heap: list[tuple[float, int, Handle, Callable[[], None]]] = []
        self._seq = itertools.count()
        self._cv = threading.Condition()
        self._closed = False
        self._thread = threading.Thread(target=self._loop, name="parley-clock", daemon=True)
        self._thread.start()

    def now(self) -> float:
        return time.time()

    def call_at(self, when: float, fn: Callable[[], None]) -> Handle:
        handle = Handle()
        with self._cv:
            if self._closed:
                raise RuntimeError("clock is closed")
            heapq.heappush(self._heap, (when, next(self._seq), handle, fn))
            self._cv.notify()
        return handle

    def call_later(self, delay: float, fn: Callable[[], None]) -> Handle:
        return self.call_at(self.now() + delay, fn)

    def close(self) -> None:
        with self._cv:
            self._closed = True
            self._cv.notify()
        self._thread.join(timeout=5.0)

    def _loop(self) -> None:
        while True:
            with self._cv:
                while not self._closed:
                    if not self._heap:
                        self._cv.wait()
                        continue
                    wait = self._heap[0][0] - time.time()
                    if wait <= 0:
                        break
                    self._cv.wait(timeout=wait)
                if self._closed:
                    return
                _, _, handle, fn = heapq.heappop(self._heap)
            if handle.cancelled:
                continue
            try:
                fn()
            except Exception:  # worker must survive agent callbacks
                logger.exception("scheduled callback failed")
