"""Deterministic discrete-event kernel.

Time is kept in integer nanoseconds. Events with equal time fire in the
order they were scheduled, so a run is a pure function of its inputs.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Any, Callable, TextIO

FRAME_START = "frame-start"
FRAME_END = "frame-end"
TIMER = "timer-expiry"
ARRIVAL = "packet-arrival"
CCA = "cca-sample"


class SchedulingError(RuntimeError):
    """Raised when an event is scheduled before the current clock."""


class SimulationAborted(RuntimeError):
    """Raised when a run exceeds its event budget."""


@dataclass(eq=False)
class Event:
    time: int
    seq: int
    kind: str
    node_id: int
    callback: Callable[..., Any] | None = field(default=None, repr=False)
    args: tuple = field(default=(), repr=False)
    cancelled: bool = False

    def cancel(self) -> None:
        self.cancelled = True


@dataclass
class SimClock:
    now: int = 0
    horizon: int = 0


class Simulator:
    """Binary-heap event queue with a monotone integer clock."""

    def __init__(self, max_events: int = 10_000_000, trace: TextIO | None = None):
        self.clock = SimClock()
        self._queue: list[tuple[int, int, Event]] = []
        self._seq = 0
        self.max_events = max_events
        self.dispatched = 0
        self._trace = trace

    @property
    def now(self) -> int:
        return self.clock.now

    def schedule(self, time: int, kind: str, node_id: int,
                 callback: Callable[..., Any] | None = None, *args) -> Event:
        """Enqueue an event and return it; ``event.cancel()`` revokes it."""
        if time < self.clock.now:
            raise SchedulingError(
                f"event {kind!r} for node {node_id} at {time} ns is before now={self.clock.now} ns")
        ev = Event(time, self._seq, kind, node_id, callback, args)
        self._seq += 1
        heapq.heappush(self._queue, (time, ev.seq, ev))
        return ev

    def schedule_in(self, delay: int, kind: str, node_id: int,
                    callback: Callable[..., Any] | None = None, *args) -> Event:
        return self.schedule(self.clock.now + delay, kind, node_id, callback, *args)

    def run_until(self, horizon: int) -> int:
        """Dispatch every event with ``time <= horizon`` and park the clock there."""
        if horizon < self.clock.now:
            raise SchedulingError(f"horizon {horizon} ns is before now={self.clock.now} ns")
        self.clock.horizon = horizon
        queue = self._queue
        trace = self._trace
        count = 0
        while queue and queue[0][0] <= horizon:
            t, _, ev = heapq.heappop(queue)
            if ev.cancelled:
                continue
            self.clock.now = t
            count += 1
            self.dispatched += 1
            if self.dispatched > self.max_events:
                raise SimulationAborted(
                    f"event budget of {self.max_events} exceeded at t={t} ns")
            if trace is not None:
                trace.write(f"{t}\t{ev.kind}\t{ev.node_id}\n")
            if ev.callback is not None:
                ev.callback(*ev.args)
        self.clock.now = horizon
        return count

    def pending(self) -> int:
        return sum(1 for _, _, ev in self._queue if not ev.cancelled)
