"""Deterministic discrete-event loop.

Time is integer microseconds. Events fire in (fire_time, ordinal) order;
the ordinal is a plain insertion counter, so a fixed schedule of calls
always replays identically.
"""

from __future__ import annotations

import heapq
from typing import Callable, Optional

US_PER_S = 1_000_000


def us(seconds: float) -> int:
    return int(round(seconds * US_PER_S))


class EventHandle:
    __slots__ = ("fire_time", "cancelled")

    def __init__(self, fire_time: int):
        self.fire_time = fire_time
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class EventLoop:
    def __init__(self, start: int = 0):
        self.now = start
        self._heap: list[tuple[int, int, EventHandle, Callable[[], None]]] = []
        self._counter = 0
        self.processed = 0

    def at(self, fire_time: int, fn: Callable[[], None]) -> EventHandle:
        if fire_time < self.now:
            fire_time = self.now
        handle = EventHandle(fire_time)
        heapq.heappush(self._heap, (fire_time, self._counter, handle, fn))
        self._counter += 1
        return handle

    def after(self, delay: int, fn: Callable[[], None]) -> EventHandle:
        return self.at(self.now + max(0, delay), fn)

    def run(self, until: Optional[int] = None, max_events: Optional[int] = None) -> None:
        heap = self._heap
        while heap:
            fire_time, _, handle, fn = heap[0]
            if until is not None and fire_time > until:
                break
            heapq.heappop(heap)
            if handle.cancelled:
                continue
            self.now = fire_time
            fn()
            self.processed += 1
            if max_events is not None and self.processed >= max_events:
                raise RuntimeError(f"event budget exhausted ({max_events})")
        if until is not None and self.now < until:
            self.now = until

    def pending(self) -> int:
        return sum(1 for _, _, h, _ in self._heap if not h.cancelled)
