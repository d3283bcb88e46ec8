"""Single-threaded discrete-event scheduler on a virtual microsecond clock.

Events at the same instant are ordered by a seeded random tie-break, then by
insertion order, so a given seed always yields the same interleaving.
"""

from __future__ import annotations

import heapq
import itertools
import random
from typing import Any, Callable, Optional

US = 1
MS = 1_000
SECOND = 1_000_000


def seconds(value: float) -> int:
    return int(round(value * SECOND))


def millis(value: float) -> int:
    return int(round(value * MS))


class Scheduler:
    def __init__(self, seed: int = 0, seeded_ties: bool = True) -> None:
        self.now = 0
        self._heap: list[tuple] = []
        self._seq = itertools.count()
        self._rng = random.Random(seed) if seeded_ties else None
        self._stopped = False
        self.events_run = 0

    def clock(self) -> int:
        return self.now

    def call_at(self, when: int, fn: Callable[..., Any], *args: Any) -> None:
        if when < self.now:
            raise ValueError(f"cannot schedule in the past ({when} < {self.now})")
        tie = self._rng.random() if self._rng is not None else 0.0
        heapq.heappush(self._heap, (when, tie, next(self._seq), fn, args))

    def call_later(self, delay: int, fn: Callable[..., Any], *args: Any) -> None:
        self.call_at(self.now + max(0, int(delay)), fn, *args)

    def every(self, period: int, fn: Callable[[], Any], start: Optional[int] = None) -> None:
        """Run ``fn`` every ``period`` until it returns ``False``."""
        def tick() -> None:
            if fn() is not False:
                self.call_later(period, tick)
        self.call_at(self.now + period if start is None else start, tick)

    def pending(self) -> int:
        return len(self._heap)

    def stop(self) -> None:
        self._stopped = True

    def run(self, until: Optional[int] = None) -> int:
        """Process events up to and including time ``until``; return the clock."""
        heap = self._heap
        pop = heapq.heappop
        self._stopped = False
        while heap and not self._stopped:
            when = heap[0][0]
            if until is not None and when > until:
                break
            _, _, _, fn, args = pop(heap)
            self.now = when
            self.events_run += 1
            fn(*args)
        if until is not None and not self._stopped and self.now < until:
            self.now = until
        return self.now
