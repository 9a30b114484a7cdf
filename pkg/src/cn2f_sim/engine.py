"""Deterministic discrete-event core.

Simulated time is an integer number of milliseconds. Events with the same
timestamp fire in creation order.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from typing import Any, Callable


class PastTime(ValueError):
    """Raised when an event is scheduled before the current clock."""


@dataclass(frozen=True)
class Event:
    id: int
    at: int
    kind: str
    payload: Any = None


@dataclass
class RngStream:
    """Seeded random stream that counts its draws."""

    seed: int
    counter: int = 0
    _rng: random.Random = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._rng = random.Random(self.seed)

    def random(self) -> float:
        self.counter += 1
        return self._rng.random()

    def randint(self, a: int, b: int) -> int:
        self.counter += 1
        return self._rng.randint(a, b)

    def choice(self, seq):
        self.counter += 1
        return self._rng.choice(seq)


Handler = Callable[[Event], None]


class Simulator:
    def __init__(self, seed: int = 0) -> None:
        self.now = 0
        self.rng = RngStream(seed)
        self._queue: list[tuple[int, int]] = []
        self._pending: dict[int, Event] = {}
        self._next_id = 1
        self._handlers: dict[str, Handler] = {}
        self.log: list[Event] = []

    def on(self, kind: str, handler: Handler) -> None:
        self._handlers[kind] = handler

    def schedule(self, at: int, kind: str, payload: Any = None) -> int:
        if at < self.now:
            raise PastTime(f"cannot schedule at {at} ms, clock is {self.now} ms")
        event = Event(self._next_id, int(at), kind, payload)
        self._next_id += 1
        self._pending[event.id] = event
        heapq.heappush(self._queue, (event.at, event.id))
        return event.id

    def cancel(self, event_id: int) -> bool:
        return self._pending.pop(event_id, None) is not None

    def peek(self) -> int | None:
        """Timestamp of the next live event, if any."""
        while self._queue and self._queue[0][1] not in self._pending:
            heapq.heappop(self._queue)
        return self._queue[0][0] if self._queue else None

    def run_until(self, t_end: int) -> int:
        if t_end < self.now:
            raise PastTime(f"cannot run back to {t_end} ms, clock is {self.now} ms")
        fired = 0
        while True:
            nxt = self.peek()
            if nxt is None or nxt > t_end:
                break
            _, event_id = heapq.heappop(self._queue)
            event = self._pending.pop(event_id)
            self.now = event.at
            self.log.append(event)
            handler = self._handlers.get(event.kind)
            if handler is not None:
                handler(event)
            fired += 1
        self.now = t_end
        return fired
