"""Discrete-event engine: integer microsecond clock, FIFO tie-break, named RNG streams."""
from __future__ import annotations

import heapq
import zlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Optional

import numpy as np


class EventKind(str, Enum):
    PACKET_ARRIVAL = "packet-arrival"
    TIMER_EXPIRY = "timer-expiry"
    IRQ = "irq"
    TASK_RELEASE = "task-release"
    REPORT = "report"
    NODE_MESSAGE = "node-message"


EventId = int


@dataclass
class Event:
    fire_at: int
    kind: EventKind
    payload: Any = None
    callback: Optional[Callable[["Event"], None]] = None
    seq: int = -1


class SimError(RuntimeError):
    pass


@dataclass
class MetricsLog:
    rows: list = field(default_factory=list)
    counters: dict = field(default_factory=dict)

    def record(self, t: int, name: str, value) -> None:
        if self.rows and t < self.rows[-1][0]:
            raise SimError(f"metric row at {t} after {self.rows[-1][0]}")
        self.rows.append((t, name, value))

    def incr(self, name: str, n: int = 1) -> None:
        self.counters[name] = self.counters.get(name, 0) + n

    def get(self, name: str) -> int:
        return self.counters.get(name, 0)

    def series(self, name: str):
        return [(t, v) for t, n, v in self.rows if n == name]


def stream_seed(master: int, name: str) -> list:
    return [int(master) & 0xFFFFFFFF, zlib.crc32(name.encode())]


class Simulator:
    """Single-threaded event loop. Handlers get the Event; `now` equals its fire_at."""

    def __init__(self, seed: int = 0):
        self.now = 0
        self.seed = seed
        self.log = MetricsLog()
        self._heap: list = []
        self._pending: dict = {}
        self._seq = 0
        self._handlers: dict = {}
        self._streams: dict = {}
        self.processed = 0

    # randomness
    def rng(self, name: str) -> np.random.Generator:
        g = self._streams.get(name)
        if g is None:
            g = np.random.default_rng(stream_seed(self.seed, name))
            self._streams[name] = g
        return g

    def on(self, kind: EventKind, handler) -> None:
        self._handlers[kind] = handler

    def schedule(self, event: Event) -> EventId:
        if event.fire_at < self.now:
            raise SimError(f"event at {event.fire_at} scheduled in the past (now={self.now})")
        event.seq = self._seq
        self._seq += 1
        heapq.heappush(self._heap, (event.fire_at, event.seq, event))
        self._pending[event.seq] = event
        return event.seq

    def at(self, t: int, callback, kind: EventKind = EventKind.TIMER_EXPIRY, payload=None) -> EventId:
        return self.schedule(Event(int(t), kind, payload, callback))

    def after(self, dt: int, callback, kind: EventKind = EventKind.TIMER_EXPIRY, payload=None) -> EventId:
        return self.at(self.now + int(dt), callback, kind, payload)

    def cancel(self, eid: Optional[EventId]) -> bool:
        if eid is None:
            return False
        return self._pending.pop(eid, None) is not None

    def is_pending(self, eid) -> bool:
        return eid is not None and eid in self._pending

    def peek(self) -> Optional[int]:
        while self._heap and self._heap[0][1] not in self._pending:
            heapq.heappop(self._heap)
        return self._heap[0][0] if self._heap else None

    def run_until(self, t_end: int) -> MetricsLog:
        heap = self._heap
        pending = self._pending
        while heap:
            fire_at, seq, ev = heap[0]
            if fire_at > t_end:
                break
            heapq.heappop(heap)
            if pending.pop(seq, None) is None:
                continue
            self.now = fire_at
            self.processed += 1
            cb = ev.callback or self._handlers.get(ev.kind)
            if cb is None:
                raise SimError(f"no handler for {ev.kind}")
            cb(ev)
        if t_end > self.now:
            self.now = t_end
        return self.log
