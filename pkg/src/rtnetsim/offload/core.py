"""Offload task model, deadline adjustment and the partitioned-EDF admission test."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

MS = 1000

FIRST_FIT = "first-fit"
BEST_FIT = "best-fit"
WORST_FIT = "worst-fit"
HEURISTICS = (FIRST_FIT, BEST_FIT, WORST_FIT)

REJECT = None


@dataclass
class OffloadTask:
    client: int
    deadline: int            # absolute, µs; replaced by the adjusted value on admission
    rel_deadline: int        # time to deadline when the client created the task
    conn_setup: int          # µs the worker needs to open the reply connection
    wcet: int
    elapsed: int = 0
    params: object = None
    id: int = -1
    created: int = 0
    orig_deadline: int = 0
    seq: int = 0

    def __post_init__(self):
        if self.wcet <= 0:
            raise ValueError("wcet must be positive")
        if not 0 <= self.elapsed <= self.wcet:
            raise ValueError("elapsed must lie in [0, wcet]")
        if not self.orig_deadline:
            self.orig_deadline = self.deadline

    @property
    def remaining(self) -> int:
        return self.wcet - self.elapsed


@dataclass
class Adjustment:
    expected_delay: int
    adjusted_delay: int
    new_deadline: int
    clamped: bool = False


def adjust_deadline(task: OffloadTask, now: int, uncertainty: float) -> Adjustment:
    """Pull the deadline forward by the expected reply delay, scaled by `uncertainty`.

    The expected delay is the time the request spent in transit: the task's
    initial time budget minus what is left of it on arrival. A negative value
    (clock skew) is clamped to zero and flagged.
    """
    d_exp = task.rel_deadline - (task.deadline - now)
    clamped = d_exp < 0
    if clamped:
        d_exp = 0
    d_adj = d_exp + task.conn_setup - task.wcet if task.conn_setup > task.wcet else d_exp
    new = task.deadline - int(round(uncertainty * d_adj))
    return Adjustment(d_exp, d_adj, new, clamped)


def laxity(task: OffloadTask, now: int) -> int:
    return task.deadline - now - task.remaining


def density(task: OffloadTask, now: int) -> float:
    window = task.deadline - now
    if window <= 0:
        return math.inf
    return task.remaining / window


def queue_density(tasks: Sequence[OffloadTask], now: int) -> float:
    return sum(density(t, now) for t in tasks)


def edf_order(tasks: Sequence[OffloadTask]) -> List[OffloadTask]:
    return sorted(tasks, key=lambda t: (t.deadline, t.seq))


def edf_finish_times(tasks: Sequence[OffloadTask], now: int) -> List[tuple]:
    """(task, finish) pairs for running everything from `now` in deadline order."""
    out, t = [], now
    for task in edf_order(tasks):
        t += task.remaining
        out.append((task, t))
    return out


def edf_feasible(tasks: Sequence[OffloadTask], now: int) -> bool:
    # with every task already released, EDF order is the optimal single-worker schedule
    return all(fin <= task.deadline for task, fin in edf_finish_times(tasks, now))


def precheck(task: OffloadTask, now: int) -> bool:
    return task.deadline - now > task.remaining


def accept(task: OffloadTask, queues: Sequence[Sequence[OffloadTask]], now: int,
           heuristic: str = WORST_FIT) -> Optional[int]:
    """Index of the worker queue that takes `task`, or REJECT.

    `queues` hold each worker's current tasks with their remaining work as of `now`.
    """
    if heuristic not in HEURISTICS:
        raise ValueError(f"unknown heuristic {heuristic!r}")
    if not precheck(task, now):
        return REJECT
    best, best_d = REJECT, None
    for i, q in enumerate(queues):
        if not edf_feasible(list(q) + [task], now):
            continue
        if heuristic == FIRST_FIT:
            return i
        d = queue_density(q, now)
        if best is REJECT or (d < best_d if heuristic == WORST_FIT else d > best_d):
            best, best_d = i, d
    return best


@dataclass
class LatencyModel:
    """One-way link delay: normal with the given mean and variance (ms, ms^2), truncated at zero."""
    mean: float = 30.0
    variance: float = 10.0

    def __post_init__(self):
        if self.mean < 0 or self.variance < 0:
            raise ValueError("latency mean and variance must be non-negative")

    def sample(self, rng) -> int:
        sd = math.sqrt(self.variance)
        if sd == 0:
            return int(round(self.mean * MS))
        while True:
            x = rng.normal(self.mean, sd)
            if x >= 0:
                return int(round(x * MS))


def normal_ms(rng, mean: float, variance: float, floor: float = 0.0) -> int:
    """µs sample of a normal given in ms, clipped at `floor` ms."""
    x = rng.normal(mean, math.sqrt(variance)) if variance > 0 else mean
    return int(round(max(floor, x) * MS))
