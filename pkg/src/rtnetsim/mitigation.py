"""Interrupt-overload mitigation policies.

Each policy is a small state machine fed by the testbed's driver hooks:
IRQ arrival, queue events, critical-task earliness reports, driver/ISR time.
"""
from __future__ import annotations

from dataclasses import dataclass

DELIVER = "deliver"
DROP_AND_DISABLE = "drop_and_disable"
ENABLE = "enable"
DISABLE = "disable"


@dataclass
class NoPolicy:
    name: str = "none"

    def on_irq(self, t):
        return DELIVER


@dataclass
class BurstPolicy:
    slice: int = 20_000
    capacity: int = 600
    name: str = "burst"
    slice_idx: int = -1
    count: int = 0
    disabled_until: int = 0

    def __post_init__(self):
        if self.slice <= 0 or self.capacity <= 0:
            raise ValueError("burst policy needs slice > 0 and capacity > 0")

    def on_irq(self, t: int) -> str:
        idx = t // self.slice
        if idx != self.slice_idx:
            self.slice_idx, self.count = idx, 0
        self.count += 1
        if self.count > self.capacity:
            self.disabled_until = (idx + 1) * self.slice
            return DROP_AND_DISABLE
        return DELIVER


def burst_on_irq(policy: BurstPolicy, t: int) -> str:
    return policy.on_irq(t)


@dataclass
class HysteresisPolicy:
    target: int = 10_000             # critical task target duration, µs
    block_threshold: float = 0.10
    unblock_threshold: float = 0.25
    poll_sleep: int = 1000
    name: str = "hysteresis"
    blocked: bool = False
    transitions: int = 0

    def __post_init__(self):
        if self.unblock_threshold < self.block_threshold:
            raise ValueError("unblock_threshold must be >= block_threshold")

    def on_report(self, earliness: int) -> str:
        if not self.blocked and earliness < self.block_threshold * self.target:
            self.blocked = True
            self.transitions += 1
        elif self.blocked and earliness > self.unblock_threshold * self.target:
            self.blocked = False
            self.transitions += 1
        return DISABLE if self.blocked else ENABLE

    def on_irq(self, t):
        return DELIVER


def hysteresis_on_report(policy: HysteresisPolicy, earliness: int) -> str:
    return policy.on_report(earliness)


@dataclass
class BudgetPolicy:
    """Driver budget in ns, refilled from the critical task's earliness."""
    current_budget: int = 0
    equal_priority_mode: bool = True
    charge_isr: bool = False
    name: str = "budget"
    reports: int = 0

    def update(self, earliness_us: int) -> int:
        self.current_budget = max(0, int(earliness_us)) * 1000
        self.reports += 1
        return self.current_budget

    def can_spend(self, ns: int) -> bool:
        return self.current_budget >= ns

    def consume(self, ns: int) -> int:
        self.current_budget = max(0, self.current_budget - ns)
        return self.current_budget

    def on_irq(self, t):
        return DELIVER


def budget_update(policy: BudgetPolicy, earliness: int) -> int:
    return policy.update(earliness)


def budget_consume(policy: BudgetPolicy, dt_ns: int) -> int:
    return policy.consume(dt_ns)


@dataclass
class QueuePolicy:
    queue_capacity: int = 500
    name: str = "queue"

    def __post_init__(self):
        if self.queue_capacity <= 0:
            raise ValueError("queue_capacity must be > 0")

    def on_event(self, event: str) -> str:
        if event == "enqueue_failed":
            return DISABLE
        if event == "queue_emptied":
            return ENABLE
        raise ValueError(f"unknown queue event {event!r}")

    def on_irq(self, t):
        return DELIVER


def queue_on_event(policy: QueuePolicy, event: str) -> str:
    return policy.on_event(event)


def make_policy(name: str, **kw):
    table = {"none": NoPolicy, "burst": BurstPolicy, "hysteresis": HysteresisPolicy,
             "budget": BudgetPolicy, "queue": QueuePolicy}
    if name not in table:
        raise ValueError(f"unknown mitigation policy {name!r}")
    return table[name](**kw)
