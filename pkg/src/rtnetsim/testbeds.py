"""Wired-up simulated systems: the mitigation testbed and the receive-path testbed."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Optional

from . import mitigation as mit
from .nic import MultiQueueNic, NicCostModel, NicQueueConfig, irq_cost
from .rtos import BusyTask, Cpu, PeriodicTask, RtTask, Task, us_to_ns
from .rxpath import FlowSpec, Receiver, RxConfig, RxPath
from .sim import EventKind, Simulator
from .traffic import TraceRecord

US = 1_000_000


class PacketSource:
    """Feeds a time-sorted record iterator into `sink(pkt)` one event at a time."""

    def __init__(self, sim: Simulator, records: Iterable[TraceRecord], sink):
        self.sim = sim
        self.it: Iterator[TraceRecord] = iter(records)
        self.sink = sink
        self.sent = 0
        self._next()

    def _next(self):
        r = next(self.it, None)
        if r is not None:
            self.sim.at(max(r.t, self.sim.now), self._fire, EventKind.PACKET_ARRIVAL, r)

    def _fire(self, ev):
        self.sent += 1
        self.sink(ev.payload)
        self._next()


class SecondSampler:
    """Calls `snap(t_s)` at every full second up to `duration`."""

    def __init__(self, sim: Simulator, duration: int, snap):
        self.snap = snap
        for s in range(1, duration // US + 1):
            sim.at(s * US, lambda ev, s=s: snap(s - 1), EventKind.REPORT)


# --- mitigation testbed -------------------------------------------------------

@dataclass
class MitigationParams:
    isr_us: float = 2.5           # per-packet ISR
    driver_us: float = 10.0       # per-packet driver/stack work
    queue_size: int = 100         # driver input queue
    period_us: int = 10_000       # critical task period = deadline = target duration
    work_us: float = 8600.0
    critical_priority: int = 5
    driver_priority: int = 4
    quantum_us: int = 1000


class DriverTask(Task):
    kind = "net-task"

    def __init__(self, bed: "MitigationBed", priority):
        super().__init__("driver", priority)
        self.bed = bed
        self.sleeping = False

    def next_work(self):
        return self.bed._driver_next()


class MitigationBed:
    """Unmoderated NIC -> ISR -> driver queue -> driver task, beside one periodic critical task."""

    def __init__(self, sim: Simulator, params: MitigationParams, policy):
        self.sim = sim
        self.p = params
        self.policy = policy
        self.cpu = Cpu(sim, quantum_us=params.quantum_us)
        self.isr_ns = us_to_ns(params.isr_us)
        self.drv_ns = us_to_ns(params.driver_us)
        cap = policy.queue_capacity if isinstance(policy, mit.QueuePolicy) else params.queue_size
        self.capacity = cap
        self.queue = 0
        self.irq_enabled = True
        self.c = dict(sent=0, irqs=0, received=0, processed=0, masked=0, queue_drops=0)
        self.disabled_at: List[int] = []
        self.enabled_at: List[int] = []
        self.reports: List[tuple] = []
        self.driver_time_since_report = 0
        self.net_time_since_report = 0
        self.overruns = 0
        self.max_driver_between_reports = []
        crit = RtTask("critical", params.critical_priority, params.period_us, params.period_us,
                      params.work_us, "periodic-critical")
        self.critical = self.cpu.add(PeriodicTask(crit, on_cycle=self._report))
        self.driver = self.cpu.add(DriverTask(self, params.driver_priority))
        self.critical.start()

    # IRQ line
    def _set_irq(self, on: bool):
        if on == self.irq_enabled:
            return
        self.irq_enabled = on
        (self.enabled_at if on else self.disabled_at).append(self.sim.now)

    def on_packet(self, pkt):
        self.c["sent"] += 1
        if not self.irq_enabled:
            self.c["masked"] += 1
            return
        pol = self.policy
        if isinstance(pol, mit.BudgetPolicy) and pol.charge_isr:
            if not pol.can_spend(self.isr_ns):
                self._set_irq(False)
                self.c["masked"] += 1
                return
            pol.consume(self.isr_ns)
            self.net_time_since_report += self.isr_ns
        self.c["irqs"] += 1
        self.cpu.irq(self.isr_ns, self._isr_body, "isr")

    def _isr_body(self):
        t = self.sim.now
        pol = self.policy
        if isinstance(pol, mit.BurstPolicy):
            if pol.on_irq(t) == mit.DROP_AND_DISABLE:
                if self.irq_enabled:
                    self._set_irq(False)
                    self.sim.at(pol.disabled_until, lambda ev: self._set_irq(True))
                return
        if self.queue >= self.capacity:
            self.c["queue_drops"] += 1
            if isinstance(pol, mit.QueuePolicy) and pol.on_event("enqueue_failed") == mit.DISABLE:
                self._set_irq(False)
            return
        self.queue += 1
        self.c["received"] += 1
        self.driver.wake()

    # driver task
    def _driver_next(self):
        pol = self.policy
        if isinstance(pol, mit.HysteresisPolicy):
            if pol.blocked:
                # masking happens only when the driver itself gets to run
                self._set_irq(False)
                self._sleep(pol.poll_sleep)
                return None
            if not self.irq_enabled:
                self._set_irq(True)
        if self.queue == 0:
            return None
        if isinstance(pol, mit.BudgetPolicy):
            if not pol.can_spend(self.drv_ns):
                self._set_irq(False)
                return None
            pol.consume(self.drv_ns)
            self.driver_time_since_report += self.drv_ns
            self.net_time_since_report += self.drv_ns
        self.queue -= 1
        return self.drv_ns, self._processed

    def _sleep(self, us):
        d = self.driver
        if d.sleeping:
            return
        d.sleeping = True

        def wake(ev):
            d.sleeping = False
            d.wake()
        self.sim.after(us, wake)

    def _processed(self):
        self.c["processed"] += 1
        if self.queue == 0 and isinstance(self.policy, mit.QueuePolicy):
            if self.policy.on_event("queue_emptied") == mit.ENABLE:
                self._set_irq(True)

    # critical task reports
    def _report(self, rec):
        earliness = -rec.lateness
        pol = self.policy
        self.reports.append((self.sim.now, earliness))
        if isinstance(pol, mit.HysteresisPolicy):
            pol.on_report(earliness)
            if not pol.blocked:
                self.driver.wake()
        elif isinstance(pol, mit.BudgetPolicy):
            last = self.reports[-2][1] if len(self.reports) > 1 else 0
            self.max_driver_between_reports.append((self.driver_time_since_report, max(0, last) * 1000,
                                                    self.net_time_since_report))
            self.driver_time_since_report = 0
            self.net_time_since_report = 0
            pol.update(earliness)
            if pol.can_spend(self.drv_ns):
                self._set_irq(True)
                self.driver.wake()

    def totals(self) -> dict:
        d = dict(self.c)
        d["critical_cycles"] = len(self.critical.records)
        d["lateness_us"] = self.critical.total_lateness
        return d


def mitigation_params_for(policy_name: str, base: MitigationParams) -> MitigationParams:
    """Priority defaults per policy: budget shares one priority, the others favor the critical task."""
    from dataclasses import replace
    if policy_name == "budget":
        return replace(base, driver_priority=base.critical_priority)
    return base


# --- receive-path testbed -----------------------------------------------------

@dataclass
class ReceiverSpec:
    flow: str
    priority: int
    work_us: float = 0.0
    mailbox: int = 0


class RxBed:
    """Receive path with optional multiqueue NIC front-end, receivers, and a passive load probe."""

    def __init__(self, sim: Simulator, flows: List[FlowSpec], rx_cfg: RxConfig,
                 receivers: List[ReceiverSpec] = (), nic_queues: Optional[List[NicQueueConfig]] = None,
                 nic_cost: Optional[NicCostModel] = None, probe_priority: Optional[int] = None,
                 quantum_us: int = 1000, critical: Optional[RtTask] = None):
        self.sim = sim
        self.cpu = Cpu(sim, quantum_us=quantum_us)
        self.rx = RxPath(sim, self.cpu, flows, rx_cfg)
        self.receivers = {}
        for r in receivers:
            self.receivers[r.flow] = self.rx.add_receiver(r.flow, Receiver(r.flow, r.priority, r.work_us, r.mailbox))
        self.probe = None
        if probe_priority is not None:
            self.probe = self.cpu.add(BusyTask("probe", probe_priority))
        self.critical = None
        if critical is not None:
            self.critical = self.cpu.add(PeriodicTask(critical))
            self.critical.start()
        self.nic = None
        self.max_wait: Dict[int, int] = {}
        self.nic_cost = nic_cost or NicCostModel()
        if nic_queues is not None:
            self.nic = MultiQueueNic(sim, nic_queues, self._on_batch)
        for t in self.cpu.tasks:
            if isinstance(t, BusyTask):
                t.wake()

    def on_packet(self, pkt):
        if self.nic is not None:
            self.nic.receive(pkt)
        else:
            self.rx.on_packet(pkt)

    def _on_batch(self, batch):
        if batch.waits:
            self.max_wait[batch.queue_id] = max(self.max_wait.get(batch.queue_id, 0), max(batch.waits))
        isr_us, _ = irq_cost(batch, self.nic_cost)
        self.rx.on_batch(batch.packets, isr_us)

    def net_cpu_ns(self) -> int:
        """CPU time spent on networking (ISRs, protocol task, polling)."""
        return self.cpu.isr_ns + self.cpu.owner_ns("net") + self.cpu.owner_ns("poll")
