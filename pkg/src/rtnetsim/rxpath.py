"""Software receive path: eager ISR demultiplexing, per-flow queues, inherited
protocol-task priority, per-flow and global rate limits with a polling fallback."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

from .rtos import Cpu, ServerSpec, Task, make_server, us_to_ns
from .sim import EventKind, Simulator
from .traffic import TraceRecord

REGULAR = "regular"
SHORTCIRCUIT = "shortcircuit"
RECYCLE_THEN_ENQUEUE = "recycle_then_enqueue"
FLOW_REJECT = "flow_reject"
NO_SOCKET = "no_socket"

BACKGROUND_PRIORITY = 0


@dataclass
class FlowSpec:
    name: str
    dst_port: int
    priority: int
    t_p: int = 0
    src: str = ""
    server: Optional[ServerSpec] = None   # e packets per p µs

    def __post_init__(self):
        if self.t_p < 0:
            raise ValueError("t_p must be >= 0")


@dataclass
class RxCostModel:
    """Per-packet stage costs in µs."""
    isr_classify: float = 0.8
    isr_cache_hdr: float = 0.82
    deferred_driver: float = 5.28
    ip_task: float = 5.6
    prio_change: float = 0.2
    recycle: float = 0.13

    def __post_init__(self):
        for k, v in vars(self).items():
            if v < 0:
                raise ValueError(f"{k} must be >= 0")

    @property
    def eager(self) -> float:
        return self.isr_classify + self.isr_cache_hdr

    @property
    def full(self) -> float:
        return self.eager + self.deferred_driver + self.ip_task


# Modified stacks: the header cache line is invalidated in the ISR, the rest is deferred.
COSTS = {
    "freertos-tcp": RxCostModel(0.8, 0.82, 5.28, 5.6, 0.2, 0.13),
    "lwip": RxCostModel(2.5, 1.67, 4.17, 6.82, 0.2, 0.13),
}
# Unmodified stacks: plain ISR, all cache work in the deferred handler.
BASELINE_COSTS = {
    "freertos-tcp": RxCostModel(0.8, 0.0, 6.1, 5.6, 0.0, 0.0),
    "lwip": RxCostModel(2.5, 0.0, 1.67 + 4.17, 6.82, 0.0, 0.0),
}


class DiffFlowQueues:
    """Per-priority FIFOs sharing one buffer pool (the BD ring)."""

    def __init__(self, pool_size: int = 64, recycle_threshold: float = 0.5):
        if pool_size <= 0:
            raise ValueError("pool_size must be > 0")
        if not 0 < recycle_threshold <= 1:
            raise ValueError("recycle_threshold must be in (0, 1]")
        self.pool_size = pool_size
        self.recycle_threshold = recycle_threshold
        self.bd_free = pool_size
        self.by_prio: Dict[int, deque] = {}
        self.recycled = 0

    def __len__(self):
        return self.pool_size - self.bd_free

    @property
    def below_threshold(self) -> bool:
        return self.bd_free <= self.recycle_threshold * self.pool_size

    def highest(self) -> Optional[int]:
        ks = [p for p, q in self.by_prio.items() if q]
        return max(ks) if ks else None

    def lowest(self) -> Optional[int]:
        ks = [p for p, q in self.by_prio.items() if q]
        return min(ks) if ks else None

    def enqueue(self, flow: FlowSpec, pkt, t: int):
        if self.bd_free <= 0:
            raise RuntimeError("no free buffer")
        self.bd_free -= 1
        self.by_prio.setdefault(flow.priority, deque()).append((flow, pkt, t))

    def recycle_lowest(self):
        """Give back the newest buffer of the lowest waiting priority."""
        lo = self.lowest()
        item = self.by_prio[lo].pop()
        self.bd_free += 1
        self.recycled += 1
        return item

    def pop_highest(self):
        hi = self.highest()
        if hi is None:
            return None
        self.bd_free += 1
        return self.by_prio[hi].popleft()

    def waiting_priorities(self):
        return [p for p, q in self.by_prio.items() if q]


def eager_isr(flow: FlowSpec, pkt, t: int, queues: DiffFlowQueues, flow_server=None,
              shortcircuit: bool = True) -> str:
    """Decide (and apply) the eager driver path for one classified packet."""
    if flow_server is not None and not flow_server.try_take(1, t):
        return FLOW_REJECT
    if queues.below_threshold:
        lo = queues.lowest()
        if lo is None or flow.priority <= lo:
            if shortcircuit or lo is None:
                return SHORTCIRCUIT
        queues.recycle_lowest()
        queues.enqueue(flow, pkt, t)
        return RECYCLE_THEN_ENQUEUE
    queues.enqueue(flow, pkt, t)
    return REGULAR


def net_task_priority(waiting, in_processing=None, resting=None):
    """max priority over waiting and in-processing packets; `resting` when there are none."""
    ps = list(waiting)
    if in_processing is not None:
        ps.append(in_processing)
    return max(ps) if ps else resting


class Receiver(Task):
    """Application task bound to one socket; spends `work_us` per packet."""

    def __init__(self, name, priority, work_us: float = 0.0, mailbox: int = 0):
        super().__init__(name, priority)
        self.work_ns = us_to_ns(work_us)
        self.capacity = mailbox  # 0 = unbounded
        self.mailbox = deque()
        self.delivered = 0
        self.dropped = 0
        self.processed = 0
        self.processed_at = []

    def deliver(self, pkt):
        if self.capacity and len(self.mailbox) >= self.capacity:
            self.dropped += 1
            return False
        self.delivered += 1
        self.mailbox.append(pkt)
        self.wake()
        return True

    def next_work(self):
        if not self.mailbox:
            return None
        self.mailbox.popleft()
        return self.work_ns, self._done

    def _done(self):
        self.processed += 1
        self.processed_at.append(self.cpu.sim.now)


class NetTask(Task):
    """Protocol task: deferred driver stage, then IP stage, one packet at a time."""

    kind = "net-task"

    def __init__(self, rx: "RxPath", priority):
        super().__init__("net", priority)
        self.rx = rx
        self.cur = None
        self.stage = 0

    def next_work(self):
        rx = self.rx
        if self.cur is not None and self.stage == 1:
            return us_to_ns(rx.cost.ip_task), self._ip_done
        item = rx._dequeue()
        if item is None:
            return None
        self.cur = item
        self.stage = 1
        return us_to_ns(rx.cost.deferred_driver), None

    def _ip_done(self):
        flow, pkt = self.cur[0], self.cur[1]
        self.cur = None
        self.stage = 0
        self.rx._delivered(flow, pkt)


class PollTask(Task):
    def __init__(self, priority):
        super().__init__("poll", priority)
        self.jobs = deque()

    def next_work(self):
        return self.jobs.popleft() if self.jobs else None


@dataclass
class RxConfig:
    mode: str = "diff"                  # "diff" (demultiplexing stack) or "baseline"
    stack: str = "freertos-tcp"
    cost: Optional[RxCostModel] = None
    pool_size: int = 64
    recycle_threshold: float = 0.5
    shortcircuit: bool = True
    net_priority: int = 1               # fixed priority (baseline) / resting priority (diff)
    frame_queue: int = 32               # baseline FIFO capacity
    global_limit: Optional[ServerSpec] = None
    poll_ring: int = 256
    poll_priority: Optional[int] = None

    def resolved_cost(self) -> RxCostModel:
        if self.cost is not None:
            return self.cost
        table = COSTS if self.mode == "diff" else BASELINE_COSTS
        return table[self.stack]


class RxPath:
    def __init__(self, sim: Simulator, cpu: Cpu, flows: List[FlowSpec], cfg: Optional[RxConfig] = None):
        self.sim, self.cpu = sim, cpu
        self.cfg = cfg = cfg or RxConfig()
        if cfg.mode not in ("diff", "baseline"):
            raise ValueError(f"unknown rx mode {cfg.mode!r}")
        self.cost = cfg.resolved_cost()
        self.flows = {f.dst_port: f for f in flows}
        self.background = FlowSpec("background", 0, BACKGROUND_PRIORITY)
        self.default_flow = FlowSpec("default", 0, cfg.net_priority)
        self.flow_servers = {f.name: make_server(f.server) for f in flows if f.server is not None}
        self.queues = DiffFlowQueues(cfg.pool_size, cfg.recycle_threshold)
        self.fifo = deque()
        self.receivers: Dict[str, Receiver] = {}
        self.resting = cfg.net_priority
        self.net = cpu.add(NetTask(self, cfg.net_priority))
        self.paths: Dict[str, int] = {}
        self.sent_by_flow: Dict[str, int] = {}
        self.delivered_by_flow: Dict[str, int] = {}
        self.dropped_frames = 0
        self.prio_raises = 0
        self.isr_ns = 0
        # global limit / polling
        self.mode = "isr"
        self.mode_switches = 0
        self.poll_dropped = 0
        self.hw_ring = deque()
        self.global_server = make_server(cfg.global_limit) if cfg.global_limit else None
        self.poll = None
        if self.global_server is not None:
            pp = cfg.poll_priority if cfg.poll_priority is not None else max(
                [f.priority for f in flows] + [cfg.net_priority])
            self.poll = cpu.add(PollTask(pp))

    # wiring
    def add_receiver(self, flow_name: str, rcv: Receiver):
        self.receivers[flow_name] = self.cpu.add(rcv)
        return rcv

    def flow_of(self, pkt: TraceRecord) -> Optional[FlowSpec]:
        if pkt.fragmented:
            return self.background
        if pkt.dst_port == 0:
            return self.default_flow
        return self.flows.get(pkt.dst_port)

    # arrivals
    def on_packet(self, pkt: TraceRecord):
        """One IRQ per packet (conventional NIC)."""
        f = self.flow_of(pkt)
        name = f.name if f else "unmatched"
        self.sent_by_flow[name] = self.sent_by_flow.get(name, 0) + 1
        if self.global_server is not None:
            if self.mode == "polling":
                self._ring(pkt)
                return
            if not self.global_server.try_take(1, self.sim.now):
                self._enter_polling()
                self._ring(pkt)
                return
        self.cpu.irq(self._isr_cost_fn([pkt]), None, "isr")

    def on_batch(self, pkts: List[TraceRecord], irq_overhead_us: float = 0.0):
        """One IRQ for a batch handed over by a moderating NIC."""
        for p in pkts:
            f = self.flow_of(p)
            name = f.name if f else "unmatched"
            self.sent_by_flow[name] = self.sent_by_flow.get(name, 0) + 1
        self.cpu.irq(self._isr_cost_fn(pkts, us_to_ns(irq_overhead_us)), None, "isr")

    def _isr_cost_fn(self, pkts, extra_ns=0):
        # evaluated when the ISR starts, so decisions see the state at that instant
        def run():
            ns = extra_ns
            for p in pkts:
                ns += self._eager(p)
            self.isr_ns += ns
            return ns
        return run

    def _eager(self, pkt) -> int:
        cost = self.cost
        t = self.sim.now
        f = self.flow_of(pkt)
        if self.cfg.mode == "baseline":
            f = f or FlowSpec("unmatched", pkt.dst_port, BACKGROUND_PRIORITY)
            if len(self.fifo) >= self.cfg.frame_queue:
                self.dropped_frames += 1
                path = "frame_queue_full"
            else:
                self.fifo.append((f, pkt, t))
                self.net.wake()
                path = REGULAR
            self.paths[path] = self.paths.get(path, 0) + 1
            return us_to_ns(cost.eager)
        if f is None:
            self.paths[NO_SOCKET] = self.paths.get(NO_SOCKET, 0) + 1
            return us_to_ns(cost.isr_classify)
        before = self._inherited()
        path = eager_isr(f, pkt, t, self.queues, self.flow_servers.get(f.name), self.cfg.shortcircuit)
        self.paths[path] = self.paths.get(path, 0) + 1
        ns = us_to_ns(cost.eager)
        if path == RECYCLE_THEN_ENQUEUE:
            ns += us_to_ns(cost.recycle)
        if path in (REGULAR, RECYCLE_THEN_ENQUEUE):
            if f.priority > before:
                ns += us_to_ns(cost.prio_change)
                self.prio_raises += 1
            self._reprioritize()
            self.net.wake()
        return ns

    # protocol task side
    def _inherited(self):
        cur = self.net.cur[0].priority if self.net.cur is not None else None
        return net_task_priority(self.queues.waiting_priorities(), cur, self.resting)

    def _reprioritize(self):
        if self.cfg.mode == "diff":
            self.cpu.set_priority(self.net, self._inherited())

    def _dequeue(self):
        if self.cfg.mode == "baseline":
            return self.fifo.popleft() if self.fifo else None
        return self.queues.pop_highest()

    def _delivered(self, flow: FlowSpec, pkt):
        self.delivered_by_flow[flow.name] = self.delivered_by_flow.get(flow.name, 0) + 1
        r = self.receivers.get(flow.name)
        if r is not None:
            r.deliver(pkt)
        self._reprioritize()

    # global limit
    def _ring(self, pkt):
        if len(self.hw_ring) >= self.cfg.poll_ring:
            self.poll_dropped += 1
        else:
            self.hw_ring.append(pkt)

    def _enter_polling(self):
        self.mode = "polling"
        self.mode_switches += 1
        p = self.cfg.global_limit.p
        nxt = (self.sim.now // p + 1) * p
        self.sim.at(nxt, self._poll_tick, EventKind.TIMER_EXPIRY)

    def _poll_tick(self, ev):
        spec = self.cfg.global_limit
        t = self.sim.now
        pending = len(self.hw_ring)
        take = min(pending, spec.e)
        batch = [self.hw_ring.popleft() for _ in range(take)]
        for _ in range(take):
            self.global_server.try_take(1, t)
        if batch:
            self.poll.jobs.append((us_to_ns(self.cost.eager) * len(batch), lambda b=batch: self._poll_apply(b)))
            self.poll.wake()
        if pending < spec.e:
            # budget not used up right at the period start: back to interrupts
            self.mode = "isr"
            self.mode_switches += 1
        else:
            self.sim.at(t + spec.p, self._poll_tick, EventKind.TIMER_EXPIRY)

    def _poll_apply(self, batch):
        for p in batch:
            self._eager(p)

    def global_limit(self, t: int = 0) -> str:
        return self.mode
