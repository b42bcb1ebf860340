"""Multiqueue NIC: port filter table, per-queue interrupt moderation, buffer swap, cost model."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional

from .sim import EventKind, Simulator
from .traffic import TraceRecord

DROP = -1
DEFAULT_PORT = 0  # sentinel for non-transport frames (ARP and friends)

REASONS = ("packet-timer", "absolute-timer", "counter", "immediate", "flush")


@dataclass
class NicQueueConfig:
    queue_id: int
    dst_port: int = 0
    n_q: int = 128
    t_abs: int = 0
    t_pack: int = 0
    counter_threshold: int = 0
    r_max: float = 0.0
    periodic_abs: bool = False  # free-running absolute timer instead of first-packet arming

    def __post_init__(self):
        if self.n_q <= 0:
            raise ValueError(f"queue {self.queue_id}: n_q must be > 0")
        if min(self.t_abs, self.t_pack, self.counter_threshold) < 0:
            raise ValueError(f"queue {self.queue_id}: negative moderation parameter")
        if not 0 <= self.dst_port <= 0xFFFF:
            raise ValueError(f"queue {self.queue_id}: dst_port out of range")

    @property
    def unmoderated(self) -> bool:
        return self.t_abs == 0 and self.t_pack == 0 and self.counter_threshold == 0


_WIDTHS = {"id": 16, "buffer_length": 16, "front_addr": 32, "back_addr": 32, "offset": 16}


@dataclass
class FilterTableEntry:
    """One row of the on-NIC filter table. buffer_length and offset count descriptor slots."""
    id: int
    buffer_length: int
    front_addr: int
    back_addr: int
    offset: int = 0

    def __post_init__(self):
        self.check()

    def check(self):
        for name, bits in _WIDTHS.items():
            v = getattr(self, name)
            if not 0 <= v < (1 << bits):
                raise ValueError(f"{name}={v} does not fit in {bits} bits")
        if self.offset > self.buffer_length:
            raise ValueError("offset exceeds buffer_length")

    def swap(self):
        self.front_addr, self.back_addr = self.back_addr, self.front_addr
        self.offset = 0


@dataclass
class NicCostModel:
    d_l: float = 0.0     # µs per byte, ISR side
    d_c: float = 0.0     # µs per interrupt
    task_d_l: float = 0.0
    task_d_c: float = 0.0

    def __post_init__(self):
        if min(self.d_l, self.d_c, self.task_d_l, self.task_d_c) < 0:
            raise ValueError("cost parameters must be >= 0")


@dataclass
class IrqBatch:
    queue_id: int
    packets: List[TraceRecord]
    fired_at: int
    reason: str
    arrivals: List[int] = field(default_factory=list)

    @property
    def waits(self) -> List[int]:
        return [self.fired_at - a for a in self.arrivals]


def irq_cost(batch: IrqBatch, model: NicCostModel):
    total = sum(p.length for p in batch.packets)
    return model.d_c + model.d_l * total, model.task_d_c + model.task_d_l * total


def nic_memory_bytes(m: int) -> int:
    """Register memory for m moderated table entries plus one default-flow entry."""
    if m < 1:
        raise ValueError("need at least one queue")
    return m * 30 + 14


def classify(pkt: TraceRecord, table: Dict[int, int], default_queue: Optional[int] = None) -> int:
    """Queue id for the packet, or DROP for unregistered transport ports."""
    if pkt.dst_port == DEFAULT_PORT:
        return DROP if default_queue is None else default_queue
    return table.get(pkt.dst_port, DROP)


@dataclass
class Violation:
    queue_id: int
    rule: str
    lhs: float
    rhs: float

    def __str__(self):
        return f"queue {self.queue_id}: {self.rule} violated ({self.lhs:g} > {self.rhs:g})"


def wcpd(configs: Iterable[NicQueueConfig], t_netstack: float) -> float:
    return t_netstack * sum(c.n_q for c in configs)


def queue_fill_time(cfg: NicQueueConfig) -> float:
    """µs until a queue fills at its expected maximum rate (inf if no rate given)."""
    if cfg.r_max <= 0:
        return float("inf")
    return cfg.n_q / cfg.r_max * 1e6


def validate_config(configs: List[NicQueueConfig], t_netstack: float,
                    t_d: Dict[int, float], t_p: Optional[Dict[int, float]] = None) -> List[Violation]:
    """Check timer bounds against the burst drain delay; returns violations (empty = ok)."""
    out = []
    w = wcpd(configs, t_netstack)
    t_p = t_p or {}
    for c in configs:
        if c.unmoderated:
            continue
        if c.t_abs > 0:
            limit = max(t_d.get(c.queue_id, 0.0), queue_fill_time(c)) - w
            if c.t_abs > limit:
                out.append(Violation(c.queue_id, "t_abs <= max(t_d, t_qf) - WCPD", c.t_abs, limit))
        if c.t_pack > 0:
            tp = t_p.get(c.queue_id)
            if tp is not None and tp > c.t_pack:
                out.append(Violation(c.queue_id, "t_P <= t_pack", tp, c.t_pack))
            if c.t_abs > 0 and c.t_pack > c.t_abs:
                out.append(Violation(c.queue_id, "t_pack <= t_abs", c.t_pack, c.t_abs))
    return out


class NicQueue:
    """Moderation state machine of one queue. Timers are plain deadlines here;
    the caller fires due timers (on_timer) before handing in an arrival at the same instant."""

    _next_base = 0x4000_0000

    def __init__(self, cfg: NicQueueConfig):
        self.cfg = cfg
        base = NicQueue._next_base
        NicQueue._next_base = (base + 0x0002_0000) & 0xFFFF_FFFF
        self.entry = FilterTableEntry(cfg.dst_port, cfg.n_q, base, base + 0x1_0000)
        self.buf: List[TraceRecord] = []
        self.arr: List[int] = []
        self.pkt_deadline: Optional[int] = None
        self.abs_deadline: Optional[int] = None
        self.origin = 0
        self.arrivals = 0
        self.dropped_full = 0
        self.delivered = 0
        self.irqs = 0
        self.swaps = 0

    def next_deadline(self) -> Optional[int]:
        ds = [d for d in (self.pkt_deadline, self.abs_deadline) if d is not None]
        return min(ds) if ds else None

    def on_arrival(self, pkt: TraceRecord, t: int) -> Optional[IrqBatch]:
        cfg = self.cfg
        self.arrivals += 1
        if len(self.buf) >= cfg.n_q:
            self.dropped_full += 1
            return None
        self.buf.append(pkt)
        self.arr.append(t)
        self.entry.offset = len(self.buf)
        if cfg.unmoderated:
            return self._fire(t, "immediate")
        if cfg.counter_threshold and len(self.buf) >= cfg.counter_threshold:
            return self._fire(t, "counter")
        if cfg.t_pack:
            self.pkt_deadline = t + cfg.t_pack
        if cfg.t_abs and self.abs_deadline is None:
            if cfg.periodic_abs:
                k = (t - self.origin) // cfg.t_abs + 1
                self.abs_deadline = self.origin + k * cfg.t_abs
            else:
                self.abs_deadline = t + cfg.t_abs
        return None

    def on_timer(self, t: int) -> Optional[IrqBatch]:
        reason = None
        if self.abs_deadline is not None and self.abs_deadline <= t:
            reason = "absolute-timer"
        elif self.pkt_deadline is not None and self.pkt_deadline <= t:
            reason = "packet-timer"
        if reason is None:
            return None
        if not self.buf:
            self.pkt_deadline = self.abs_deadline = None
            return None
        return self._fire(t, reason)

    def flush(self, t: int) -> Optional[IrqBatch]:
        if not self.buf:
            return None
        return self._fire(t, "flush")

    def _fire(self, t, reason) -> IrqBatch:
        b = IrqBatch(self.cfg.queue_id, self.buf, t, reason, self.arr)
        self.buf, self.arr = [], []
        self.pkt_deadline = self.abs_deadline = None
        self.entry.swap()
        self.swaps += 1
        self.irqs += 1
        self.delivered += len(b.packets)
        return b


class MultiQueueNic:
    """Filter table plus queues, driven by simulator events. `on_batch(batch)` models the IRQ line."""

    def __init__(self, sim: Simulator, configs: List[NicQueueConfig], on_batch=None):
        self.sim = sim
        self.on_batch = on_batch
        self.queues: Dict[int, NicQueue] = {}
        self.table: Dict[int, int] = {}
        self.default_queue: Optional[int] = None
        self.arrivals = 0
        self.dropped_unmatched = 0
        self.batches = 0
        self._eids: Dict[int, Optional[int]] = {}
        self._armed: Dict[int, Optional[int]] = {}
        self.retired: List[NicQueue] = []
        for c in configs:
            self.add_queue(c)

    # configuration (socket bind / unbind)
    def add_queue(self, cfg: NicQueueConfig):
        if cfg.queue_id in self.queues:
            raise ValueError(f"queue {cfg.queue_id} already configured")
        q = NicQueue(cfg)
        q.origin = self.sim.now
        self.queues[cfg.queue_id] = q
        if cfg.dst_port == DEFAULT_PORT:
            self.default_queue = cfg.queue_id
        else:
            if cfg.dst_port in self.table:
                raise ValueError(f"port {cfg.dst_port} already registered")
            self.table[cfg.dst_port] = cfg.queue_id
        self._eids[cfg.queue_id] = None
        self._armed[cfg.queue_id] = None
        return q

    def remove_queue(self, qid: int):
        q = self.queues.pop(qid)
        if q.cfg.dst_port == DEFAULT_PORT:
            self.default_queue = None
        else:
            del self.table[q.cfg.dst_port]
        self.sim.cancel(self._eids.pop(qid))
        self._armed.pop(qid)
        b = q.flush(self.sim.now)
        if b is not None:
            self._deliver(b)
        self.retired.append(q)
        return q

    def all_queues(self):
        return list(self.queues.values()) + self.retired

    # data path
    def receive(self, pkt: TraceRecord):
        self.arrivals += 1
        qid = classify(pkt, self.table, self.default_queue)
        if qid == DROP:
            self.dropped_unmatched += 1
            return
        q = self.queues[qid]
        t = self.sim.now
        b = q.on_timer(t)  # a timer due at this very instant goes first
        if b is not None:
            self._deliver(b)
        b = q.on_arrival(pkt, t)
        if b is not None:
            self._deliver(b)
        self._rearm(q)

    def _rearm(self, q: NicQueue):
        qid = q.cfg.queue_id
        dl = q.next_deadline()
        if dl == self._armed[qid] and (dl is None or self.sim.is_pending(self._eids[qid])):
            return
        self.sim.cancel(self._eids[qid])
        self._armed[qid] = dl
        self._eids[qid] = None if dl is None else self.sim.at(dl, self._timer, EventKind.TIMER_EXPIRY, qid)

    def _timer(self, ev):
        q = self.queues.get(ev.payload)
        if q is None:
            return
        self._eids[ev.payload] = None
        self._armed[ev.payload] = None
        b = q.on_timer(self.sim.now)
        if b is not None:
            self._deliver(b)
        self._rearm(q)

    def _deliver(self, b: IrqBatch):
        self.batches += 1
        if self.on_batch is not None:
            self.on_batch(b)

    # accounting
    def counters(self) -> dict:
        qs = self.all_queues()
        held = sum(len(q.buf) for q in qs)
        return {
            "arrivals": self.arrivals,
            "delivered": sum(q.delivered for q in qs),
            "dropped_unmatched": self.dropped_unmatched,
            "dropped_full": sum(q.dropped_full for q in qs),
            "held": held,
            "irqs": sum(q.irqs for q in qs),
        }


def replay(configs: List[NicQueueConfig], records: Iterable[TraceRecord], until: Optional[int] = None):
    """Run a trace through a NIC without any CPU model; returns (nic, batches)."""
    sim = Simulator()
    batches: List[IrqBatch] = []
    nic = MultiQueueNic(sim, configs, batches.append)
    last = 0
    for r in records:
        sim.at(r.t, lambda ev: nic.receive(ev.payload), EventKind.PACKET_ARRIVAL, r)
        last = r.t
    horizon = until if until is not None else last + max([c.t_abs + c.t_pack for c in configs] + [0]) + 1
    sim.run_until(horizon)
    return nic, batches
