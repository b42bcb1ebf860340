"""Self-managing offloading: every edge node runs its own scheduler and one worker.

Nodes trade densities over a shared wired LAN, advertise themselves to clients
periodically, and forward requests they cannot take to the least-loaded peer
they know of. Clients talk to the closest node they have heard from and fall
back to the next one when a request goes unanswered.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

from ..sim import EventKind, Simulator
from .core import MS, LatencyModel, OffloadTask, adjust_deadline, edf_feasible, edf_order, normal_ms, precheck, queue_density

SEC = 1_000_000
CLOSEST = 3

PENDING, ACCEPTED, REJECTED, TIMED_OUT, LOST = "pending", "accepted", "rejected", "timeout", "lost"


@dataclass
class DistConfig:
    clients: int = 30
    nodes: int = 4
    uncertainty: float = 1.0
    wcet_ms: float = 100.0
    laxity_mean_ms: float = 200.0
    laxity_var_ms: float = 67.0
    client_latency: LatencyModel = field(default_factory=lambda: LatencyModel(5.0, 1.0))
    client_spread_ms: float = 4.0       # per (client, node) extra mean delay, uniform in [0, spread)
    wired: LatencyModel = field(default_factory=lambda: LatencyModel(0.5, 0.01))
    lan_msg_us: int = 100               # serialization cost of one message on the shared LAN
    advert_period_ms: float = 1000.0
    density_period_ms: float = 1000.0
    response_timeout_ms: float = 50.0
    conn_setup_factor: float = 1.5
    submit_rate: float = 1.0
    duration_s: float = 30.0
    drain_s: float = 5.0
    kill_node: Optional[int] = None
    kill_at_s: float = 7.0

    def __post_init__(self):
        if self.nodes < 1 or self.clients < 1:
            raise ValueError("need at least one node and one client")
        if self.kill_node is not None and not 0 <= self.kill_node < self.nodes:
            raise ValueError(f"kill_node {self.kill_node} is not a node id")


@dataclass
class DistOutcomes:
    submitted: int = 0
    accepted: int = 0
    rejected: int = 0
    timeouts: int = 0
    lost: int = 0
    success: int = 0
    missed: int = 0
    forwards: int = 0
    fallbacks: int = 0
    dead_forwards: int = 0
    stray_responses: int = 0
    messages: int = 0
    comm_delay_us: List[int] = field(default_factory=list)
    e2e_us: List[int] = field(default_factory=list)
    lost_at_kill: int = -1

    @property
    def acceptance(self) -> float:
        return self.accepted / self.submitted if self.submitted else 0.0

    @property
    def mean_comm_delay_ms(self) -> float:
        d = self.comm_delay_us
        return sum(d) / len(d) / MS if d else 0.0

    @property
    def mean_e2e_ms(self) -> float:
        d = self.e2e_us
        return sum(d) / len(d) / MS if d else 0.0


class Lan:
    """Single shared wire: messages serialize FIFO, then see a sampled propagation delay."""

    def __init__(self, sim: Simulator, cfg: DistConfig):
        self.sim = sim
        self.cost = cfg.lan_msg_us
        self.model = cfg.wired
        self.rng = sim.rng("lan")
        self.busy_until = 0
        self.sent = 0

    def delay(self) -> int:
        start = max(self.sim.now, self.busy_until)
        self.busy_until = start + self.cost
        self.sent += 1
        return self.busy_until - self.sim.now + self.model.sample(self.rng)


@dataclass
class Request:
    task: OffloadTask
    origin: int
    visited: list
    sent_at: int
    adjusted: bool = False


class Node:
    def __init__(self, nid: int):
        self.id = nid
        self.alive = True
        self.known: Dict[int, float] = {}
        self.queue: List[OffloadTask] = []
        self.running: Optional[OffloadTask] = None
        self.started = 0
        self.finish_ev = None

    def sync(self, now):
        if self.running is not None:
            self.running.elapsed += now - self.started
            self.started = now

    def density(self, now) -> float:
        self.sync(now)
        return queue_density(self.queue, now)


class Client:
    def __init__(self, cid: int, sim: Simulator):
        self.id = cid
        self.closest: List[tuple] = []   # (latency µs, node id), ascending
        self.gap = sim.rng(f"client{cid}/gap")
        self.lax = sim.rng(f"client{cid}/laxity")
        self.cs = sim.rng(f"client{cid}/setup")
        self.link = sim.rng(f"client{cid}/link")
        self.last_submit = 0
        self.timeout_ev = None
        self.giveup_ev = None
        self.current: Optional[OffloadTask] = None
        self.tried: list = []


def update_closest(closest: List[tuple], node: int, latency: int, keep: int = CLOSEST) -> List[tuple]:
    """Insert or refresh `node` in a latency-sorted list capped at `keep` entries."""
    out = [e for e in closest if e[1] != node]
    out.append((latency, node))
    out.sort()
    return out[:keep]


class DistributedSim:
    def __init__(self, cfg: DistConfig, seed: int = 0):
        self.cfg = cfg
        self.sim = Simulator(seed)
        self.out = DistOutcomes()
        self.lan = Lan(self.sim, cfg)
        self.nodes = [Node(i) for i in range(cfg.nodes)]
        self.clients = [Client(c, self.sim) for c in range(cfg.clients)]
        spread = self.sim.rng("topology")
        self.pair_mean = [[cfg.client_latency.mean + spread.uniform(0, cfg.client_spread_ms)
                           for _ in range(cfg.nodes)] for _ in range(cfg.clients)]
        self.state: Dict[int, str] = {}
        self.where: Dict[int, int] = {}
        self.conn_ready: Dict[int, int] = {}
        self.end = int(cfg.duration_s * SEC)
        self._ids = 0
        self._join()
        for c in self.clients:
            self._plan_next(c, 0)
        if cfg.kill_node is not None:
            self.sim.at(int(cfg.kill_at_s * SEC), lambda ev: self.kill(cfg.kill_node), EventKind.NODE_MESSAGE)

    # links
    def _wireless(self, c: Client, nid: int) -> int:
        return LatencyModel(self.pair_mean[c.id][nid], self.cfg.client_latency.variance).sample(c.link)

    def _to_node(self, nid: int, fn, delay: int):
        def deliver(ev):
            node = self.nodes[nid]
            if node.alive:
                fn(node)
        self.out.messages += 1
        self.sim.after(delay, deliver, EventKind.NODE_MESSAGE)

    def _to_client(self, c: Client, fn, delay: int):
        self.out.messages += 1
        self.sim.after(delay, lambda ev: fn(c), EventKind.NODE_MESSAGE)

    # membership, densities, adverts
    def _join(self):
        for n in self.nodes:
            n.known = {m.id: 0.0 for m in self.nodes if m.id != n.id}
        for n in self.nodes:
            self._advert(n)
            self.sim.after(int(self.cfg.density_period_ms * MS),
                           lambda ev, n=n: self._periodic_density(n), EventKind.REPORT)

    def broadcast_density(self, node: Node):
        d = node.density(self.sim.now)
        for peer in list(node.known):
            self._to_node(peer, lambda p, src=node.id: p.known.__setitem__(src, d), self.lan.delay())

    def _periodic_density(self, node: Node):
        if not node.alive:
            return
        self.broadcast_density(node)
        self.sim.after(int(self.cfg.density_period_ms * MS), lambda ev: self._periodic_density(node), EventKind.REPORT)

    def _advert(self, node: Node):
        if not node.alive:
            return
        lan = self.lan.delay()
        for c in self.clients:
            lat = lan + self._wireless(c, node.id)

            def hear(cl, nid=node.id, lat=lat):
                cl.closest = update_closest(cl.closest, nid, lat)
            self._to_client(c, hear, lat)
        self.sim.after(int(self.cfg.advert_period_ms * MS), lambda ev: self._advert(node), EventKind.REPORT)

    def kill(self, nid: int):
        node = self.nodes[nid]
        node.alive = False
        if node.finish_ev is not None:
            self.sim.cancel(node.finish_ev)
        self.out.lost_at_kill = len(node.queue)
        for t in node.queue:
            self.state[t.id] = LOST
        node.queue, node.running = [], None

    # clients
    def _plan_next(self, c: Client, free_at: int):
        gap = int(round(c.gap.exponential(1.0 / self.cfg.submit_rate) * SEC))
        t = max(c.last_submit + gap, free_at, self.sim.now)
        c.last_submit = t
        if t < self.end:
            self.sim.at(t, lambda ev: self._submit(c), EventKind.NODE_MESSAGE)

    def _submit(self, c: Client):
        cfg, now = self.cfg, self.sim.now
        wcet = int(cfg.wcet_ms * MS)
        rel = wcet + normal_ms(c.lax, cfg.laxity_mean_ms, cfg.laxity_var_ms)
        setup = int(round(cfg.conn_setup_factor * cfg.client_latency.sample(c.cs)))
        task = OffloadTask(client=c.id, deadline=now + rel, rel_deadline=rel, conn_setup=setup,
                           wcet=wcet, id=self._ids, created=now, seq=self._ids)
        self._ids += 1
        self.out.submitted += 1
        self.state[task.id] = PENDING
        c.current, c.tried = task, []
        self._attempt(c)

    def _attempt(self, c: Client):
        task = c.current
        options = [nid for _, nid in c.closest if nid not in c.tried]
        if not options:
            self._resolve(c, TIMED_OUT if c.tried else REJECTED)
            return
        nid = options[0]
        if c.tried:
            self.out.fallbacks += 1
        c.tried.append(nid)
        up = self._wireless(c, nid) + self.lan.delay()
        # each attempt carries a pristine copy; a slow node may still take the earlier one
        req = Request(replace(task), nid, [nid], self.sim.now)
        self._to_node(nid, lambda n: self._on_request(n, req), up)
        c.timeout_ev = self.sim.after(int(self.cfg.response_timeout_ms * MS),
                                      lambda ev: self._timeout(c, task), EventKind.TIMER_EXPIRY)

    @staticmethod
    def _is_current(c: Client, task) -> bool:
        return c.current is not None and c.current.id == task.id

    def _timeout(self, c: Client, task):
        if not self._is_current(c, task):
            return
        if self.state[task.id] == LOST:
            self._done(c, task)
            return
        if self.state[task.id] != PENDING:
            return
        c.closest = [e for e in c.closest if e[1] != c.tried[-1]]
        self._attempt(c)

    def _resolve(self, c: Client, outcome: str):
        task = c.current
        self.sim.cancel(c.timeout_ev)
        self.state[task.id] = outcome
        if outcome == ACCEPTED:
            c.giveup_ev = self.sim.at(max(self.sim.now, task.orig_deadline) + int(self.cfg.response_timeout_ms * MS),
                                      lambda ev: self._done(c, task), EventKind.TIMER_EXPIRY)
        else:
            self._done(c, task)

    def _done(self, c: Client, task):
        if not self._is_current(c, task):
            return
        self.sim.cancel(c.giveup_ev)
        c.current = None
        self._plan_next(c, self.sim.now)

    def _response(self, c: Client, task, outcome: str):
        if not self._is_current(c, task) or self.state[task.id] != PENDING:
            self.out.stray_responses += 1
            if self._is_current(c, task) and self.state[task.id] == LOST:
                self._done(c, task)
            return
        self._resolve(c, outcome)

    def _result(self, c: Client, task):
        now = self.sim.now
        if not self._is_current(c, task) or self.state[task.id] != ACCEPTED:
            return
        if now <= task.orig_deadline:
            self.out.success += 1
        else:
            self.out.missed += 1
        self.out.e2e_us.append(now - task.created)
        self._done(c, task)

    # nodes
    def _on_request(self, node: Node, req: Request):
        now = self.sim.now
        task = req.task
        if not req.adjusted:
            self.out.comm_delay_us.append(now - req.sent_at)
            task.deadline = adjust_deadline(task, now, self.cfg.uncertainty).new_deadline
            req.adjusted = True
        node.sync(now)
        if precheck(task, now) and edf_feasible(node.queue + [task], now):
            self._take(node, task)
            return
        self._forward(node, req)

    def _forward(self, node: Node, req: Request):
        cands = sorted((d, nid) for nid, d in node.known.items() if nid not in req.visited)
        if not cands or not precheck(req.task, self.sim.now):
            c = self.clients[req.task.client]
            back = 0 if req.origin == node.id else self.lan.delay()
            delay = back + self.lan.delay() + self._wireless(c, req.origin)
            self._to_client(c, lambda cl: self._response(cl, req.task, REJECTED), delay)
            return
        target = cands[0][1]
        req.visited.append(target)
        self.out.forwards += 1
        hop = self.lan.delay()
        if self.nodes[target].alive:
            self._to_node(target, lambda n: self._on_request(n, req), hop)
        else:
            # no answer from a dead peer: drop it after a round trip and keep going
            def give_up(ev, nid=target):
                self.out.dead_forwards += 1
                node.known.pop(nid, None)
                if node.alive:
                    self._forward(node, req)
            self.sim.after(hop + self.lan.delay(), give_up, EventKind.NODE_MESSAGE)

    def _take(self, node: Node, task: OffloadTask):
        c = self.clients[task.client]
        self.where[task.id] = node.id
        node.queue.append(task)
        self._to_client(c, lambda cl: self._response(cl, task, ACCEPTED), self.lan.delay() + self._wireless(c, node.id))
        self._reschedule(node)
        self.broadcast_density(node)

    def _reschedule(self, node: Node):
        now = self.sim.now
        head = edf_order(node.queue)[0] if node.queue else None
        if head is node.running:
            return
        if node.running is not None:
            node.sync(now)
            self.sim.cancel(node.finish_ev)
        node.running, node.started = head, now
        if head is not None:
            self.conn_ready.setdefault((head.id, node.id), now + head.conn_setup)
            node.finish_ev = self.sim.after(head.remaining, lambda ev: self._finish(node), EventKind.TIMER_EXPIRY)

    def _finish(self, node: Node):
        now = self.sim.now
        task = node.running
        task.elapsed = task.wcet
        node.queue.remove(task)
        node.running = None
        c = self.clients[task.client]
        depart = max(now, self.conn_ready.pop((task.id, node.id)))
        self._to_client(c, lambda cl: self._result(cl, task), depart - now + self._wireless(c, node.id))
        self._reschedule(node)
        self.broadcast_density(node)

    def run(self) -> DistOutcomes:
        self.sim.run_until(self.end + int(self.cfg.drain_s * SEC))
        o = self.out
        counts = {s: 0 for s in (PENDING, ACCEPTED, REJECTED, TIMED_OUT, LOST)}
        for s in self.state.values():
            counts[s] += 1
        o.accepted, o.rejected, o.timeouts, o.lost = counts[ACCEPTED], counts[REJECTED], counts[TIMED_OUT], counts[LOST]
        o.messages += self.lan.sent
        return o


def run_distributed(cfg: DistConfig, seed: int = 0) -> DistOutcomes:
    return DistributedSim(cfg, seed).run()
