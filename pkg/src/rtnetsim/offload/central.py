"""Centralized offloading: wireless clients, one scheduler, a pool of wired workers.

Two scheduler flavors share the client and worker plumbing:
  latency-aware  partitioned EDF, deadline pulled forward by U times the measured uplink delay
  reference      global EDF, admits anything whose raw time-to-deadline covers the wcet
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

from ..sim import EventKind, Simulator
from .core import (MS, WORST_FIT, LatencyModel, OffloadTask, accept, adjust_deadline,
                   edf_order, normal_ms, precheck, queue_density)

SEC = 1_000_000


@dataclass
class OffloadConfig:
    clients: int = 30
    workers: int = 4
    uncertainty: float = 1.0
    heuristic: str = WORST_FIT
    scheduler: str = "latency-aware"       # or "reference"
    wcet_ms: float = 100.0
    laxity_mean_ms: float = 100.0
    laxity_var_ms: Optional[float] = None  # None -> mean / 3
    latency: LatencyModel = field(default_factory=LatencyModel)
    submit_rate: float = 1.0               # per client, 1/s
    conn_setup_factor: float = 1.5
    duration_s: float = 30.0
    drain_s: float = 10.0
    gated: bool = True                     # False: open-loop replay, arrivals ignore outcomes

    def __post_init__(self):
        if self.scheduler not in ("latency-aware", "reference"):
            raise ValueError(f"unknown scheduler {self.scheduler!r}")
        if self.clients < 1 or self.workers < 1:
            raise ValueError("need at least one client and one worker")

    @property
    def laxity_var(self) -> float:
        return self.laxity_mean_ms / 3 if self.laxity_var_ms is None else self.laxity_var_ms


class ClientDraws:
    """Per-client random streams, so the k-th task of a client sees the same draws in every run."""

    def __init__(self, sim: Simulator, cid: int):
        self.gap = sim.rng(f"client{cid}/gap")
        self.lax = sim.rng(f"client{cid}/laxity")
        self.up = sim.rng(f"client{cid}/up")
        self.down = sim.rng(f"client{cid}/down")
        self.cs = sim.rng(f"client{cid}/setup")


@dataclass
class Outcomes:
    submitted: int = 0
    accepted: int = 0
    rejected: int = 0
    success: int = 0
    missed: int = 0
    late_departures: int = 0
    preemptions: int = 0
    per_worker: Dict[int, int] = field(default_factory=dict)

    @property
    def throughput_ratio(self) -> float:
        return self.success / self.submitted if self.submitted else 0.0

    @property
    def miss_rate(self) -> float:
        return self.missed / self.accepted if self.accepted else 0.0


class Worker:
    def __init__(self, wid: int):
        self.id = wid
        self.queue: List[OffloadTask] = []   # includes the running task
        self.running: Optional[OffloadTask] = None
        self.started = 0
        self.finish_ev = None

    def sync(self, now: int):
        """Fold the running task's progress into its elapsed time."""
        if self.running is not None:
            self.running.elapsed += now - self.started
            self.started = now


class OffloadSim:
    def __init__(self, cfg: OffloadConfig, seed: int = 0):
        self.cfg = cfg
        self.sim = Simulator(seed)
        self.out = Outcomes()
        self.workers = [Worker(i) for i in range(cfg.workers)]
        self.global_queue: List[OffloadTask] = []     # reference only, waiting tasks
        self.draws = [ClientDraws(self.sim, c) for c in range(cfg.clients)]
        self.last_submit = [0] * cfg.clients
        self.conn_ready: Dict[int, int] = {}
        self.end = int(cfg.duration_s * SEC)
        self._ids = 0
        self.log: List[tuple] = []
        for c in range(cfg.clients):
            self._plan_next(c, 0)

    # clients
    def _plan_next(self, c: int, free_at: int):
        if not self.cfg.gated and self.sim.now > 0:
            return
        gap = int(round(self.draws[c].gap.exponential(1.0 / self.cfg.submit_rate) * SEC))
        t = max(self.last_submit[c] + gap, free_at, self.sim.now)
        self.last_submit[c] = t
        if t < self.end:
            self.sim.at(t, lambda ev, c=c: self._submit(c), EventKind.NODE_MESSAGE)

    def _submit(self, c: int):
        cfg, d, now = self.cfg, self.draws[c], self.sim.now
        wcet = int(cfg.wcet_ms * MS)
        rel = wcet + normal_ms(d.lax, cfg.laxity_mean_ms, cfg.laxity_var)
        up = cfg.latency.sample(d.up)
        setup = int(round(cfg.conn_setup_factor * cfg.latency.sample(d.cs)))
        task = OffloadTask(client=c, deadline=now + rel, rel_deadline=rel, conn_setup=setup,
                           wcet=wcet, id=self._ids, created=now, seq=self._ids)
        self._ids += 1
        self.out.submitted += 1
        self.sim.after(up, lambda ev: self._arrive(task), EventKind.NODE_MESSAGE)
        if not self.cfg.gated:
            gap = int(round(d.gap.exponential(1.0 / cfg.submit_rate) * SEC))
            if now + gap < self.end:
                self.sim.at(now + gap, lambda ev: self._submit(c), EventKind.NODE_MESSAGE)

    def _reply(self, task: OffloadTask, at: int, ok: bool):
        down = self.cfg.latency.sample(self.draws[task.client].down)
        arrive = at + down
        if ok:
            if arrive <= task.orig_deadline:
                self.out.success += 1
            else:
                self.out.missed += 1
        self.log.append((task.id, task.client, "done" if ok else "reject", arrive))
        self.sim.at(arrive, lambda ev: self._plan_next(task.client, self.sim.now), EventKind.NODE_MESSAGE)

    # scheduler
    def _arrive(self, task: OffloadTask):
        now = self.sim.now
        if self.cfg.scheduler == "reference":
            if task.deadline - now < task.wcet:
                self._reject(task)
            else:
                self._admit_global(task)
            return
        adj = adjust_deadline(task, now, self.cfg.uncertainty)
        task.deadline = adj.new_deadline
        for w in self.workers:
            w.sync(now)
        wid = accept(task, [w.queue for w in self.workers], now, self.cfg.heuristic)
        if wid is None:
            self._reject(task)
            return
        self._accepted(task, wid)
        w = self.workers[wid]
        w.queue.append(task)
        self._reschedule(w)

    def _reject(self, task):
        self.out.rejected += 1
        self._reply(task, self.sim.now, ok=False)

    def _accepted(self, task, wid):
        self.out.accepted += 1
        self.out.per_worker[wid] = self.out.per_worker.get(wid, 0) + 1

    # partitioned workers
    def _reschedule(self, w: Worker):
        now = self.sim.now
        head = edf_order(w.queue)[0] if w.queue else None
        if head is w.running:
            return
        if w.running is not None:
            w.sync(now)
            self.sim.cancel(w.finish_ev)
            self.out.preemptions += 1
        self._start(w, head)

    def _start(self, w: Worker, task: Optional[OffloadTask]):
        now = self.sim.now
        w.running, w.started = task, now
        if task is None:
            return
        # reply connection opens in parallel with the first slice of computation
        self.conn_ready.setdefault(task.id, now + task.conn_setup)
        w.finish_ev = self.sim.after(task.remaining, lambda ev: self._finish(w), EventKind.TIMER_EXPIRY)

    def _finish(self, w: Worker):
        now = self.sim.now
        task = w.running
        task.elapsed = task.wcet
        w.running = None
        if task in w.queue:
            w.queue.remove(task)
        depart = max(now, self.conn_ready.pop(task.id))
        if depart > task.deadline:
            self.out.late_departures += 1
        self._reply(task, depart, ok=True)
        if self.cfg.scheduler == "reference":
            self._pull_global(w)
        else:
            self._reschedule(w)

    # global EDF reference
    def _admit_global(self, task: OffloadTask):
        now = self.sim.now
        self.out.accepted += 1
        idle = [w for w in self.workers if w.running is None]
        if idle:
            self._bind(idle[0], task)
            return
        victim = max(self.workers, key=lambda w: (w.running.deadline, w.running.seq))
        if task.deadline < victim.running.deadline:
            victim.sync(now)
            self.sim.cancel(victim.finish_ev)
            self.out.preemptions += 1
            self.global_queue.append(victim.running)
            victim.running = None
            self._bind(victim, task)
        else:
            self.global_queue.append(task)

    def _bind(self, w: Worker, task: OffloadTask):
        self.out.per_worker[w.id] = self.out.per_worker.get(w.id, 0) + 1
        self._start(w, task)

    def _pull_global(self, w: Worker):
        if not self.global_queue:
            return
        task = edf_order(self.global_queue)[0]
        self.global_queue.remove(task)
        self._start(w, task)

    def run(self) -> Outcomes:
        self.sim.run_until(self.end + int(self.cfg.drain_s * SEC))
        return self.out

    def density(self, wid: int) -> float:
        w = self.workers[wid]
        w.sync(self.sim.now)
        return queue_density(w.queue, self.sim.now)


def run_offload(cfg: OffloadConfig, seed: int = 0) -> Outcomes:
    return OffloadSim(cfg, seed).run()
