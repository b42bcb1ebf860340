"""Fixed-priority preemptive CPU model, periodic tasks, lateness and aperiodic servers.

Work is tracked in integer nanoseconds on top of the microsecond event clock.
A segment that ends part-way into a microsecond leaves the remainder as
"credit" that the next contiguous segment may use, so sub-µs stage costs
add up exactly instead of being rounded per packet.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

from .sim import EventKind, Simulator

NS = 1000
IDLE = None  # pick_running result when nothing is ready

TASK_KINDS = ("periodic-critical", "net-task", "worker", "idle", "server")


def us_to_ns(x: float) -> int:
    return int(round(x * NS))


@dataclass
class RtTask:
    id: str
    priority: int
    period: int = 0
    deadline: int = 0
    work_per_cycle: float = 0.0
    kind: str = "worker"

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.kind == "periodic-critical":
            if self.period <= 0:
                raise ValueError("periodic task needs period > 0")
            if self.deadline == 0:
                self.deadline = self.period
            if self.deadline > self.period:
                raise ValueError("deadline must not exceed period")


@dataclass(frozen=True)
class ServerSpec:
    e: int
    p: int
    policy: str = "deferrable"

    def __post_init__(self):
        if not 0 < self.e <= self.p:
            raise ValueError("server needs 0 < e <= p")
        if self.policy not in ("deferrable", "sporadic"):
            raise ValueError(f"unknown server policy {self.policy!r}")


@dataclass
class CycleRecord:
    task: str
    release: int
    finish: int
    deadline_abs: int

    @property
    def lateness(self) -> int:
        return self.finish - self.deadline_abs


def lateness(rec: CycleRecord) -> int:
    return rec.finish - rec.deadline_abs


def demand_bound(server: ServerSpec, delta: int) -> int:
    if delta <= 0:
        raise ValueError("delta must be > 0")
    k = -(-delta // server.p)
    if server.policy == "deferrable":
        return server.e * (k + 1)
    return server.e * k


def pick_running(ready, order=None):
    """Highest priority wins; ties go to whichever comes first in `order`."""
    best = IDLE
    rank = {id(t): i for i, t in enumerate(order)} if order is not None else None
    for t in ready:
        if best is IDLE or t.priority > best.priority:
            best = t
        elif t.priority == best.priority and rank is not None and rank.get(id(t), 1 << 30) < rank.get(id(best), 1 << 30):
            best = t
    return best


# --- aperiodic servers -------------------------------------------------------

class DeferrableServer:
    """Budget restored to e at every period boundary; unused budget is kept until then."""

    def __init__(self, spec: ServerSpec, t0: int = 0):
        self.spec = spec
        self.period_start = t0
        self.budget = spec.e
        self.segments = []

    def _advance(self, t):
        p = self.spec.p
        if t >= self.period_start + p:
            self.period_start += (t - self.period_start) // p * p
            self.budget = self.spec.e

    def budget_at(self, t) -> int:
        self._advance(t)
        return self.budget

    def account(self, request: int, t: int) -> int:
        """Serve `request` µs of contiguous work from t; returns µs granted."""
        self._advance(t)
        now, left, granted = t, request, 0
        while left > 0:
            boundary = self.period_start + self.spec.p
            run = min(left, self.budget, boundary - now)
            if run > 0:
                self.segments.append((now, now + run))
                now += run
                left -= run
                granted += run
                self.budget -= run
            if now == boundary:
                self._advance(now)
            elif run == 0 or self.budget == 0:
                break
        return granted

    def try_take(self, units: int, t: int) -> bool:
        """Instantaneous all-or-nothing consumption (packet budgets)."""
        self._advance(t)
        if self.budget >= units:
            self.budget -= units
            return True
        return False


class SporadicServer:
    """Each consumed chunk comes back exactly one period after it started."""

    def __init__(self, spec: ServerSpec, t0: int = 0):
        self.spec = spec
        self.budget = spec.e
        self.pending = deque()  # (replenish_at, amount), time-ordered
        self.segments = []

    def _advance(self, t):
        while self.pending and self.pending[0][0] <= t:
            self.budget += self.pending.popleft()[1]

    def budget_at(self, t) -> int:
        self._advance(t)
        return self.budget

    def account(self, request: int, t: int) -> int:
        self._advance(t)
        g = min(request, self.budget)
        if g > 0:
            self.budget -= g
            self.pending.append((t + self.spec.p, g))
            self.segments.append((t, t + g))
        return g

    def try_take(self, units: int, t: int) -> bool:
        self._advance(t)
        if self.budget >= units:
            self.budget -= units
            self.pending.append((t + self.spec.p, units))
            return True
        return False


def make_server(spec: ServerSpec, t0: int = 0):
    return DeferrableServer(spec, t0) if spec.policy == "deferrable" else SporadicServer(spec, t0)


def server_account(state, request: int, t: int) -> int:
    return state.account(request, t)


# --- CPU ---------------------------------------------------------------------

class Task:
    """Schedulable thread. Subclasses hand out work as (ns, on_done) via next_work()."""

    kind = "worker"

    def __init__(self, name: str, priority: int):
        self.name = name
        self.priority = priority
        self.cpu: Optional[Cpu] = None
        self.ready = False

    def next_work(self):
        return None

    def wake(self):
        if self.cpu is not None:
            self.cpu.wake(self)

    def __repr__(self):
        return f"<{type(self).__name__} {self.name} p={self.priority}>"


class WorkQueueTask(Task):
    """FIFO of independent work items."""

    def __init__(self, name, priority):
        super().__init__(name, priority)
        self.items = deque()

    def submit(self, ns: int, on_done=None):
        self.items.append((ns, on_done))
        self.wake()

    def next_work(self):
        return self.items.popleft() if self.items else None


class BusyTask(Task):
    """Always-ready background load; `done_ns` is the CPU time it managed to get."""

    def __init__(self, name, priority, chunk_us=100):
        super().__init__(name, priority)
        self.chunk_ns = chunk_us * NS
        self.done_ns = 0

    def next_work(self):
        return self.chunk_ns, self._tick

    def _tick(self):
        self.done_ns += self.chunk_ns


class PeriodicTask(Task):
    kind = "periodic-critical"

    def __init__(self, spec: RtTask, on_cycle: Optional[Callable] = None, offset: int = 0):
        super().__init__(spec.id, spec.priority)
        self.spec = spec
        self.on_cycle = on_cycle
        self.offset = offset
        self.records = []
        self.lateness_by_s = {}
        self.cycles_by_s = {}
        self._open = False
        self._handed = False
        self.release_t = 0
        self.deadline_abs = 0

    def start(self):
        self.cpu.sim.at(self.offset, self._release, EventKind.TASK_RELEASE)

    def _release(self, ev=None):
        now = self.cpu.sim.now
        self._open, self._handed = True, False
        self.release_t = now
        self.deadline_abs = now + self.spec.deadline
        self.wake()

    def next_work(self):
        if self._open and not self._handed:
            self._handed = True
            return us_to_ns(self.spec.work_per_cycle), self._done
        return None

    def _done(self):
        sim = self.cpu.sim
        rec = CycleRecord(self.name, self.release_t, sim.now, self.deadline_abs)
        self.records.append(rec)
        sec = sim.now // 1_000_000
        self.lateness_by_s[sec] = self.lateness_by_s.get(sec, 0) + max(0, rec.lateness)
        self.cycles_by_s[sec] = self.cycles_by_s.get(sec, 0) + 1
        self._open = False
        # a late cycle starts the next period right away
        nxt = max(self.release_t + self.spec.period, sim.now)
        sim.at(nxt, self._release, EventKind.TASK_RELEASE)
        if self.on_cycle is not None:
            self.on_cycle(rec)

    @property
    def total_lateness(self) -> int:
        return sum(self.lateness_by_s.values())


class Cpu:
    """Single core: non-nested FIFO ISRs above fixed-priority preemptive tasks."""

    def __init__(self, sim: Simulator, quantum_us: int = 1000, ctx_switch_us: float = 0.0,
                 trace: bool = False):
        self.sim = sim
        self.quantum = quantum_us
        self.ctx_ns = us_to_ns(ctx_switch_us)
        self.tasks = []
        self.order = []          # ready tasks, round-robin order
        self.jobs = {}           # task -> [remaining_ns, on_done]
        self.isr_q = deque()
        self.cur = None          # running task, or None
        self.cur_isr = None      # (ns, cb, owner) while an ISR runs
        self.seg_start = 0
        self.seg_credit = 0
        self.seg_eid = None
        self.tick_eid = None
        self.credit = 0
        self.credit_at = -1
        self.last_started = None
        self.busy_ns = {}
        self.isr_ns = 0
        self.isr_count = 0
        self.switches = 0
        self.trace = [] if trace else None
        self._dispatching = False
        self._again = False
        self._pending_credit = 0
        self.audit = None

    # public API
    def add(self, task: Task) -> Task:
        task.cpu = self
        self.tasks.append(task)
        return task

    def wake(self, task: Task):
        if not task.ready:
            task.ready = True
            self.order.append(task)
        self._dispatch()

    def set_priority(self, task: Task, prio: int):
        if task.priority != prio:
            task.priority = prio
            self._dispatch()

    def irq(self, cost_ns, on_done=None, owner: str = "isr"):
        """Queue an ISR. `cost_ns` may be a callable evaluated when the ISR starts."""
        self.isr_q.append((cost_ns, on_done, owner))
        self._dispatch()

    def running(self):
        """Currently executing task (None while idle or inside an ISR)."""
        return None if self.cur_isr is not None else self.cur

    def in_isr(self) -> bool:
        return self.cur_isr is not None

    def owner_ns(self, owner) -> int:
        return self.busy_ns.get(owner, 0)

    # internals
    def _charge(self, owner, ns):
        self.busy_ns[owner] = self.busy_ns.get(owner, 0) + ns

    def _credit_now(self):
        return self.credit if self.credit_at == self.sim.now else 0

    def _pick(self):
        best = None
        for t in self.order:
            if best is None or t.priority > best.priority:
                best = t
        return best

    def _dispatch(self):
        if self._dispatching:
            self._again = True
            return
        self._dispatching = True
        try:
            while True:
                self._again = False
                if self._step() or self._again:
                    continue
                break
        finally:
            self._dispatching = False
        if self.audit is not None:
            self.audit(self)

    def _preempt(self):
        t = self.cur
        now = self.sim.now
        self.sim.cancel(self.seg_eid)
        self.seg_eid = None
        consumed = self.seg_credit + (now - self.seg_start) * NS
        job = self.jobs[t]
        job[0] -= consumed
        self._charge(t.name, consumed)
        if self.trace is not None and now > self.seg_start:
            self.trace.append((self.seg_start, now, t.name, "task"))
        self.credit = 0
        self.cur = None

    def _step(self) -> bool:
        if self.cur_isr is not None:
            return False
        if self.isr_q:
            if self.cur is not None:
                self._preempt()
            item = self.isr_q.popleft()
            return self._start_isr(item)
        best = self._pick()
        if best is self.cur:
            self._arm_tick()
            return False
        if self.cur is not None:
            self._preempt()
        if best is None:
            return False
        job = self.jobs.get(best)
        if job is None:
            w = best.next_work()
            if w is None:
                best.ready = False
                self.order.remove(best)
                return True
            job = self.jobs[best] = [int(w[0]), w[1]]
        if best is not self.last_started:
            self.switches += 1
            if self.ctx_ns and self.last_started is not None:
                job[0] += self.ctx_ns
        self.last_started = best
        self.cur = best
        return self._start_segment(job[0], self._task_end)

    def _start_segment(self, remaining, handler) -> bool:
        now = self.sim.now
        c = self._credit_now()
        if remaining <= c:
            self.credit = c - remaining
            self.credit_at = now
            self.seg_start, self.seg_credit = now, c
            handler(None, remaining)
            return True
        dur = -(-(remaining - c) // NS)
        self.seg_start, self.seg_credit = now, c
        self.seg_eid = self.sim.at(now + dur, lambda ev: handler(ev, remaining), EventKind.TIMER_EXPIRY)
        self._pending_credit = dur * NS - (remaining - c)
        return False

    def _start_isr(self, item) -> bool:
        cost, cb, owner = item
        if callable(cost):
            item = (int(cost()), cb, owner)
        self.cur_isr = item
        self.isr_count += 1
        return self._start_segment(item[0], self._isr_end)

    def _isr_end(self, ev, ns):
        now = self.sim.now
        if ev is not None:
            self.credit, self.credit_at = self._pending_credit, now
            self.seg_eid = None
        cost, cb, owner = self.cur_isr
        self.isr_ns += cost
        self._charge(owner, cost)
        if self.trace is not None and now > self.seg_start:
            self.trace.append((self.seg_start, now, owner, "isr"))
        self.cur_isr = None
        if cb is not None:
            cb()
        if ev is not None:
            self._dispatch()

    def _task_end(self, ev, ns):
        now = self.sim.now
        t = self.cur
        if ev is not None:
            self.credit, self.credit_at = self._pending_credit, now
            self.seg_eid = None
        job = self.jobs.pop(t)
        self._charge(t.name, job[0])
        if self.trace is not None and now > self.seg_start:
            self.trace.append((self.seg_start, now, t.name, "task"))
        self.cur = None
        if job[1] is not None:
            job[1]()
        if ev is not None:
            self._dispatch()

    def _arm_tick(self):
        cur = self.cur
        if cur is None or self.sim.is_pending(self.tick_eid):
            return
        if any(t is not cur and t.priority == cur.priority for t in self.order):
            now = self.sim.now
            nxt = (now // self.quantum + 1) * self.quantum
            self.tick_eid = self.sim.at(nxt, self._tick, EventKind.TIMER_EXPIRY)

    def _tick(self, ev):
        self.tick_eid = None
        cur = self.cur
        if cur is None:
            return
        if any(t is not cur and t.priority == cur.priority for t in self.order):
            # back of the line; _pick takes the first task of the top priority
            self.order.remove(cur)
            self.order.append(cur)
        self._dispatch()
