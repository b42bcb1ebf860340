"""Turn a ScenarioConfig into a wired simulation, run it, and collect CSV rows."""
from __future__ import annotations

import csv
import io
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Tuple

from . import mitigation as mit
from .config import ScenarioConfig, nic_queue_configs, point_label, sweep_points
from .nic import NicCostModel
from .offload.central import OffloadConfig, OffloadSim
from .offload.core import LatencyModel
from .offload.distributed import DistConfig, DistributedSim
from .rtos import RtTask, ServerSpec
from .rxpath import FLOW_REJECT, NO_SOCKET, RECYCLE_THEN_ENQUEUE, REGULAR, SHORTCIRCUIT, FlowSpec, RxConfig
from .sim import Simulator
from .testbeds import MitigationBed, MitigationParams, PacketSource, ReceiverSpec, RxBed, SecondSampler
from .traffic import LoadSpec, TraceRecord, generate, merge, synthetic_trace

US = 1_000_000

RX_COLUMNS = ["t_s", "pkts_sent", "irqs", "pkts_processed", "critical_cycles", "lateness_accum_ms"]
ALL_PATHS = (REGULAR, SHORTCIRCUIT, RECYCLE_THEN_ENQUEUE, FLOW_REJECT, NO_SOCKET)
OFFLOAD_COLUMNS = ["clients", "U", "accepted", "missed", "rejected", "throughput_ratio"]


def fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        s = f"{v:.6f}".rstrip("0").rstrip(".")
        return s if s not in ("", "-0") else "0"
    return str(v)


def build_traffic(cfg: ScenarioConfig, sim: Simulator) -> List[TraceRecord]:
    base = Path(cfg.source).parent if cfg.source else Path(".")
    streams = []
    for i, t in enumerate(cfg.traffic):
        dur = int(round((t.duration_s or cfg.scenario.duration_s) * US))
        rng = sim.rng(f"traffic{i}")
        if t.kind != "trace" and t.kind != "synthetic" and t.rate == 0:
            continue    # a silent source, e.g. the zero point of a load sweep
        if t.kind == "synthetic":
            recs = synthetic_trace(t.style, dur, rng, t.dst_port, t.src_id)
            if t.start_us:
                recs = [replace(r, t=r.t + t.start_us) for r in recs]
        else:
            path = str(base / t.file) if t.file else None
            spec = LoadSpec(t.kind, t.rate if t.kind != "trace" else 1.0, dur, t.start_us, t.burst_size,
                            t.burst_gap_us, t.step, int(round(t.hold_s * US)), path, t.dst_port, t.length, t.src_id)
            recs = generate(spec, rng)
        streams.append(recs)
    return merge(*streams)


# --- mitigation ---------------------------------------------------------------

def make_mitigation(cfg: ScenarioConfig, sim: Simulator) -> MitigationBed:
    m = cfg.mitigation
    kw = {}
    if m.policy == "burst":
        kw = dict(slice=m.slice_us, capacity=m.capacity)
    elif m.policy == "queue":
        kw = dict(queue_capacity=m.queue_capacity)
    elif m.policy == "hysteresis":
        kw = dict(target=m.period_us, block_threshold=m.block_threshold,
                  unblock_threshold=m.unblock_threshold, poll_sleep=m.poll_sleep_us)
    elif m.policy == "budget":
        kw = dict(charge_isr=m.charge_isr)
    policy = mit.make_policy(m.policy, **kw)
    drv = m.driver_priority
    if drv is None:
        drv = m.critical_priority if m.policy == "budget" else m.critical_priority - 1
    params = MitigationParams(m.isr_us, m.driver_us, m.queue_size, m.period_us, m.work_us,
                              m.critical_priority, drv, m.quantum_us)
    return MitigationBed(sim, params, policy)


def run_mitigation(cfg: ScenarioConfig) -> Tuple[List[dict], dict]:
    sim = Simulator(cfg.scenario.seed)
    bed = make_mitigation(cfg, sim)
    src = PacketSource(sim, build_traffic(cfg, sim), bed.on_packet)
    dur = int(round(cfg.scenario.duration_s * US))
    rows, prev = [], {}

    def snap(s):
        c = bed.c
        cur = dict(sent=src.sent, irqs=c["irqs"], received=c["received"], processed=c["processed"],
                   masked=c["masked"], drops=c["queue_drops"])
        d = {k: v - prev.get(k, 0) for k, v in cur.items()}
        prev.update(cur)
        rows.append({"t_s": s, "pkts_sent": d["sent"], "irqs": d["irqs"], "pkts_processed": d["processed"],
                     "critical_cycles": bed.critical.cycles_by_s.get(s, 0),
                     "lateness_accum_ms": bed.critical.total_lateness / 1000,
                     "pkts_received": d["received"], "pkts_masked": d["masked"], "queue_drops": d["drops"]})
    SecondSampler(sim, dur, snap)
    sim.run_until(dur)
    tot = bed.totals()
    summary = {"pkts_sent": src.sent, "irqs": tot["irqs"], "pkts_processed": tot["processed"],
               "critical_cycles": tot["critical_cycles"], "lateness_accum_ms": tot["lateness_us"] / 1000,
               "pkts_received": tot["received"], "max_received_per_s": max((r["pkts_received"] for r in rows), default=0),
               "irq_disables": len(bed.disabled_at)}
    return rows, summary


# --- receive path -------------------------------------------------------------

def make_rx(cfg: ScenarioConfig, sim: Simulator) -> RxBed:
    r = cfg.rx
    flows = []
    for f in cfg.flows:
        server = ServerSpec(f.server_e, f.server_p_us, f.server_policy) if f.server_e else None
        flows.append(FlowSpec(f.name, f.port, f.priority, f.t_p, f.src, server))
    limit = ServerSpec(r.global_e, r.global_p_us) if r.global_e else None
    rx_cfg = RxConfig(mode=r.mode, stack=r.stack, pool_size=r.pool_size, recycle_threshold=r.recycle_threshold,
                      shortcircuit=r.shortcircuit, net_priority=r.net_priority, frame_queue=r.frame_queue,
                      global_limit=limit)
    recv = [ReceiverSpec(x.flow, x.priority, x.work_us, x.mailbox) for x in cfg.receivers]
    nic_queues = nic_cost = None
    if cfg.nic is not None and cfg.nic.queues:
        nic_queues = nic_queue_configs(cfg)
        n = cfg.nic
        nic_cost = NicCostModel(n.d_l, n.d_c, n.task_d_l, n.task_d_c)
    crit = None
    if cfg.critical is not None:
        c = cfg.critical
        crit = RtTask("critical", c.priority, c.period_us, c.deadline_us, c.work_us, "periodic-critical")
    return RxBed(sim, flows, rx_cfg, recv, nic_queues, nic_cost, r.probe_priority, r.quantum_us, crit)


def run_rx(cfg: ScenarioConfig) -> Tuple[List[dict], dict]:
    sim = Simulator(cfg.scenario.seed)
    bed = make_rx(cfg, sim)
    src = PacketSource(sim, build_traffic(cfg, sim), bed.on_packet)
    dur = int(round(cfg.scenario.duration_s * US))
    names = [f.name for f in cfg.flows]
    rows, prev = [], {}

    def lateness_ms():
        return bed.critical.total_lateness / 1000 if bed.critical else 0.0

    def snap(s):
        cur = {"sent": src.sent, "irqs": bed.cpu.isr_count, "net_ns": bed.net_cpu_ns(),
               "proc": sum(bed.rx.delivered_by_flow.values())}
        for n in names:
            cur["d_" + n] = bed.rx.delivered_by_flow.get(n, 0)
            if n in bed.receivers:
                cur["p_" + n] = bed.receivers[n].processed
        d = {k: v - prev.get(k, 0) for k, v in cur.items()}
        prev.update(cur)
        row = {"t_s": s, "pkts_sent": d["sent"], "irqs": d["irqs"], "pkts_processed": d["proc"],
               "critical_cycles": bed.critical.cycles_by_s.get(s, 0) if bed.critical else 0,
               "lateness_accum_ms": lateness_ms(), "net_cpu_ms": d["net_ns"] / 1e6}
        for n in names:
            row[f"delivered_{n}"] = d["d_" + n]
            if n in bed.receivers:
                row[f"processed_{n}"] = d["p_" + n]
        rows.append(row)
    SecondSampler(sim, dur, snap)
    sim.run_until(dur)
    net = bed.net_cpu_ns()
    summary = {"pkts_sent": src.sent, "irqs": bed.cpu.isr_count,
               "pkts_processed": sum(bed.rx.delivered_by_flow.values()),
               "critical_cycles": len(bed.critical.records) if bed.critical else 0,
               "lateness_accum_ms": lateness_ms(),
               "net_cpu_ms": net / 1e6, "us_per_pkt": net / 1000 / src.sent if src.sent else 0.0,
               "net_load": net / (dur * 1000), "dropped_frames": bed.rx.dropped_frames,
               "prio_raises": bed.rx.prio_raises}
    for p in ALL_PATHS:
        summary[f"path_{p}"] = bed.rx.paths.get(p, 0)
    for n in names:
        summary[f"delivered_{n}"] = bed.rx.delivered_by_flow.get(n, 0)
        if n in bed.receivers:
            summary[f"processed_{n}"] = bed.receivers[n].processed
    if bed.nic is not None:
        for q in sorted(q.cfg.queue_id for q in bed.nic.all_queues()):
            summary[f"max_wait_q{q}_us"] = bed.max_wait.get(q, 0)
    return rows, summary


# --- offloading ---------------------------------------------------------------

def offload_config(cfg: ScenarioConfig) -> OffloadConfig:
    o = cfg.offload
    return OffloadConfig(clients=o.clients, workers=o.workers, uncertainty=o.uncertainty, heuristic=o.heuristic,
                         scheduler=o.scheduler, wcet_ms=o.wcet_ms, laxity_mean_ms=o.laxity_mean_ms,
                         laxity_var_ms=o.laxity_var_ms, latency=LatencyModel(o.latency_mean_ms, o.latency_var_ms),
                         submit_rate=o.submit_rate, conn_setup_factor=o.conn_setup_factor,
                         duration_s=cfg.scenario.duration_s, drain_s=o.drain_s, gated=o.gated)


def run_offload_point(cfg: ScenarioConfig) -> Tuple[List[dict], dict]:
    oc = offload_config(cfg)
    o = OffloadSim(oc, cfg.scenario.seed).run()
    row = {"clients": oc.clients, "U": oc.uncertainty, "accepted": o.accepted, "missed": o.missed,
           "rejected": o.rejected, "throughput_ratio": o.throughput_ratio, "submitted": o.submitted,
           "success": o.success, "miss_rate": o.miss_rate, "preemptions": o.preemptions,
           "late_departures": o.late_departures, "scheduler": oc.scheduler, "load_spread": (max(o.per_worker.values()) - min(o.per_worker.get(w, 0) for w in range(oc.workers))) if o.per_worker else 0}
    return [row], dict(row)


def dist_config(cfg: ScenarioConfig) -> DistConfig:
    d = cfg.distributed
    return DistConfig(clients=d.clients, nodes=d.nodes, uncertainty=d.uncertainty, wcet_ms=d.wcet_ms,
                      laxity_mean_ms=d.laxity_mean_ms, laxity_var_ms=d.laxity_var_ms,
                      client_latency=LatencyModel(d.client_latency_mean_ms, d.client_latency_var_ms),
                      client_spread_ms=d.client_spread_ms,
                      wired=LatencyModel(d.wired_latency_mean_ms, d.wired_latency_var_ms),
                      lan_msg_us=d.lan_msg_us, advert_period_ms=d.advert_period_ms,
                      density_period_ms=d.density_period_ms, response_timeout_ms=d.response_timeout_ms,
                      submit_rate=d.submit_rate, duration_s=cfg.scenario.duration_s, drain_s=d.drain_s,
                      kill_node=d.kill_node, kill_at_s=d.kill_at_s)


def run_distributed_point(cfg: ScenarioConfig) -> Tuple[List[dict], dict]:
    dc = dist_config(cfg)
    o = DistributedSim(dc, cfg.scenario.seed).run()
    row = {"clients": dc.clients, "U": dc.uncertainty, "accepted": o.accepted, "missed": o.missed,
           "rejected": o.rejected, "throughput_ratio": o.success / o.submitted if o.submitted else 0.0,
           "nodes": dc.nodes, "submitted": o.submitted, "success": o.success, "timeouts": o.timeouts,
           "lost": o.lost, "lost_at_kill": o.lost_at_kill, "acceptance": o.acceptance,
           "forwards": o.forwards, "fallbacks": o.fallbacks, "messages": o.messages,
           "mean_comm_delay_ms": o.mean_comm_delay_ms, "mean_e2e_ms": o.mean_e2e_ms}
    return [row], dict(row)


RUNNERS = {"mitigation": run_mitigation, "rx": run_rx, "offload": run_offload_point,
           "distributed": run_distributed_point}


def run_point(cfg: ScenarioConfig) -> Tuple[List[dict], dict]:
    return RUNNERS[cfg.scenario.experiment](cfg)


# --- output -------------------------------------------------------------------

def to_csv(rows: List[dict]) -> str:
    cols = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([fmt(r.get(c, "")) for c in cols])
    return buf.getvalue()


def _point_job(args):
    assign, cfg = args
    return assign, run_point(cfg)


def run_scenario(cfg: ScenarioConfig, out_dir, jobs: int = 1) -> Dict[str, str]:
    """Run every sweep point; write one CSV per point plus summary.csv. Returns {filename: text}."""
    points = sweep_points(cfg)
    if jobs > 1 and len(points) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(jobs) as ex:
            results = list(ex.map(_point_job, points))
    else:
        results = [_point_job(p) for p in points]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files, summary = {}, []
    for assign, (rows, summ) in results:
        name = point_label(assign) + ".csv"
        files[name] = to_csv(rows)
        srow = {"point": point_label(assign)}
        srow.update({k: v for k, v in assign.items()})
        srow.update(summ)
        summary.append(srow)
    files["summary.csv"] = to_csv(summary)
    for name, text in files.items():
        (out / name).write_text(text)
    return files
