"""Scenario files: TOML mapped onto dataclasses, with strict key checking.

Layout (every section optional unless the experiment needs it):

    [scenario]      name, experiment, seed, duration_s
    [[traffic]]     one load spec per entry
    [mitigation]    policy and driver/critical-task parameters
    [rx]            receive path mode and stack
    [[flows]]       name, port, priority, t_p, src
    [[receivers]]   flow, priority, work_us, mailbox
    [critical]      optional periodic task next to the receive path
    [nic]           cost model, t_netstack, deadlines; [[nic.queues]] per queue
    [offload]       centralized offloading
    [distributed]   distributed offloading
    [[sweep]]       param = "section.key", values = [...]; axes combine as a grid
"""
from __future__ import annotations

import itertools
import re
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXPERIMENTS = ("mitigation", "rx", "offload", "distributed")


class ConfigError(Exception):
    def __init__(self, msg: str, line: Optional[int] = None, path: str = ""):
        self.line = line
        self.path = path
        where = f"{path}:{line}: " if line else (f"{path}: " if path else "")
        super().__init__(where + msg)


@dataclass
class Meta:
    name: str = "scenario"
    experiment: str = "mitigation"
    seed: int = 0
    duration_s: float = 1.0


@dataclass
class TrafficEntry:
    kind: str = "uniform"
    rate: float = 0.0
    duration_s: float = 0.0       # 0 -> scenario duration
    start_us: int = 0
    burst_size: int = 0
    burst_gap_us: int = 0
    step: float = 0.0
    hold_s: float = 0.0
    file: str = ""
    style: str = ""               # synthetic kind: "bursty" or "continuous"
    dst_port: int = 0
    length: int = 64
    src_id: str = ""


@dataclass
class MitigationSection:
    policy: str = "none"
    isr_us: float = 2.5
    driver_us: float = 10.0
    queue_size: int = 100
    period_us: int = 10_000
    work_us: float = 8600.0
    critical_priority: int = 5
    driver_priority: Optional[int] = None     # None -> policy default
    quantum_us: int = 1000
    slice_us: int = 20_000
    capacity: int = 600
    queue_capacity: int = 500
    block_threshold: float = 0.10
    unblock_threshold: float = 0.25
    poll_sleep_us: int = 1000
    charge_isr: bool = False


@dataclass
class RxSection:
    mode: str = "diff"
    stack: str = "freertos-tcp"
    shortcircuit: bool = True
    net_priority: int = 1
    frame_queue: int = 32
    pool_size: int = 64
    recycle_threshold: float = 0.5
    probe_priority: Optional[int] = None
    quantum_us: int = 1000
    global_e: int = 0
    global_p_us: int = 0


@dataclass
class FlowEntry:
    name: str = ""
    port: int = 0
    priority: int = 1
    t_p: int = 0
    src: str = ""
    server_e: int = 0
    server_p_us: int = 0
    server_policy: str = "deferrable"


@dataclass
class ReceiverEntry:
    flow: str = ""
    priority: int = 1
    work_us: float = 0.0
    mailbox: int = 0


@dataclass
class CriticalSection:
    priority: int = 5
    period_us: int = 10_000
    deadline_us: int = 0
    work_us: float = 1000.0


@dataclass
class NicQueueEntry:
    queue_id: int = 0
    port: int = 0
    n_q: int = 128
    t_abs: int = 0
    t_pack: int = 0
    counter_threshold: int = 0
    r_max: float = 0.0
    t_d: float = 0.0
    periodic_abs: bool = False


@dataclass
class NicSection:
    d_l: float = 0.0
    d_c: float = 0.0
    task_d_l: float = 0.0
    task_d_c: float = 0.0
    t_netstack: float = 12.5
    queues: List[NicQueueEntry] = field(default_factory=list)


@dataclass
class OffloadSection:
    clients: int = 30
    workers: int = 4
    uncertainty: float = 1.0
    heuristic: str = "worst-fit"
    scheduler: str = "latency-aware"
    wcet_ms: float = 100.0
    laxity_mean_ms: float = 100.0
    laxity_var_ms: Optional[float] = None
    latency_mean_ms: float = 30.0
    latency_var_ms: float = 10.0
    submit_rate: float = 1.0
    conn_setup_factor: float = 1.5
    gated: bool = True
    drain_s: float = 10.0


@dataclass
class DistributedSection:
    clients: int = 30
    nodes: int = 4
    uncertainty: float = 1.0
    wcet_ms: float = 100.0
    laxity_mean_ms: float = 200.0
    laxity_var_ms: float = 67.0
    client_latency_mean_ms: float = 5.0
    client_latency_var_ms: float = 1.0
    client_spread_ms: float = 4.0
    wired_latency_mean_ms: float = 0.5
    wired_latency_var_ms: float = 0.01
    lan_msg_us: int = 100
    advert_period_ms: float = 1000.0
    density_period_ms: float = 1000.0
    response_timeout_ms: float = 50.0
    submit_rate: float = 1.0
    drain_s: float = 5.0
    kill_node: Optional[int] = None
    kill_at_s: float = 7.0


@dataclass
class SweepAxis:
    param: str = ""
    values: list = field(default_factory=list)


@dataclass
class ScenarioConfig:
    scenario: Meta = field(default_factory=Meta)
    traffic: List[TrafficEntry] = field(default_factory=list)
    mitigation: Optional[MitigationSection] = None
    rx: Optional[RxSection] = None
    flows: List[FlowEntry] = field(default_factory=list)
    receivers: List[ReceiverEntry] = field(default_factory=list)
    critical: Optional[CriticalSection] = None
    nic: Optional[NicSection] = None
    offload: Optional[OffloadSection] = None
    distributed: Optional[DistributedSection] = None
    sweep: List[SweepAxis] = field(default_factory=list)
    source: str = ""


SECTIONS = {
    "scenario": (Meta, False), "traffic": (TrafficEntry, True), "mitigation": (MitigationSection, False),
    "rx": (RxSection, False), "flows": (FlowEntry, True), "receivers": (ReceiverEntry, True),
    "critical": (CriticalSection, False), "nic": (NicSection, False), "offload": (OffloadSection, False),
    "distributed": (DistributedSection, False), "sweep": (SweepAxis, True),
}
NESTED = {(NicSection, "queues"): NicQueueEntry}


# --- locating keys for error messages -----------------------------------------

_HEADER = re.compile(r"^\s*\[\[?\s*([A-Za-z0-9_.\-]+)\s*\]\]?")
_KEY = re.compile(r"^\s*([A-Za-z0-9_\-]+)\s*=")


def find_line(text: str, table: str, key: Optional[str] = None, index: int = 0) -> Optional[int]:
    """1-based line of `key` inside the `index`-th occurrence of [table] / [[table]]."""
    cur, seen = "", {}
    for no, line in enumerate(text.splitlines(), 1):
        m = _HEADER.match(line)
        if m:
            cur = m.group(1)
            seen[cur] = seen.get(cur, -1) + 1
            if key is None and cur == table and seen[cur] == index:
                return no
            continue
        if key is not None and cur == table and seen.get(cur) == index:
            k = _KEY.match(line)
            if k and k.group(1) == key:
                return no
    return None


# --- building dataclasses -----------------------------------------------------

def _coerce(name: str, value, default, hint: str):
    # annotations are strings under postponed evaluation
    if value is None:
        return value
    if "bool" in hint:
        if not isinstance(value, bool):
            raise TypeError(f"{name}: expected true/false, got {value!r}")
        return value
    if "int" in hint and "float" not in hint:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise TypeError(f"{name}: expected an integer, got {value!r}")
        return value
    if "float" in hint:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError(f"{name}: expected a number, got {value!r}")
        return float(value)
    if hint == "str":
        if not isinstance(value, str):
            raise TypeError(f"{name}: expected a string, got {value!r}")
    return value


def build(cls, data: dict, text: str = "", table: str = "", index: int = 0, path: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(f"[{table}] must be a table", find_line(text, table, None, index), path)
    known = {f.name: f for f in fields(cls)}
    kw = {}
    for k, v in data.items():
        if k not in known:
            raise ConfigError(f"unknown key {k!r} in [{table}]", find_line(text, table, k, index), path)
        sub = NESTED.get((cls, k))
        if sub is not None:
            if not isinstance(v, list):
                raise ConfigError(f"[[{table}.{k}]] must be an array of tables", find_line(text, table, k, index), path)
            kw[k] = [build(sub, e, text, f"{table}.{k}", i, path) for i, e in enumerate(v)]
            continue
        try:
            kw[k] = _coerce(k, v, known[k].default, str(known[k].type))
        except TypeError as e:
            raise ConfigError(str(e), find_line(text, table, k, index), path) from None
    return cls(**kw)


def parse(text: str, path: str = "") -> ScenarioConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        m = re.search(r"line (\d+)", str(e))
        raise ConfigError(f"syntax error: {e}", int(m.group(1)) if m else None, path) from None
    kw: Dict[str, Any] = {}
    for k, v in raw.items():
        if k not in SECTIONS:
            raise ConfigError(f"unknown section [{k}]", find_line(text, k), path)
        cls, many = SECTIONS[k]
        if many:
            if not isinstance(v, list):
                raise ConfigError(f"{k} must be written as [[{k}]]", find_line(text, k), path)
            kw[k] = [build(cls, e, text, k, i, path) for i, e in enumerate(v)]
        else:
            kw[k] = build(cls, v, text, k, 0, path)
    cfg = ScenarioConfig(**kw, source=path)
    check(cfg, text, path)
    return cfg


def load(path) -> ScenarioConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e.strerror}", None, str(p)) from None
    return parse(text, str(p))


# --- consistency --------------------------------------------------------------

def check(cfg: ScenarioConfig, text: str = "", path: str = ""):
    exp = cfg.scenario.experiment
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {', '.join(EXPERIMENTS)}, got {exp!r}",
                          find_line(text, "scenario", "experiment"), path)
    if cfg.scenario.duration_s <= 0:
        raise ConfigError("duration_s must be > 0", find_line(text, "scenario", "duration_s"), path)
    need = {"mitigation": "mitigation", "rx": "rx", "offload": "offload", "distributed": "distributed"}[exp]
    if getattr(cfg, need) is None:
        raise ConfigError(f"experiment {exp!r} needs a [{need}] section", find_line(text, "scenario"), path)
    if exp in ("mitigation", "rx") and not cfg.traffic:
        raise ConfigError(f"experiment {exp!r} needs at least one [[traffic]] entry", None, path)
    names = {}
    for i, f in enumerate(cfg.flows):
        if not f.name:
            raise ConfigError("flow needs a name", find_line(text, "flows", None, i), path)
        if f.name in names:
            raise ConfigError(f"duplicate flow {f.name!r}", find_line(text, "flows", "name", i), path)
        names[f.name] = f
    ports = {f.port for f in cfg.flows}
    for i, r in enumerate(cfg.receivers):
        if r.flow not in names:
            raise ConfigError(f"receiver refers to unknown flow {r.flow!r}", find_line(text, "receivers", "flow", i), path)
    if cfg.nic is not None:
        ids = set()
        for i, q in enumerate(cfg.nic.queues):
            if q.queue_id in ids:
                raise ConfigError(f"duplicate queue_id {q.queue_id}", find_line(text, "nic.queues", "queue_id", i), path)
            ids.add(q.queue_id)
            if q.port and q.port not in ports:
                raise ConfigError(f"NIC queue port {q.port} has no matching flow",
                                  find_line(text, "nic.queues", "port", i), path)
    for i, ax in enumerate(cfg.sweep):
        try:
            _sweep_target(cfg, ax.param)
        except KeyError:
            raise ConfigError(f"sweep param {ax.param!r} does not name a key of a present section",
                              find_line(text, "sweep", "param", i), path) from None
        if not ax.values:
            raise ConfigError("sweep needs at least one value", find_line(text, "sweep", "values", i), path)


def _sweep_target(cfg: ScenarioConfig, param: str):
    """(section name, list index or None, key, field) for a sweep param; KeyError if it names nothing."""
    parts = param.split(".")
    sec = parts[0]
    if sec not in SECTIONS or sec == "sweep":
        raise KeyError(param)
    if SECTIONS[sec][1]:
        if len(parts) != 3 or not parts[1].isdigit():
            raise KeyError(param)
        idx, key = int(parts[1]), parts[2]
        items = getattr(cfg, sec)
        if idx >= len(items):
            raise KeyError(param)
        target = items[idx]
    else:
        if len(parts) != 2:
            raise KeyError(param)
        idx, key = None, parts[1]
        target = getattr(cfg, sec)
        if target is None:
            raise KeyError(param)
    f = {f.name: f for f in fields(target)}.get(key)
    if f is None:
        raise KeyError(param)
    return sec, idx, key, f


def traffic_ports(cfg: ScenarioConfig) -> List[int]:
    return sorted({t.dst_port for t in cfg.traffic})


def warnings(cfg: ScenarioConfig) -> List[str]:
    """Soft problems: traffic aimed at ports no flow listens on, NIC timer-bound violations."""
    out = []
    ports = {f.port for f in cfg.flows}
    if cfg.scenario.experiment == "rx":
        for p in traffic_ports(cfg):
            if p and p not in ports:
                out.append(f"traffic to port {p} matches no flow")
    if cfg.nic is not None and cfg.nic.queues:
        from .nic import validate_config
        qs = nic_queue_configs(cfg)
        t_d = {q.queue_id: q.t_d for q in cfg.nic.queues if q.t_d}
        t_p = {}
        for q in cfg.nic.queues:
            for f in cfg.flows:
                if f.port == q.port and f.t_p:
                    t_p[q.queue_id] = f.t_p
        out += [str(v) for v in validate_config(qs, cfg.nic.t_netstack, t_d, t_p)]
    return out


def nic_queue_configs(cfg: ScenarioConfig):
    from .nic import NicQueueConfig
    return [NicQueueConfig(q.queue_id, q.port, q.n_q, q.t_abs, q.t_pack, q.counter_threshold, q.r_max,
                           q.periodic_abs) for q in cfg.nic.queues]


# --- sweeps -------------------------------------------------------------------

def sweep_points(cfg: ScenarioConfig) -> List[Tuple[Dict[str, Any], ScenarioConfig]]:
    """Every grid point as (assignments, concrete config). No sweep -> one point."""
    if not cfg.sweep:
        return [({}, cfg)]
    out = []
    for combo in itertools.product(*[ax.values for ax in cfg.sweep]):
        c = cfg
        assign = {}
        for ax, v in zip(cfg.sweep, combo):
            sec, idx, key, f = _sweep_target(c, ax.param)
            v = _coerce(key, v, f.default, str(f.type))
            if idx is None:
                c = replace(c, **{sec: replace(getattr(c, sec), **{key: v})})
            else:
                items = list(getattr(c, sec))
                items[idx] = replace(items[idx], **{key: v})
                c = replace(c, **{sec: items})
            assign[ax.param] = v
        out.append((assign, replace(c, sweep=[])))
    return out


def point_label(assign: Dict[str, Any]) -> str:
    if not assign:
        return "run"
    parts = []
    for k, v in assign.items():
        parts.append(f"{k.split('.')[-1]}={v}")
    return "_".join(parts)
