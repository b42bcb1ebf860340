"""Packet arrival generators and the plain-text trace format."""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional

import numpy as np

US_PER_S = 1_000_000
TRACE_HEADER = "t_us,length,dst_port,src_id"


@dataclass(frozen=True, slots=True)
class TraceRecord:
    t: int
    length: int = 0
    dst_port: int = 0
    src_id: str = ""
    fragmented: bool = False


class TraceError(ValueError):
    pass


@dataclass
class LoadSpec:
    kind: str = "uniform"
    rate: float = 1000.0          # pkt/s; lambda for poisson, peak for pyramid
    duration: int = US_PER_S      # µs
    start: int = 0
    burst_size: int = 0
    burst_gap: int = 0            # µs between burst starts
    step: float = 0.0
    hold: int = 0
    file: Optional[str] = None
    dst_port: int = 0
    length: int = 64
    src_id: str = ""

    def __post_init__(self):
        if self.kind != "trace":
            if not self.rate > 0:
                raise ValueError("rate must be > 0")
            if self.kind != "pyramid" and not self.duration > 0:
                raise ValueError("duration must be > 0")


def _rec(spec: LoadSpec, t: int) -> TraceRecord:
    return TraceRecord(int(t), spec.length, spec.dst_port, spec.src_id)


def uniform_times(rate: float, duration: int, start: int = 0) -> List[int]:
    if rate <= 0:
        raise ValueError("zero rate")
    gap = int(US_PER_S // rate)
    n = int(duration * rate // US_PER_S)
    return [start + i * gap for i in range(n)]


def gen_uniform(spec: LoadSpec) -> List[TraceRecord]:
    if spec.kind != "uniform":
        raise ValueError(f"expected uniform spec, got {spec.kind}")
    return [_rec(spec, t) for t in uniform_times(spec.rate, spec.duration, spec.start)]


def poisson_gap(u: float, lam: float) -> int:
    """Inverse-transform exponential gap in µs for u in (0, 1]."""
    return int(round(-math.log(u) / lam * US_PER_S))


def gen_poisson(spec: LoadSpec, rng: np.random.Generator) -> List[TraceRecord]:
    lam = spec.rate
    if not lam > 0:
        raise ValueError("lambda must be > 0")
    end = spec.start + spec.duration
    out = []
    t = spec.start
    chunk = max(16, int(lam * spec.duration / US_PER_S * 1.1) + 16)
    while True:
        u = 1.0 - rng.random(chunk)  # (0, 1]
        gaps = np.rint(-np.log(u) / lam * US_PER_S).astype(np.int64)
        for g in gaps.tolist():
            t += g
            if t >= end:
                return out
            out.append(_rec(spec, t))


def pyramid_rates(peak: float, step: float) -> List[float]:
    if step <= 0:
        raise ValueError("step must be > 0")
    if peak < step:
        raise ValueError("peak < step")
    ups = []
    r = step
    while r < peak:
        ups.append(r)
        r += step
    ups.append(peak)
    return ups + ups[-2::-1]


def gen_pyramid(spec: LoadSpec) -> List[TraceRecord]:
    if spec.hold <= 0:
        raise ValueError("hold must be > 0")
    out = []
    t0 = spec.start
    for rate in pyramid_rates(spec.rate, spec.step):
        out.extend(_rec(spec, t) for t in uniform_times(rate, spec.hold, t0))
        t0 += spec.hold
    return out


def gen_burst(spec: LoadSpec) -> List[TraceRecord]:
    """`burst_size` packets spaced at 1/rate, one burst every `burst_gap` µs."""
    if spec.burst_size <= 0 or spec.burst_gap <= 0:
        raise ValueError("burst kind needs burst_size and burst_gap")
    gap = int(US_PER_S // spec.rate)
    end = spec.start + spec.duration
    out = []
    b = spec.start
    while b < end:
        for i in range(spec.burst_size):
            t = b + i * gap
            if t >= end:
                break
            out.append(_rec(spec, t))
        b += spec.burst_gap
    out.sort(key=lambda r: r.t)
    return out


def parse_trace_lines(lines: Iterable[str], source: str = "<trace>") -> List[TraceRecord]:
    out: List[TraceRecord] = []
    header_seen = False
    last = -1
    for lineno, raw in enumerate(lines, 1):
        line = raw.rstrip("\n")
        if not header_seen:
            if not line.strip():
                continue
            if not line.startswith(TRACE_HEADER):
                raise TraceError(f"{source}:{lineno}: missing header '{TRACE_HEADER}'")
            header_seen = True
            continue
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) not in (4, 5):
            raise TraceError(f"{source}:{lineno}: expected 4 or 5 fields, got {len(parts)}")
        try:
            t, length, port = int(parts[0]), int(parts[1]), int(parts[2])
            frag = bool(int(parts[4])) if len(parts) == 5 else False
        except ValueError as e:
            raise TraceError(f"{source}:{lineno}: {e}") from None
        if length < 0:
            raise TraceError(f"{source}:{lineno}: negative length")
        if length > 65535:
            raise TraceError(f"{source}:{lineno}: length exceeds 65535")
        if not 0 <= port <= 0xFFFF:
            raise TraceError(f"{source}:{lineno}: dst_port out of 16-bit range")
        if t < last:
            raise TraceError(f"{source}:{lineno}: records not sorted by time")
        last = t
        out.append(TraceRecord(t, length, port, parts[3], frag))
    return out


def load_trace(path) -> List[TraceRecord]:
    p = Path(path)
    with open(p, "r", encoding="ascii", newline="\n") as f:
        return parse_trace_lines(f, str(p))


def write_trace(path, records: Iterable[TraceRecord]) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as f:
        f.write(TRACE_HEADER + ",fragmented\n")
        for r in records:
            f.write(f"{r.t},{r.length},{r.dst_port},{r.src_id},{int(r.fragmented)}\n")


def synthetic_trace(style: str, duration: int, rng: np.random.Generator,
                    dst_port: int = 0, src_id: str = "") -> List[TraceRecord]:
    """Synthetic stand-ins for recorded app traffic (not real captures).

    bursty: on/off chunks of large frames, like a music-streaming buffer refill.
    continuous: steady ~50 pkt/s jittered stream, like a video call.
    """
    out = []
    if style == "bursty":
        t = 0
        while t < duration:
            on = int(rng.uniform(0.3, 1.2) * US_PER_S)
            n = int(on / 700)
            for i in range(n):
                tt = t + i * 700 + int(rng.integers(0, 100))
                if tt >= duration:
                    break
                out.append(TraceRecord(tt, 1460, dst_port, src_id))
            t += on + int(rng.uniform(4, 12) * US_PER_S)
    elif style == "continuous":
        t = 0
        while True:
            t += max(0, int(rng.normal(20000, 3000)))
            if t >= duration:
                break
            out.append(TraceRecord(t, int(rng.integers(200, 1200)), dst_port, src_id))
    else:
        raise ValueError(f"unknown synthetic style {style!r}")
    out.sort(key=lambda r: r.t)
    return out


def generate(spec: LoadSpec, rng: Optional[np.random.Generator] = None) -> List[TraceRecord]:
    kind = spec.kind
    if kind == "uniform":
        return gen_uniform(spec)
    if kind == "poisson":
        if rng is None:
            raise ValueError("poisson load needs an rng stream")
        return gen_poisson(spec, rng)
    if kind == "pyramid":
        return gen_pyramid(spec)
    if kind == "burst":
        return gen_burst(spec)
    if kind == "trace":
        recs = load_trace(spec.file)
        if spec.start:
            recs = [TraceRecord(r.t + spec.start, r.length, r.dst_port, r.src_id, r.fragmented) for r in recs]
        return recs
    raise ValueError(f"unknown load kind {kind!r}")


def merge(*seqs: Iterable[TraceRecord]) -> List[TraceRecord]:
    """Time-ordered merge; ties keep the order of the argument lists."""
    return list(heapq.merge(*seqs, key=lambda r: r.t))
