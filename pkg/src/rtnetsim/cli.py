"""Command line: run / compare / validate scenario files.

Exit codes: 0 ok, 1 config error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path
from typing import List, Optional

from .config import ConfigError, load, warnings

log = logging.getLogger("rtnetsim")

OUT_ENV = "RTNETSIM_OUT"
OK, CONFIG_ERROR, RUNTIME_ERROR = 0, 1, 2


def bundled(name: str) -> Path:
    """Path of a bundled scenario, by name with or without .toml."""
    stem = name[:-5] if name.endswith(".toml") else name
    return Path(str(resources.files("rtnetsim") / "scenarios" / f"{stem}.toml"))


def bundled_names() -> List[str]:
    d = resources.files("rtnetsim") / "scenarios"
    return sorted(p.name[:-5] for p in d.iterdir() if p.name.endswith(".toml"))


def resolve(path: str) -> Path:
    p = Path(path)
    if p.exists():
        return p
    b = bundled(path)
    return b if b.exists() else p


def _load(path: str, strict: bool):
    cfg = load(resolve(path))
    warns = warnings(cfg)
    for w in warns:
        log.warning("%s", w)
    if strict and warns:
        raise ConfigError(f"{len(warns)} warning(s) with --strict", None, cfg.source)
    return cfg


def cmd_run(args) -> int:
    from .experiments import run_scenario
    try:
        cfg = _load(args.config, args.strict)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return CONFIG_ERROR
    if args.seed is not None:
        cfg = replace(cfg, scenario=replace(cfg.scenario, seed=args.seed))
    out = args.out or os.environ.get(OUT_ENV) or os.path.join("runs", cfg.scenario.name)
    try:
        files = run_scenario(cfg, out, jobs=args.jobs)
    except (ValueError, OSError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return RUNTIME_ERROR
    print(f"{cfg.scenario.name}: {len(files) - 1} point(s) -> {out}")
    return OK


def cmd_validate(args) -> int:
    try:
        cfg = _load(args.config, args.strict)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return CONFIG_ERROR
    print(f"{cfg.scenario.name}: ok ({cfg.scenario.experiment})")
    return OK


def read_summary(d: str):
    p = Path(d) / "summary.csv"
    with open(p, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise ValueError(f"{p} is empty")
    return rows[0], rows[1:]


def _num(s: str) -> Optional[float]:
    try:
        return float(s)
    except ValueError:
        return None


def compare(a: str, b: str) -> List[dict]:
    """Per-metric deltas and ratios between two runs' summaries (b relative to a)."""
    ha, ra = read_summary(a)
    hb, rb = read_summary(b)
    if ha != hb or len(ra) != len(rb):
        raise ValueError("runs have different summary schemas")
    out = []
    for rowa, rowb in zip(ra, rb):
        point = rowa[0]
        va = dict(zip(ha, rowa))
        vb = dict(zip(hb, rowb))
        for col in ha[1:]:
            x, y = _num(va[col]), _num(vb[col])
            if x is None or y is None:
                continue
            out.append({"point": point, "metric": col, "a": x, "b": y, "delta": y - x,
                        "ratio": (y / x) if x else (1.0 if y == 0 else float("inf"))})
        if "irqs" in va:
            ia, ib = _num(va["irqs"]), _num(vb["irqs"])
            if ia:
                out.append({"point": point, "metric": "irq_prevention_pct", "a": 0.0, "b": (1 - ib / ia) * 100,
                            "delta": (1 - ib / ia) * 100, "ratio": ib / ia})
        if "us_per_pkt" in va:
            ua, ub = _num(va["us_per_pkt"]), _num(vb["us_per_pkt"])
            if ub:
                out.append({"point": point, "metric": "cpu_per_pkt_speedup", "a": ua, "b": ub,
                            "delta": ub - ua, "ratio": ua / ub})
    return out


def cmd_compare(args) -> int:
    from .experiments import fmt
    try:
        rows = compare(args.a, args.b)
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return RUNTIME_ERROR
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["point", "metric", "a", "b", "delta", "ratio"])
    for r in rows:
        w.writerow([r["point"], r["metric"]] + [fmt(r[k]) for k in ("a", "b", "delta", "ratio")])
    return OK


def cmd_list(args) -> int:
    for n in bundled_names():
        print(n)
    return OK


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rtnetsim", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run a scenario (file path or bundled name)")
    r.add_argument("config")
    r.add_argument("--out", help=f"output directory (default ${OUT_ENV} or runs/<name>)")
    r.add_argument("--seed", type=int)
    r.add_argument("--strict", action="store_true", help="treat warnings as config errors")
    r.add_argument("--jobs", type=int, default=1, help="sweep points to run in parallel")
    r.set_defaults(fn=cmd_run)
    c = sub.add_parser("compare", help="compare two run directories")
    c.add_argument("a")
    c.add_argument("b")
    c.set_defaults(fn=cmd_compare)
    v = sub.add_parser("validate", help="parse and check a scenario")
    v.add_argument("config")
    v.add_argument("--strict", action="store_true")
    v.set_defaults(fn=cmd_validate)
    ls = sub.add_parser("list", help="list bundled scenarios")
    ls.set_defaults(fn=cmd_list)
    return p


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
