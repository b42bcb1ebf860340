"""Run every bundled scenario into runs/<name>/ and print the headline comparisons."""
import argparse
import csv
import sys
import time
from pathlib import Path

from rtnetsim.cli import bundled, bundled_names, compare
from rtnetsim.config import load
from rtnetsim.experiments import run_scenario


def summary(d):
    with open(d / "summary.csv", newline="") as f:
        return list(csv.DictReader(f))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args(argv)
    out = Path(args.out)
    for name in bundled_names():
        t0 = time.perf_counter()
        run_scenario(load(bundled(name)), str(out / name), jobs=args.jobs)
        print(f"{name:22s} {time.perf_counter() - t0:5.1f} s")

    q, b = summary(out / "queue-500")[0], summary(out / "burst-600")[0]
    print(f"\nqueue-500 vs burst-600: processed {q['pkts_processed']} vs {b['pkts_processed']}, "
          f"lateness {q['lateness_accum_ms']} vs {b['lateness_accum_ms']} ms")
    nic = {r["metric"]: r for r in compare(str(out / "nic-unmoderated"), str(out / "nic-multiqueue"))}
    print(f"multiqueue NIC: {nic['irq_prevention_pct']['b']:.1f}% of interrupts prevented")
    rx = {r["metric"]: r for r in compare(str(out / "rx-flood-baseline"), str(out / "rx-flood-modified"))}
    print(f"LP flood: {rx['cpu_per_pkt_speedup']['ratio']:.1f}x less CPU per packet")
    co = [r["processed_hp"] for r in summary(out / "codesign")]
    base = [r["processed_hp"] for r in summary(out / "codesign-baseline")]
    print(f"HP processed over the LP sweep: co-design {co}, baseline {base}")
    for r in summary(out / "offload-u-sweep"):
        print(f"U={r['U']:>5}  accepted {r['accepted']:>4}  missed {r['missed']:>3}")
    k, b3 = summary(out / "distributed-kill")[0], summary(out / "distributed-3node")[0]
    print(f"node kill: acceptance {float(k['acceptance']):.1%} (lost {k['lost']}), "
          f"3 nodes: {float(b3['acceptance']):.1%}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
