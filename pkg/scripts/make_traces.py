"""Write the synthetic app traces (bursty streaming, continuous call) as trace files."""
import argparse
import sys

import numpy as np

from rtnetsim.traffic import synthetic_trace, write_trace


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seconds", type=float, default=60)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--port", type=int, default=5001)
    ap.add_argument("--prefix", default="synthetic")
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    for style in ("bursty", "continuous"):
        recs = synthetic_trace(style, int(args.seconds * 1e6), rng, args.port, style)
        path = f"{args.prefix}-{style}.csv"
        write_trace(path, recs)
        print(f"{path}: {len(recs)} records")
    return 0


if __name__ == "__main__":
    sys.exit(main())
