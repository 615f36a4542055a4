#!/usr/bin/env python3
"""Time the gini stage over synthetic snapshots (default 32 tokens x 100k holders)."""

import argparse
import sys
import tempfile
import time

from daogini.bench import time_gini_stage, write_snapshots


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--tokens", type=int, default=32)
    ap.add_argument("--holders", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--budget", type=float, default=5.0, help="seconds")
    args = ap.parse_args(argv)

    with tempfile.TemporaryDirectory() as tmp:
        t0 = time.perf_counter()
        paths = write_snapshots(tmp, args.tokens, args.holders, args.seed)
        print(f"wrote {len(paths)} snapshots in {time.perf_counter() - t0:.2f} s")
        elapsed, rows = time_gini_stage(paths)
    failed = [r for r in rows if r.error]
    print(f"gini stage: {elapsed:.2f} s for {args.tokens} x {args.holders} "
          f"({'within' if elapsed < args.budget else 'OVER'} {args.budget:g} s budget)")
    if failed:
        print(f"{len(failed)} rows failed, first: {failed[0].error}")
    return 0 if elapsed < args.budget and not failed else 1


if __name__ == "__main__":
    sys.exit(main())
