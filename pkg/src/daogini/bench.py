"""Synthetic holder snapshots for benchmarks and load tests."""

from __future__ import annotations

import random
import time
from datetime import datetime, timezone
from pathlib import Path

from .holders import HolderRecord, HolderSnapshot, save_snapshot
from .pipeline import cmd_gini

CAPTURED_AT = datetime(2024, 1, 1, tzinfo=timezone.utc)


def synthetic_snapshot(symbol: str, n: int, seed: int, pareto_alpha: float = 1.2) -> HolderSnapshot:
    """``n`` distinct holders with Pareto-like 18-decimal balances."""
    rng = random.Random(seed)
    scale = 10**18
    bals = [int(rng.paretovariate(pareto_alpha) * scale) for _ in range(n)]
    # distinct addresses: a per-token prefix plus a running index
    prefix = f"{seed & 0xFFFFFFFF:08x}"
    addrs = [f"0x{prefix}{i:032x}" for i in range(n)]
    records = sorted(zip(addrs, bals), key=lambda r: (-r[1], r[0]))
    return HolderSnapshot(
        token_symbol=symbol,
        token_contract=f"0x{seed + 1:040x}",
        chain_id=1,
        captured_at=CAPTURED_AT,
        decimals=18,
        records=tuple(HolderRecord(a, b) for a, b in records),
        contracts_removed=False,
    )


def write_snapshots(out_dir: str | Path, tokens: int = 32, holders: int = 100_000,
                    seed: int = 0) -> list[Path]:
    out_dir = Path(out_dir)
    paths = []
    for k in range(tokens):
        snap = synthetic_snapshot(f"SYN{k:02d}", holders, seed + k)
        path = out_dir / f"SYN{k:02d}.json"
        save_snapshot(snap, path)
        paths.append(path)
    return paths


def time_gini_stage(paths) -> tuple[float, list]:
    """Wall time of the gini stage (load, validate, five Gini values per file)."""
    t0 = time.perf_counter()
    rows = cmd_gini(paths=[Path(p) for p in paths])
    return time.perf_counter() - t0, rows
