"""Operator timing grid (K = N // 2), CSV to results/bench.csv, slopes to stdout."""

import argparse
from pathlib import Path

from dftopk.bench import DEFAULT_SIZES, OPERATORS, bench_csv, run_bench

p = argparse.ArgumentParser()
p.add_argument("--reps", type=int, default=200)
p.add_argument("--warmup", type=int, default=20)
p.add_argument("--out", default="results/bench.csv")
args = p.parse_args()

rows, slopes = run_bench(DEFAULT_SIZES, OPERATORS, args.reps, args.warmup)
Path(args.out).parent.mkdir(parents=True, exist_ok=True)
Path(args.out).write_text(bench_csv(rows))
for r in rows:
    print(f"{r.operator:14s} N={r.n:5d} median={r.median_ns / 1e3:10.1f} us")
for op, s in slopes.items():
    print(f"slope {op}: {s:.3f}")
