"""Wall-clock scaling of one loss forward + backward per operator.

Each rep draws fresh standard-normal scores and random labels with K
positives, K = floor(N/2), and times forward and backward together with
``perf_counter_ns``. The median over the timed reps is reported; a
least-squares slope of log(time) on log(N) over the largest half of the
size grid summarizes the scaling.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass

import numpy as np

from dftopk import baselines
from dftopk.core import (
    TopKConfig,
    ValidationError,
    bce_grad,
    bce_loss,
    dftopk_loss,
    dftopk_loss_backward,
    strict_topk_forward,
    strict_topk_vjp,
)

OPERATORS = ("dftopk", "neuralsort", "softsort", "strict_bisect")
DEFAULT_SIZES = (5, 10, 50, 100, 500, 1000)
BENCH_HEADER = ("operator", "n", "k", "median_ns", "reps", "warmup")


@dataclass(frozen=True)
class BenchRow:
    operator: str
    n: int
    k: int
    median_ns: int
    reps: int
    warmup: int


def _step(op, x, y, k, tau=1.0):
    if op == "dftopk":
        cfg = TopKConfig(k, tau)
        dftopk_loss(x, y, cfg)
        dftopk_loss_backward(x, y, cfg)
    elif op in baselines.KINDS:
        baselines.permutation_loss(x, y, k, tau, op)
        baselines.permutation_loss_backward(x, y, k, tau, op)
    elif op == "strict_bisect":
        cfg = TopKConfig(k, tau)
        p = strict_topk_forward(x, cfg)
        bce_loss(p, y)
        strict_topk_vjp(x, cfg, bce_grad(p, y))
    else:
        raise ValidationError(f"unknown operator {op!r}")


def _inputs(rng, n, k, batch):
    shape = (n,) if batch is None else (batch, n)
    x = rng.standard_normal(shape)
    y = np.zeros(shape)
    pos = np.argsort(rng.random(shape), axis=-1)[..., :k]
    np.put_along_axis(y, pos, 1.0, axis=-1)
    return x, y


def time_operator(op, n, reps=200, warmup=20, seed=0, batch=None) -> BenchRow:
    if n < 2:
        raise ValidationError(f"size {n} < 2")
    if op not in OPERATORS:
        raise ValidationError(f"unknown operator {op!r}; choose from {OPERATORS}")
    if batch is not None and op == "strict_bisect":
        raise ValidationError("strict_bisect runs on single vectors only")
    k = n // 2
    rng = np.random.default_rng([seed, n])
    times = []
    for i in range(warmup + reps):
        x, y = _inputs(rng, n, k, batch)
        t0 = time.perf_counter_ns()
        _step(op, x, y, k)
        t1 = time.perf_counter_ns()
        if i >= warmup:
            times.append(t1 - t0)
    return BenchRow(op, n, k, int(np.median(times)), reps, warmup)


def loglog_slope(rows) -> float:
    """Least-squares slope of log median time on log N over the largest half of sizes."""
    rows = sorted(rows, key=lambda r: r.n)
    top = rows[len(rows) // 2:] if len(rows) > 2 else rows
    if len(top) < 2:
        return float("nan")
    lx = np.log([r.n for r in top])
    ly = np.log([max(r.median_ns, 1) for r in top])
    return float(np.polyfit(lx, ly, 1)[0])


def run_bench(sizes=DEFAULT_SIZES, ops=OPERATORS, reps=200, warmup=20, seed=0, batch=None):
    """All rows plus ``{operator: slope}``."""
    if reps < 1 or warmup < 0:
        raise ValidationError("reps must be >= 1 and warmup >= 0")
    rows = [time_operator(op, n, reps, warmup, seed, batch) for op in ops for n in sizes]
    slopes = {op: loglog_slope([r for r in rows if r.operator == op]) for op in ops}
    return rows, slopes


def bench_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BENCH_HEADER)
    for r in rows:
        w.writerow((r.operator, r.n, r.k, r.median_ns, r.reps, r.warmup))
    return buf.getvalue()
