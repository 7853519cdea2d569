"""Command-line entry point: ``dftopk {bench,gradcheck,train,sweep-tau}``.

Exit status: 0 success, 1 validation/usage error, 2 gradcheck failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from dftopk import bench as bench_mod
from dftopk import gradcheck
from dftopk.cascade import TrainingDiverged, metrics_csv, streaming_evaluate
from dftopk.config import RunConfig, load_config
from dftopk.core import ValidationError
from dftopk.model import save_model

log = logging.getLogger("dftopk")

EXIT_OK, EXIT_INVALID, EXIT_GRADCHECK = 0, 1, 2
SWEEP_HEADER = "tau,joint_recall,sum_deviation_mean"


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _int_list(text):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise UsageError("empty list")
    return vals


def _float_list(text):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise UsageError("empty list")
    return vals


def _write(path, text):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")


def cmd_bench(args):
    sizes = _int_list(args.sizes)
    if any(n < 2 for n in sizes):
        raise UsageError("every size must be >= 2")
    ops = [o.strip() for o in args.ops.split(",") if o.strip()]
    for op in ops:
        if op not in bench_mod.OPERATORS:
            raise UsageError(f"unknown operator {op!r}; choose from {','.join(bench_mod.OPERATORS)}")
    if args.reps < 1 or args.warmup < 0:
        raise UsageError("--reps must be >= 1 and --warmup >= 0")
    rows, slopes = bench_mod.run_bench(sizes, ops, args.reps, args.warmup, args.seed, args.batch)
    _write(args.out, bench_mod.bench_csv(rows))
    for op, s in slopes.items():
        print(f"slope {op} {s:.3f}", file=sys.stderr)
    return EXIT_OK


def cmd_gradcheck(args):
    if args.instances < 1:
        raise UsageError("--instances must be >= 1")
    workers = args.workers if args.workers is not None else 1
    workers = max(1, min(workers, gradcheck.thread_cap()))
    backward = gradcheck.flipped_loss_backward if args.corrupt else None
    reports = gradcheck.run_property_suite(args.seed, args.instances, backward, workers=workers)
    text = gradcheck.format_reports(reports)
    print(text)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "gradcheck.txt").write_text(text + "\n", encoding="utf-8")
        (out / "gradcheck.csv").write_text(gradcheck.reports_csv(reports), encoding="utf-8")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_GRADCHECK


def run_train(cfg: RunConfig, out_dir):
    """Streaming run per loss kind; writes metrics.csv and model_<kind>.bin."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for kind in cfg.loss_kinds:
        kind_rows, model = streaming_evaluate(cfg.for_kind(kind))
        rows.extend(kind_rows)
        save_model(model, out / f"model_{kind}.bin")
    (out / "metrics.csv").write_text(metrics_csv(rows), encoding="utf-8")
    return rows


def cmd_train(args):
    cfg = load_config(args.config, args.set)
    run_train(cfg, args.out_dir)
    print(f"wrote {Path(args.out_dir) / 'metrics.csv'}")
    return EXIT_OK


def run_sweep(cfg: RunConfig, taus=None):
    """Final-day joint recall and mean sum deviation per tau (dftopk loss)."""
    taus = cfg.taus if taus is None else taus
    lines = [SWEEP_HEADER]
    base = cfg.for_kind("dftopk")
    for tau in taus:
        if not tau > 0:
            raise UsageError(f"tau must be positive, got {tau}")
        tc = replace(base, tau=float(tau), days=cfg.sweep_days, pvs_per_day=cfg.sweep_pvs_per_day)
        rows, _ = streaming_evaluate(tc)
        last = rows[-1]
        lines.append(f"{tau!r},{last.joint_recall:.6f},{last.sum_deviation:.6f}")
        log.info("tau=%g joint=%.4f", tau, last.joint_recall)
    return "\n".join(lines) + "\n"


def cmd_sweep_tau(args):
    cfg = load_config(args.config, args.set)
    taus = _float_list(args.taus) if args.taus else None
    _write(args.out, run_sweep(cfg, taus))
    return EXIT_OK


def build_parser():
    p = _Parser(prog="dftopk", description="DFTopK operator toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    b = sub.add_parser("bench", help="time forward+backward per operator and size")
    b.add_argument("--sizes", default=",".join(map(str, bench_mod.DEFAULT_SIZES)))
    b.add_argument("--reps", type=int, default=200)
    b.add_argument("--warmup", type=int, default=20)
    b.add_argument("--ops", default=",".join(bench_mod.OPERATORS))
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--batch", type=int, default=None, help="time a (batch, N) input instead of one vector")
    b.add_argument("--out", default=None, help="CSV path (default stdout)")
    b.set_defaults(func=cmd_bench)

    g = sub.add_parser("gradcheck", help="operator property and gradient suite")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--instances", type=int, default=1000)
    g.add_argument("--workers", type=int, default=None, help="processes, capped by DFTOPK_THREADS")
    g.add_argument("--out-dir", default=None)
    g.add_argument("--corrupt", action="store_true",
                   help="self-test: check a sign-flipped backward, which must fail (exit 2)")
    g.set_defaults(func=cmd_gradcheck)

    t = sub.add_parser("train", help="streaming cascade training run")
    t.add_argument("--config", default=None)
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    t.add_argument("--out-dir", default="runs/train")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep-tau", help="final-day joint recall across temperatures")
    s.add_argument("--taus", default=None, help="comma-separated (default from config)")
    s.add_argument("--config", default=None)
    s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    s.add_argument("--out", default=None, help="CSV path (default stdout)")
    s.set_defaults(func=cmd_sweep_tau)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    np.seterr(over="ignore", under="ignore")
    try:
        return args.func(args)
    except TrainingDiverged as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (ValidationError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
