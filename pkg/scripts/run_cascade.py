"""15-day streaming comparison of all loss kinds, noisy and noiseless streams."""

import argparse
from pathlib import Path

from dftopk.cli import run_train
from dftopk.config import load_config

p = argparse.ArgumentParser()
p.add_argument("--out-dir", default="results/cascade")
p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
args = p.parse_args()

kinds = "loss_kinds=dftopk,pointwise_bce,neuralsort,softsort"
for name, extra in (("noisy", []), ("noiseless", ["noise=0"])):
    cfg = load_config(None, [kinds, *extra, *args.set])
    rows = run_train(cfg, Path(args.out_dir) / name)
    last = max(r.day for r in rows)
    for r in rows:
        if r.day == last:
            print(f"{name:9s} {r.loss_kind:14s} joint={r.joint_recall:.4f} "
                  f"retrieval={r.retrieval_recall:.4f} ranking={r.ranking_recall:.4f}")
