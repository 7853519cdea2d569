"""Final-day joint recall of the dftopk cascade across the temperature grid."""

import argparse
from pathlib import Path

from dftopk.cli import run_sweep
from dftopk.config import load_config

p = argparse.ArgumentParser()
p.add_argument("--out", default="results/sweep_tau.csv")
p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
args = p.parse_args()

text = run_sweep(load_config(None, args.set))
Path(args.out).parent.mkdir(parents=True, exist_ok=True)
Path(args.out).write_text(text)
print(text, end="")
