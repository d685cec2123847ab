"""Activation comparison: best-of-seeds trajectory error per comparison column.

    python scripts/compare_activations.py --example example1 --seeds 0,1,2 --out results/ex1.csv
"""

import argparse
import csv
import sys
import time
from dataclasses import replace
from pathlib import Path

from psnn import experiments, presets


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--example", default="example1", choices=tuple(presets.EXPERIMENTS))
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--lr", type=float, help="override the preset learning rate")
    p.add_argument("--only", help="comma-separated activations to run")
    p.add_argument("--n-eval", type=int, default=60000)
    p.add_argument("--out", type=Path)
    args = p.parse_args(argv)

    base = presets.experiment(args.example)
    if args.lr is not None:
        base = replace(base, train=replace(base.train, lr=args.lr))
    seeds = [int(s) for s in args.seeds.split(",")]
    only = set(args.only.split(",")) if args.only else None
    reported = presets.REPORTED_ERRORS.get(args.example, {})

    rows = []
    for kind, N, S in experiments.comparison_columns(base):
        if only and kind not in only:
            continue
        exp = base.with_activation(kind, N, S)
        for seed in seeds:
            t0 = time.time()
            r = experiments.run(exp, seed, n_eval=args.n_eval)
            row = {**r.row(), "seconds": round(time.time() - t0, 1)}
            rows.append(row)
            print(", ".join(f"{k}={v}" for k, v in row.items()), flush=True)

    print("\nbest of seeds:")
    for kind, N, S in experiments.comparison_columns(base):
        errs = [r["trajectory_error"] for r in rows if (r["activation"], r["N"], r["S"]) == (kind, N, S)]
        if errs:
            idx = [c for c in base.comparison[kind]].index((N, S))
            ref = reported.get(kind, [None] * (idx + 1))[idx]
            print(f"  {kind:7s} N={N:<6d} S={S:<3d} {min(errs):.4f}  (reported {ref})")

    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
