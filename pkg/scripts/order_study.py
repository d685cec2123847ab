"""Local log-log slopes of the convergence error and symplecticity residual over a wide step range.

    python scripts/order_study.py --system modified_pendulum --y 1,1 --K 1,10

A three-point fit hides how the local slope wanders before the asymptotic
regime; this prints every consecutive pair so the pre-asymptotic region and
the noise floor are both visible.
"""

import argparse
import math
import sys

from psnn import integrators as integ
from psnn.systems import SYSTEM_NAMES, builtin


def local_slopes(rows):
    return [math.log(r1 / r2) / math.log(h1 / h2) for (h1, r1), (h2, r2) in zip(rows, rows[1:])]


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--system", default="modified_pendulum", choices=SYSTEM_NAMES)
    p.add_argument("--y", default="1,1", help="evaluation state, comma-separated")
    p.add_argument("--mode", default="symplecticity", choices=("symplecticity", "convergence"))
    p.add_argument("--steps", default="0.5,0.4,0.35,0.3,0.25,0.2,0.15,0.1")
    p.add_argument("--K", default="1", help="comma-separated composition counts")
    args = p.parse_args(argv)

    sys_ = builtin(args.system)
    y = tuple(float(v) for v in args.y.split(","))
    steps = [float(h) for h in args.steps.split(",")]
    for K in (int(k) for k in args.K.split(",")):
        rows = integ.order_measurements(sys_, y, steps, args.mode, K=K)
        print(f"K={K}")
        slopes = local_slopes(rows) + [float("nan")]
        for (h, r), s in zip(rows, slopes):
            note = "  (noise floor)" if r < integ.NOISE_FLOOR else ""
            print(f"  h={h:<6g} value={r:.4e}  slope to next={s:6.2f}{note}")
        fit_rows = [(h, r) for h, r in rows if r >= integ.NOISE_FLOOR]
        print(f"  least-squares slope above noise floor: {integ.fit_slope(*zip(*fit_rows)):.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
