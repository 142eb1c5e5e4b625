"""Print the short-maturity ladder of normalised skew, covariance and zero-vanna spread.

    python3 scripts/slope_ladder.py --paths 400000 --seed 20240601
"""

import argparse
import time

from vanna_lab.smile_lab import convergence_order, limit_experiment
from vanna_lab.sv_engine import GridSpec, ModelSpec

LADDER = [1 / 12, 1 / 26, 1 / 52, 1 / 126, 1 / 252]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sigma0", type=float, default=0.2)
    ap.add_argument("--alpha", type=float, default=0.6)
    ap.add_argument("--rho", type=float, default=-0.7)
    ap.add_argument("--paths", type=int, default=200_000)
    ap.add_argument("--seed", type=int, default=20240601)
    ap.add_argument("--steps", type=int, default=None)
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args()

    m = ModelSpec(1.0, args.sigma0, args.alpha, args.rho, LADDER[0])
    start = time.perf_counter()
    rep = limit_experiment(m, GridSpec(args.paths, args.seed, args.steps), LADDER, threads=args.threads)
    print(f"{'tau':>9} {'q_skew':>10} {'q_cov':>10} {'q_zv':>10} {'gap-':>11} {'gap+':>11}")
    for r, a, b, c in zip(rep.rungs, rep.q_skew, rep.q_cov, rep.q_zv):
        print(f"{r.tau:9.5f} {a.value:10.5f} {b.value:10.5f} {c.value:10.5f} "
              f"{r.gap_minus.value:11.3e} {r.gap_plus.value:11.3e}")
    q = rep.extrapolated
    print(f"{'tau->0':>9} {q[0].value:10.5f} {q[1].value:10.5f} {q[2].value:10.5f}")
    print(f"{'+-':>9} {q[0].std_error:10.5f} {q[1].std_error:10.5f} {q[2].std_error:10.5f}")
    print(f"reference rho*alpha/4 = {rep.reference_slope:.5f}")
    for side in ("minus", "plus"):
        order, se = convergence_order(rep.taus, [getattr(r, "gap_" + side) for r in rep.rungs])
        print(f"gap_{side} order {order:.3f} +- {se:.3f}")
    print(f"{time.perf_counter() - start:.1f} s")


if __name__ == "__main__":
    main()
