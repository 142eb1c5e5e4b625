"""Time-step sensitivity of the one-maturity skew, swap gaps and vol swap.

Runs the same seed at several step counts so differences are mostly
discretisation rather than sampling noise.

    python3 scripts/step_study.py --tau 0.003968 --paths 200000
"""

import argparse

from vanna_lab.smile_lab import run_rung
from vanna_lab.sv_engine import GridSpec, ModelSpec


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tau", type=float, default=1 / 252)
    ap.add_argument("--paths", type=int, default=200_000)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--steps", type=int, nargs="+", default=[16, 32, 64, 128, 256])
    args = ap.parse_args()

    m = ModelSpec(1.0, 0.2, 0.6, -0.7, args.tau)
    norm = m.sigma0**2 * m.tau
    print(f"{'steps':>6} {'q_skew':>10} {'q_zv':>10} {'vol_swap':>12} {'gap-':>11}")
    for steps in args.steps:
        r = run_rung(m, GridSpec(args.paths, args.seed, steps))
        print(f"{steps:6d} {r.skew.slope:10.5f} {r.zv_diff / norm:10.5f} "
              f"{r.swaps['vol_swap'].value:12.8f} {r.gap_minus.value:11.3e}")


if __name__ == "__main__":
    main()
