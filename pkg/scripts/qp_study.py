"""Interior-point iteration counts and accuracy on random QPs.

Compares the fixed and adaptive fraction-to-boundary settings against the
exhaustive active-set reference in ``tests/oracles.py``.

    python3 scripts/qp_study.py --samples 1000
"""
import argparse
import os
import sys

import numpy as np

from cartpole_nmpc.qp import QpSettings, QpSubproblem, solve_qp

sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "tests"))
from oracles import active_set_qp, random_qp  # noqa: E402


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--samples", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    variants = {
        "tau=0.995": QpSettings(),
        "adaptive": QpSettings(adaptive_tau=True),
        "tau=0.9": QpSettings(tau=0.9),
    }
    rng = np.random.default_rng(args.seed)
    problems = [random_qp(rng) for _ in range(args.samples)]
    oracles = [active_set_qp(*p) for p in problems]
    for name, s in variants.items():
        iters, errs = [], []
        for (h, g, a, b), ref in zip(problems, oracles):
            sol = solve_qp(QpSubproblem.from_hessian(h, g, a, b), settings=s)
            iters.append(sol.iterations_used)
            errs.append(np.max(np.abs(sol.step - ref)))
        iters, errs = np.array(iters), np.array(errs)
        print(f"{name:10s} iters mean {iters.mean():5.2f} max {iters.max():3d}   "
              f"|p - ref| median {np.median(errs):.1e} max {errs.max():.1e}")


if __name__ == "__main__":
    main()
