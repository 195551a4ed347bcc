"""Swing-up outcome and solve cost as a function of horizon length.

    python3 scripts/horizon_study.py --horizons 20,30,40,50 [--jobs 4]

Writes ``horizon_study.csv`` into the output directory.
"""
import argparse
import csv
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from cartpole_nmpc.harness import ScenarioConfig, run_episode

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def one(cfg: ScenarioConfig):
    sim = run_episode(cfg)
    s = sim.summary()
    it = sim.column("sqp_iters")
    return {
        "horizon": cfg.horizon,
        "completed": s["completed"],
        "terminal_error": s["terminal_error"],
        "avg_solve_ms": s["avg_solve_ms"],
        "max_solve_ms": s["max_solve_ms"],
        "mean_sqp_iters": float(np.mean(it)) if it.size else float("nan"),
        "violations": s["constraint_violations_count"],
        "min_p": float(np.min(sim.column("p"))) if len(sim) else float("nan"),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=os.path.join(ROOT, "configs", "default.cfg"))
    ap.add_argument("--horizons", default="20,30,40,50")
    ap.add_argument("--jobs", type=int, default=None)
    ap.add_argument("--out-dir", default=os.path.join("out", "horizon_study"))
    args = ap.parse_args()

    base = ScenarioConfig.from_file(args.config)
    cfgs = [base.replace(horizon=int(n)) for n in args.horizons.split(",")]
    with ProcessPoolExecutor(max_workers=args.jobs) as pool:
        rows = list(pool.map(one, cfgs))

    os.makedirs(args.out_dir, exist_ok=True)
    path = os.path.join(args.out_dir, "horizon_study.csv")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(f"N={r['horizon']:3d}  terminal={r['terminal_error']:.2e}  avg={r['avg_solve_ms']:7.1f} ms  "
              f"sqp/tick={r['mean_sqp_iters']:.2f}  min p={r['min_p']:+.3f}  violations={r['violations']}")
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
