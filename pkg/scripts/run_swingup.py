"""Run the checked-in swing-up scenario and print a coarse trace.

    python3 scripts/run_swingup.py [--config configs/default.cfg] [--out-dir out/swingup]
"""
import argparse
import json
import os
import time

import numpy as np

from cartpole_nmpc.harness import ScenarioConfig, emit_outputs, run_episode

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def settle_time(sim, tol=0.05):
    """First logged time after which |p| and |theta| stay below ``tol``."""
    ok = (np.abs(sim.column("p")) < tol) & (np.abs(sim.column("theta")) < tol)
    bad = np.flatnonzero(~ok)
    if bad.size == 0:
        return 0.0
    if bad[-1] + 1 >= len(ok):
        return None
    return float(sim.column("t")[bad[-1] + 1])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=os.path.join(ROOT, "configs", "default.cfg"))
    ap.add_argument("--out-dir")
    ap.add_argument("--every", type=float, default=0.5, help="trace interval in seconds")
    args = ap.parse_args()

    cfg = ScenarioConfig.from_file(args.config)
    started = time.perf_counter()
    sim = run_episode(cfg)
    wall = time.perf_counter() - started
    out_dir = args.out_dir or cfg.out_dir
    emit_outputs(sim, out_dir, cfg.plot_data)

    stride = max(1, int(round(args.every / cfg.dt)))
    print(f"{'t':>6} {'p':>9} {'theta':>9} {'F':>8} {'sqp':>4} {'qp':>4} {'ms':>7}  status")
    for row in sim.rows[::stride]:
        print(f"{row['t']:6.2f} {row['p']:9.4f} {row['theta']:9.4f} {row['F']:8.3f} "
              f"{row['sqp_iters']:4d} {row['qp_iters']:4d} {row['solve_ms']:7.1f}  {row['status']}")
    summary = sim.summary()
    summary["settle_time_s"] = settle_time(sim)
    summary["wall_s"] = wall
    summary["min_p"] = float(np.min(sim.column("p")))
    summary["max_abs_F"] = float(np.max(np.abs(sim.column("F"))))
    print(json.dumps({k: summary[k] for k in ("terminal_error", "settle_time_s", "min_p", "max_abs_F",
                                             "avg_solve_ms", "max_solve_ms", "constraint_violations_count",
                                             "max_model_mismatch", "wall_s")}, indent=2))
    print(f"outputs in {out_dir}")


if __name__ == "__main__":
    main()
