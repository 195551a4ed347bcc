"""Command-line front end: ``run``, ``sweep`` and ``check``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from .checks import run_checks
from .harness import ConfigError, OutputError, ScenarioConfig, emit_outputs, run_episode

EXIT_OK, EXIT_FAILURE, EXIT_IO = 0, 1, 2


def _episode(cfg: ScenarioConfig, out_dir: str, ticks=None) -> dict:
    sim = run_episode(cfg, ticks=ticks)
    emit_outputs(sim, out_dir, cfg.plot_data)
    summary = sim.summary()
    failed = not sim.completed or any(r["status"] == "qp-failure" for r in sim.rows)
    summary["exit_code"] = EXIT_FAILURE if failed else EXIT_OK
    return summary


def _print_summary(summary: dict, out_dir: str):
    print(f"wrote {out_dir}")
    print(json.dumps({k: summary[k] for k in ("terminal_error", "avg_solve_ms", "max_solve_ms",
                                             "constraint_violations_count", "ticks", "completed")}))
    if summary["avg_solve_ms"] is not None:
        print(f"timing: avg {summary['avg_solve_ms']:.1f} ms per tick "
              f"(target {summary['timing_target_ms']:.0f} ms, reported only)")


def cmd_run(args) -> int:
    cfg = ScenarioConfig.from_file(args.config)
    out_dir = args.out_dir or cfg.out_dir
    summary = _episode(cfg, out_dir, args.ticks)
    _print_summary(summary, out_dir)
    if not summary["completed"]:
        print(f"error: {summary['error']}", file=sys.stderr)
    return summary["exit_code"]


def _sweep_values(raw: str):
    return [v.strip() for v in (raw.split(";") if ";" in raw else raw.split(",")) if v.strip()]


def cmd_sweep(args) -> int:
    base = ScenarioConfig.from_file(args.config)
    values = _sweep_values(args.values)
    root = args.out_dir or base.out_dir
    cfgs, dirs = [], []
    for v in values:
        cfgs.append(ScenarioConfig.from_text(base.to_text(), **{args.param: v}))
        dirs.append(os.path.join(root, f"{args.param}={v}".replace(" ", "").replace(",", "_")))
    with ProcessPoolExecutor(max_workers=args.jobs) as pool:
        summaries = list(pool.map(_episode, cfgs, dirs))
    code = EXIT_OK
    for v, d, s in zip(values, dirs, summaries):
        print(f"{args.param}={v}: terminal_error={s['terminal_error']} avg_solve_ms={s['avg_solve_ms']:.1f} "
              f"violations={s['constraint_violations_count']} -> {d}")
        code = max(code, s["exit_code"])
    return code


def cmd_check(args) -> int:
    return EXIT_OK if run_checks(args.seed) else EXIT_FAILURE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cartpole-nmpc", description="Cart-pendulum NMPC simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate one closed-loop episode")
    run.add_argument("--config", required=True)
    run.add_argument("--out-dir")
    run.add_argument("--ticks", type=int)
    run.add_argument("--verbose", action="store_true")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run one episode per value of a config key")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--param", required=True)
    sweep.add_argument("--values", required=True, help="comma list; use ';' to separate array values")
    sweep.add_argument("--out-dir")
    sweep.add_argument("--jobs", type=int, default=None)
    sweep.add_argument("--verbose", action="store_true")
    sweep.set_defaults(func=cmd_sweep)

    check = sub.add_parser("check", help="run the built-in invariant checks")
    check.add_argument("--seed", type=int, default=0)
    check.add_argument("--verbose", action="store_true")
    check.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except OutputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
