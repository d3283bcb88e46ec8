"""Command line: ``run`` one experiment, ``compare`` two finished runs."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Optional

from .config import ConfigError, ExperimentConfig

log = logging.getLogger("reactive_liquid")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="reactive-liquid",
                                description="Liquid vs reactive stream-processing experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment and write CSVs and figures")
    r.add_argument("--mode", choices=["liquid", "reactive"], required=True)
    size = r.add_mutually_exclusive_group()
    size.add_argument("--tasks", type=int, help="liquid task count")
    size.add_argument("--pool-min", type=int, help="reactive pool minimum")
    r.add_argument("--pool-max", type=int, default=12)
    r.add_argument("--partitions", type=int, default=3)
    r.add_argument("--batch-n", type=int, default=64)
    r.add_argument("--failure-prob", type=float, default=0.0)
    r.add_argument("--fail-window", type=float, default=600.0, help="seconds before scaling")
    r.add_argument("--downtime", type=float, default=300.0, help="seconds before scaling")
    r.add_argument("--time-scale", type=float, default=1 / 20)
    r.add_argument("--nodes", type=int, default=3)
    r.add_argument("--cores", type=int, default=None,
                   help="core slots per worker node (default: uncapped)")
    r.add_argument("--duration", type=float, default=120.0)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--input", default="synth:taxis=200,points=1000,hotspots=20",
                   help="tdrive:PATH or synth:taxis=N,points=N,hotspots=N")
    r.add_argument("--unkeyed", action="store_true", help="publish input without keys")
    r.add_argument("--dmax", type=float, default=0.01)
    r.add_argument("--macro-k", type=int, default=10)
    r.add_argument("--macro-period", type=float, default=10.0)
    r.add_argument("--quiesce-grace", type=float, default=0.0)
    r.add_argument("--out", required=True)
    r.add_argument("--deterministic", action="store_true",
                   help="constant modelled service times (otherwise measured wall time)")
    r.add_argument("--no-figures", action="store_true")

    c = sub.add_parser("compare", help="trendline comparison of two run directories")
    c.add_argument("a_dir")
    c.add_argument("b_dir")
    c.add_argument("--out", required=True)
    c.add_argument("--no-figures", action="store_true")
    return p


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig(
        mode=args.mode, pool_max=args.pool_max, partitions=args.partitions,
        batch_n=args.batch_n, failure_prob=args.failure_prob, fail_window=args.fail_window,
        downtime=args.downtime, time_scale=args.time_scale, nodes=args.nodes,
        cores_per_node=args.cores, duration=args.duration, seed=args.seed, input=args.input,
        keyed=not args.unkeyed, dmax=args.dmax, macro_k=args.macro_k,
        macro_period=args.macro_period, deterministic=args.deterministic,
        quiesce_grace=args.quiesce_grace)
    if args.tasks is not None:
        if args.mode != "liquid":
            raise ConfigError("--tasks applies to liquid mode; use --pool-min/--pool-max")
        cfg.tasks = args.tasks
    if args.pool_min is not None:
        if args.mode != "reactive":
            raise ConfigError("--pool-min applies to reactive mode")
        cfg.pool_min = args.pool_min
    cfg.pool_min = min(cfg.pool_min, cfg.pool_max)
    return cfg.validate()


def cmd_run(args: argparse.Namespace) -> int:
    from .experiment import run_experiment
    cfg = config_from_args(args)
    result = run_experiment(cfg, out_dir=args.out, figures=not args.no_figures)
    m = result.metrics
    print(f"{cfg.mode}: processed {m.total} messages in {cfg.duration:g}s "
          f"(duplicates {m.duplicates}, max tasks {m.max_tasks}) -> {args.out}")
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    from .compare import compare_runs
    from .reports import emit_comparison, read_cumulative
    a = read_cumulative(args.a_dir)
    b = read_cumulative(args.b_dir)
    report = compare_runs(a, b)
    emit_comparison(report, args.out)
    if not args.no_figures:
        from .figures import comparison_figure
        comparison_figure(report, args.out, os.path.basename(os.path.normpath(args.a_dir)),
                          os.path.basename(os.path.normpath(args.b_dir)))
    print(f"slope {report.slope:.4f}  intercept {report.intercept:.2f}  "
          f"R^2 {report.r_squared:.4f}  ({report.verdict})")
    return 0


def main(argv: Optional[list[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        return cmd_compare(args)
    except (ConfigError, ValueError) as exc:
        log.error("%s", exc)
        return 2
    except OSError as exc:
        log.error("I/O failure: %s", exc)
        return 3


if __name__ == "__main__":
    sys.exit(main())
