"""Command line: ``tbmm run | check | config | version``.

Exit codes: 0 success, 1 check failure, 2 configuration error, 3 runtime abort.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from .errors import ConfigError, TbmmError

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2, 3


def _parser():
    p = argparse.ArgumentParser(prog="tbmm", description="tBMM solvers and benchmarks")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment from a config file")
    run.add_argument("config")
    run.add_argument("--out", default=None, help="output directory (default: current)")
    run.add_argument("--trials", type=int, default=None)
    run.add_argument("--seed", type=int, default=None, help="override base_seed")
    run.add_argument("--parallel", type=int, default=1, help="worker processes for trials")
    run.add_argument("--no-figures", action="store_true", help="skip rendering PNG figures")
    chk = sub.add_parser("check", help="run the verification suite")
    chk.add_argument("--filter", default=None, help="only checks whose name contains this")
    chk.add_argument("--summary", default="check_summary.json",
                     help="machine-readable summary path")
    cfg = sub.add_parser("config", help="print the default config for an experiment")
    cfg.add_argument("experiment")
    sub.add_parser("version")
    return p


def _cmd_run(args):
    from .bench import load_config, run_experiment

    try:
        cfg = load_config(args.config)
        if args.trials is not None:
            if args.trials < 1:
                raise ConfigError("--trials must be >= 1")
            cfg.trials = args.trials
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("--seed must be a 64-bit unsigned integer")
            cfg.base_seed = args.seed
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        runs, paths = run_experiment(cfg, args.out or ".", parallel=args.parallel,
                                     render=not args.no_figures)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, TbmmError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ABORT
    aborted = 0
    print("solver,trials,mean_final_rel_error,aborted")
    for name, traces in runs.items():
        finals = [tr.records[-1].rel_error for tr in traces if tr.records]
        bad = sum(tr.status != "ok" for tr in traces)
        aborted += bad
        mean = sum(finals) / len(finals) if finals else float("nan")
        print(f"{name},{len(traces)},{mean:.6g},{bad}")
    print(f"wrote {len(paths)} files to {args.out or '.'}")
    return EXIT_ABORT if aborted else EXIT_OK


def _cmd_check(args, suite=None):
    from .verify import run_suite

    reports = run_suite(args.filter, suite)
    for rep in reports:
        print(rep.line())
    failed = [r for r in reports if not r.passed]
    print(f"{len(reports) - len(failed)}/{len(reports)} checks passed")
    if args.summary:
        data = [{"name": r.name, "passed": r.passed, "worst_value": r.worst_value,
                 "tolerance": r.tolerance, "samples": r.samples} for r in reports]
        try:
            with open(args.summary, "w", encoding="utf-8") as fh:
                json.dump(data, fh, indent=1)
        except OSError as exc:
            print(f"error: cannot write {args.summary}: {exc.strerror}", file=sys.stderr)
            return EXIT_ABORT
    return EXIT_CHECK if failed else EXIT_OK


def main(argv=None, suite=None):
    """Entry point; ``suite`` replaces the built-in check registry (tests use this)."""
    args = _parser().parse_args(argv)
    if args.command == "version":
        print(f"tbmm {__version__}")
        return EXIT_OK
    if args.command == "config":
        from .bench import DEFAULT_CONFIGS

        if args.experiment not in DEFAULT_CONFIGS:
            print(f"config error: unknown experiment {args.experiment!r}; choose from "
                  f"{', '.join(DEFAULT_CONFIGS)}", file=sys.stderr)
            return EXIT_CONFIG
        sys.stdout.write(DEFAULT_CONFIGS[args.experiment])
        return EXIT_OK
    if args.command == "check":
        return _cmd_check(args, suite)
    return _cmd_run(args)


if __name__ == "__main__":
    sys.exit(main())
