"""Command line: ``run``, ``sweep`` and ``verify``.

Exit status: 0 success, 1 verification mismatch, 2 configuration or path
error, 3 simulation fault.
"""

from __future__ import annotations

import argparse
import json
import sys

from safeloco import ParameterError
from safeloco.config import load_scenario
from safeloco.harness import (SimulationFault, default_jobs, load_many, run_scenario,
                              run_sweep, verify_tree)
from safeloco.world import MODES

EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG, EXIT_FAULT = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="safeloco", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate one scenario")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--mode", choices=MODES)
    run.add_argument("--seed", type=int)
    run.add_argument("--plots", action="store_true")

    sweep = sub.add_parser("sweep", help="simulate every config matching a glob")
    sweep.add_argument("--configs", required=True)
    sweep.add_argument("--out", required=True)
    sweep.add_argument("--jobs", type=int, default=default_jobs())

    verify = sub.add_parser("verify", help="recompute summaries from step logs")
    verify.add_argument("--out", required=True)
    return ap


def _fail(msg: str, code: int) -> int:
    print(f"safeloco: {msg}".replace("\n", " "), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            scen = load_scenario(args.config)
            if args.mode:
                scen = scen.with_mode(args.mode)
            if args.seed is not None:
                scen = scen.with_seed(args.seed)
            summary = run_scenario(scen, args.out, plots=args.plots or None)
            print(json.dumps(summary["metrics"], sort_keys=True))
            return EXIT_OK
        if args.command == "sweep":
            report = run_sweep(load_many(args.configs), args.out, max(1, args.jobs))
            print(json.dumps(report["aggregate"], sort_keys=True))
            return EXIT_FAULT if report["aggregate"]["faults"] else EXIT_OK
        n, problems = verify_tree(args.out)
        for p in problems:
            print(p, file=sys.stderr)
        print(f"verified {n} run(s), {len(problems)} problem(s)")
        return EXIT_MISMATCH if problems else EXIT_OK
    except SimulationFault as exc:
        return _fail(f"simulation fault: {exc}", EXIT_FAULT)
    except (ParameterError, OSError) as exc:
        return _fail(str(exc), EXIT_CONFIG)


if __name__ == "__main__":
    sys.exit(main())
