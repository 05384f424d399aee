"""Command-line interface: run | montecarlo | sweep | validate."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness


def _add_config(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True,
                   help="preset name ('desk-small', 'paper-default') or JSON path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcnoma-isac",
        description="Secure MC-NOMA ISAC beamforming simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="solve one instance and write its artifacts")
    _add_config(p)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--baseline", choices=["no-an", "ns-an", "sc-noma"], default=None)
    p.add_argument("--out", default=".", help="output directory")

    p = sub.add_parser("montecarlo", help="independent trials over seeds")
    _add_config(p)
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--seeds", type=int, required=True, dest="base_seed",
                   help="base seed; trial t uses base + t")
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--baseline", choices=["no-an", "ns-an", "sc-noma"], default=None)
    p.add_argument("--out", default="montecarlo.csv", help="output CSV path")

    p = sub.add_parser("sweep", help="mean min-rate versus a swept parameter")
    _add_config(p)
    p.add_argument("--param", choices=["pmax_dbm", "chi"], required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--seeds", type=int, default=0, dest="base_seed")
    p.add_argument("--baselines", default=None,
                   help="'all' or comma list of no-an,ns-an,sc-noma to include")
    p.add_argument("--out", default="sweep.csv", help="output CSV path")

    p = sub.add_parser("validate", help="oracle / self-consistency suite")
    _add_config(p)
    p.add_argument("--seed", type=int, required=True)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    config = harness.load_config(args.config)

    if args.command == "run":
        scheme = args.baseline or "joint"
        report = harness.run_single(config, args.seed, scheme, args.out)
        print(f"{scheme} seed={args.seed}: status={report.status} "
              f"min_rate={report.min_rate:.4f} iterations={report.num_iterations}")
        # a stalled solver still yields an audited feasible solution
        return 0 if report.status in ("converged", "max-iterations", "stalled") else 1

    if args.command == "montecarlo":
        scheme = args.baseline or "joint"
        rows = harness.montecarlo(config, args.trials, args.base_seed,
                                  scheme, args.parallel)
        harness.write_trials_csv(rows, config, args.base_seed, args.out)
        failed = sum(1 for r in rows if str(r["status"]).startswith("error"))
        print(f"{args.trials} trials written to {args.out} ({failed} flagged)")
        return 0

    if args.command == "sweep":
        values = [float(v) for v in args.values.split(",")]
        schemes: tuple[str, ...] = ("joint",)
        if args.baselines == "all":
            schemes = harness.SCHEMES
        elif args.baselines:
            schemes = ("joint", *args.baselines.split(","))
        rows = harness.sweep(config, args.param, values, args.trials,
                             args.base_seed, schemes)
        harness.write_sweep_csv(rows, config, args.base_seed, args.out)
        print(f"{len(rows)} sweep rows written to {args.out}")
        return 0

    if args.command == "validate":
        results = harness.validate(config, args.seed)
        print(json.dumps(results, indent=2, sort_keys=True, default=float))
        print("VALIDATE:", "PASS" if results["passed"] else "FAIL")
        return 0 if results["passed"] else 1

    return 2  # unreachable


if __name__ == "__main__":
    sys.exit(main())
