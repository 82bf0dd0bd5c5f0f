"""Command line entry point: ``epochgd {solve,bench,rate,verify,azuma}``.

Exit status: 0 success, 1 a check or verdict failed, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import harness
from .errors import ConfigError, EpochGDError, InsufficientPoints
from .stats import azuma_threshold, empirical_tail, rademacher_walk_sums

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config; flags override its fields")
    p.add_argument("--seed", type=int, help="base seed (fallback: $EPOCHGD_SEED, then 0)")
    p.add_argument("--trials", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--jobs", type=int)
    p.add_argument("--out", help="output path (default: stdout)")
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--algorithm", choices=harness.ALGORITHMS)
    p.add_argument("--iterate-rule", choices=("average", "uniform-random"))
    p.add_argument("--verify-oracles", action="store_true", default=None,
                   help="assert ||g|| <= G on every stochastic subgradient")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="epochgd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("solve", help="run a single trial and print its trace"))
    _common(sub.add_parser("bench", help="run a seeded batch of trials"))
    rate = sub.add_parser("rate", help="fit the error-vs-updates exponent over several epsilons")
    _common(rate)
    rate.add_argument("--epsilons", default=",".join(str(2.0 ** -j) for j in range(3, 10)),
                      help="comma-separated epsilon values")
    ver = sub.add_parser("verify", help="run the invariant suite")
    ver.add_argument("--scope", default="all",
                     choices=("all", "core", "projections", "optimizers", "problems", "stats", "harness"))
    ver.add_argument("--scale", type=float, default=1.0, help="multiplier on sample sizes")
    ver.add_argument("--inject-fault", choices=("g-too-small",), help="negative control")
    az = sub.add_parser("azuma", help="compare Rademacher walk tails with the Azuma threshold")
    az.add_argument("--b", type=float, default=1.0)
    az.add_argument("--T", type=int, default=100)
    az.add_argument("--delta", type=float, default=0.01)
    az.add_argument("--walks", type=int, default=100_000)
    az.add_argument("--seed", type=int, default=0)
    return parser


def _config(args, **forced) -> harness.ExperimentConfig:
    overrides = {
        "base_seed": args.seed, "trials": args.trials, "epsilon": args.epsilon, "delta": args.delta,
        "jobs": args.jobs, "out": args.out, "format": args.format, "algorithm": args.algorithm,
        "iterate_rule": args.iterate_rule, "verify": args.verify_oracles,
    }
    overrides.update(forced)
    return harness.load_config(args.config, overrides)


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_solve(args) -> int:
    cfg = _config(args, trials=1)
    batch = harness.run_experiment(cfg, write=False)
    if cfg.format == "json":
        _emit(harness.batch_to_json(batch), cfg.out)
    else:
        _emit(harness.rows_to_csv(batch.rows), cfg.out)
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _config(args)
    batch = harness.run_experiment(cfg, write=bool(cfg.out))
    if not cfg.out:
        _emit(harness.batch_to_json(batch) if cfg.format == "json" else harness.rows_to_csv(batch.rows), None)
    print(json.dumps(batch.summary, sort_keys=True), file=sys.stderr)
    return EXIT_OK


def cmd_rate(args) -> int:
    cfg = _config(args)
    try:
        epsilons = [float(e) for e in args.epsilons.split(",") if e.strip()]
    except ValueError:
        raise ConfigError(f"bad --epsilons {args.epsilons!r}") from None
    report = harness.run_rate_sweep(cfg, epsilons)
    doc = {"points": report.points, "slope": report.slope, "slope_range": list(report.slope_range), "ok": report.ok}
    _emit(json.dumps(doc, indent=1) + "\n", cfg.out)
    return EXIT_OK if report.ok else EXIT_FAIL


def cmd_verify(args) -> int:
    results, ok = harness.run_invariant_suite(args.scope, args.scale, args.inject_fault)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'}  {r.module:<12} {r.name:<34} {r.detail}")
    print(f"{sum(r.ok for r in results)}/{len(results)} checks passed")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_azuma(args) -> int:
    threshold = azuma_threshold(args.b, args.T, args.delta)
    sums = rademacher_walk_sums(args.walks, args.T, np.random.default_rng(args.seed), args.b)
    tail = empirical_tail(sums, threshold)
    ok = tail <= args.delta
    print(json.dumps({"b": args.b, "T": args.T, "delta": args.delta, "walks": args.walks,
                      "threshold": threshold, "empirical_tail": tail, "ok": ok}))
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {"solve": cmd_solve, "bench": cmd_bench, "rate": cmd_rate, "verify": cmd_verify, "azuma": cmd_azuma}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, InsufficientPoints) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EpochGDError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
