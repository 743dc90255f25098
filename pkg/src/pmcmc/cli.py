"""Command-line entry point: ``pmcmc <command> [options]``.

Exit codes: 0 success, 1 validation failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .experiments import COMMANDS, RUNNERS, ConfigError, ExperimentConfig
from .validation import DEFAULT_SUITES, QUICK, SUITES

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="INI experiment file ([experiment] and [algorithm:<tag>] sections)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--replications", type=int, help="independent runs per algorithm")
    p.add_argument("--workers", type=int, default=1, help="worker processes (results do not depend on this)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pmcmc", description="Particle MCMC and embedded HMM studies on a linear-Gaussian model.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name, help=RUNNERS[name].__doc__.splitlines()[0] if RUNNERS[name].__doc__ else name)
        _common(p)
        p.add_argument("--d", help="comma-separated state dimensions")
        p.add_argument("--T", type=int, help="number of time steps")
        if name != "simulate":
            p.add_argument("--N", type=int, help="default number of particles")
            p.add_argument("--algorithms", help="comma-separated algorithm tags variant[:kernel]")
        if name in ("pmmh", "pg-states", "pg-params"):
            p.add_argument("--iterations", type=int, help="iterations per chain (burn-in included)")
            p.add_argument("--burn-in", type=float, help="fraction of iterations discarded")
            p.add_argument("--max-lag", type=int, help="largest ACF lag written")
        if name == "pg-params":
            p.add_argument("--theta-moves", type=int, help="theta updates per Gibbs sweep")
    v = sub.add_parser("validate", help="run the oracle suites and report pass/fail")
    _common(v)
    v.add_argument("--suite", action="append", choices=tuple(SUITES), help="suite to run (repeatable; default: all oracle suites)")
    v.add_argument("--full", action="store_true", help="acceptance-scale sizes instead of the quick desk sizes")
    return parser


def _overrides(args) -> dict:
    kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.replications is not None:
        kw["replications"] = args.replications
    if getattr(args, "d", None):
        try:
            kw["d"] = tuple(int(v) for v in args.d.split(","))
        except ValueError:
            raise ConfigError(f"--d expects comma-separated integers, got {args.d!r}") from None
    for key in ("T", "N", "iterations", "burn_in", "max_lag", "theta_moves"):
        val = getattr(args, key, None)
        if val is not None:
            kw[key] = val
    if getattr(args, "algorithms", None):
        kw["algorithms"] = tuple(a.strip() for a in args.algorithms.split(",") if a.strip())
    return kw


def _validate(args) -> int:
    names = args.suite or list(DEFAULT_SUITES)
    overrides = {}
    if args.replications is not None:
        if args.replications < 2:
            raise ConfigError("--replications must be at least 2")
        overrides = {n: {"reps": args.replications} for n in ("unbiasedness", "invariance")}
    results = []
    for name in names:
        kwargs = {} if args.full else dict(QUICK.get(name, {}))
        kwargs.update(overrides.get(name, {}))
        res = SUITES[name](**kwargs)
        print(res.line())
        for line in res.details:
            print(f"    {line}")
        results.append(res)
    if args.out:
        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ConfigError(f"cannot write to output directory {out}: {e}") from None
        report = {r.name: {"passed": r.passed, "summary": r.summary, "details": r.details, "seconds": r.seconds} for r in results}
        (out / "validation.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} suites passed" + (f"; failed: {', '.join(failed)}" if failed else ""))
    return EXIT_FAILED if failed else EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "validate":
        try:
            return _validate(args)
        except ConfigError as e:
            print(f"pmcmc: configuration error: {e}", file=sys.stderr)
            return EXIT_CONFIG
    try:
        kw = _overrides(args)
        if args.config:
            config = ExperimentConfig.from_file(args.config, args.command, **kw)
        else:
            config = ExperimentConfig.default(args.command, **kw)
        config.check()
        if args.workers < 1:
            raise ConfigError("--workers must be positive")
    except (ConfigError, ValueError) as e:
        print(f"pmcmc: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        out = RUNNERS[args.command](config, args.out, args.workers)
    except ConfigError as e:
        print(f"pmcmc: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"wrote {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
