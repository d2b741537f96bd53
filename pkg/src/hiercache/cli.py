"""Command-line entry point: ``hiercache {compare,sweep,thresholds,simulate}``.

Exit status is 0 on success, 1 for invalid input and 2 when an internal
consistency check fails.
"""

from __future__ import annotations

import argparse
import sys
import warnings

from . import bench
from .errors import (
    ConfigError,
    DomainError,
    InvariantViolation,
    NotTwoRelay,
    WorstCaseInfeasible,
    WorstCaseInfeasibleWarning,
)
from .model import load_config


def _schemes(text: str) -> list[str]:
    names = [s.strip() for s in text.split(",") if s.strip()]
    bad = [s for s in names if s not in bench.SCHEMES]
    if bad:
        raise ConfigError([f"unknown scheme {s!r}; known: {', '.join(bench.SCHEMES)}" for s in bad])
    return names


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _load(args):
    cfg, seed = load_config(args.config)
    if args.seed is not None:
        seed = args.seed
    return cfg, seed


def cmd_compare(args) -> int:
    cfg, seed = _load(args)
    results = bench.run_compare(cfg, _schemes(args.scheme), args.mode, seed, args.grid_steps)
    _emit(bench.compare_csv(results, cfg), args.out)
    return 0


def cmd_sweep(args) -> int:
    cfg, seed = _load(args)
    values = bench.parse_values(args.values, integer=args.var in ("k1", "k2", "n"))
    spec = bench.SweepSpec(cfg, args.var, values, _schemes(args.scheme), args.mode, seed,
                           args.grid_steps)
    _emit(bench.run_sweep(spec), args.out)
    return 0


def cmd_thresholds(args) -> int:
    values = bench.parse_values(args.m2)
    _emit(bench.emit_threshold_table(values, args.k2), args.out)
    return 0


def cmd_simulate(args) -> int:
    from .delivery import export_csv
    from .placement import dump_caches

    cfg, seed = _load(args)
    names = _schemes(args.scheme)
    if len(names) != 1:
        raise ConfigError(["simulate takes exactly one --scheme"])
    decode = args.decode and (args.mode == "bits" or names[0] in bench.FIXTURE_SCHEMES)
    sched, placement, _, report = bench.simulate(names[0], cfg, args.mode, seed,
                                                 args.grid_steps, decode=decode)
    _emit(export_csv(sched), args.out)
    if args.dump_caches:
        dump_caches(placement, args.dump_caches)
    print(f"scheme={report.scheme} r1={report.r1!r} r2={report.r2!r} "
          f"makespan={report.makespan!r}" + (" decoded=ok" if decode else ""),
          file=sys.stderr)
    for key, value in report.diagnostics.items():
        print(f"  {key}={value!r}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hiercache", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True, scheme_default="proposed,hcc-a,hcc-b,hcc-c,pipeline"):
        if config:
            sp.add_argument("--config", required=True, help="TOML file with the network parameters")
            sp.add_argument("--scheme", default=scheme_default,
                            help="comma-separated scheme names")
            sp.add_argument("--mode", choices=bench.MODES, default="fractional")
            sp.add_argument("--seed", type=int, default=None, help="overrides the config seed")
            sp.add_argument("--grid-steps", type=int, default=101,
                            help="alpha/beta grid size for proposed-opt")
        sp.add_argument("--out", help="write CSV here instead of stdout")

    sp = sub.add_parser("compare", help="delay of several schemes at one config")
    common(sp)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("sweep", help="delay curves over one parameter")
    common(sp)
    sp.add_argument("--var", required=True, choices=bench.SWEEP_VARS)
    sp.add_argument("--values", required=True, help="a,b,c or start:stop:step (inclusive)")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("thresholds", help="two-relay relay-cache threshold per user-cache fraction")
    common(sp, config=False)
    sp.add_argument("--m2", default="0:1:0.1", help="user cache fractions, a,b,c or start:stop:step")
    sp.add_argument("--k2", type=int, default=2, help="users per relay")
    sp.set_defaults(func=cmd_thresholds)

    sp = sub.add_parser("simulate", help="build one schedule and export it as CSV")
    common(sp, scheme_default="proposed")
    sp.add_argument("--decode", action="store_true", help="check every user decodes (bit level)")
    sp.add_argument("--dump-caches", metavar="PATH", help="write bit-level cache contents")
    sp.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "grid_steps", 2) < 2:
        print("error: --grid-steps must be at least 2", file=sys.stderr)
        return 1
    if getattr(args, "seed", None) is not None and args.seed < 0:
        print("error: --seed must be non-negative", file=sys.stderr)
        return 1
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", WorstCaseInfeasibleWarning)
            return args.func(args)
    except InvariantViolation as exc:
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, DomainError, NotTwoRelay, WorstCaseInfeasible, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
