"""Command line entry point.

Exit codes: 0 success, 1 bad input or configuration, 2 a check failed.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

from . import verify
from .bounds import analyze_trace, read_trace
from .harness import (ConfigError, build_spec, fit_scaling, read_config, read_results_csv,
                      run_experiment, write_plot_data)
from .results import CSV_HEADER

EXIT_OK, EXIT_INVALID, EXIT_CHECK = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="collision-bench",
                 description="Contention resolution with costly collisions.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run an experiment sweep and write CSV")
    run.add_argument("--spec", help="flat key = value experiment file")
    run.add_argument("--protocol", help="CAB, BEB, STB or Folklore")
    run.add_argument("--n", help="comma-separated packet counts")
    run.add_argument("--C", dest="C", help="comma-separated costs, e.g. 1,16,n^0.5")
    run.add_argument("--seeds", help="trials per (n, C)")
    run.add_argument("--base-seed", dest="base_seed")
    run.add_argument("--engine", help="aggregate, per_packet or event_skip")
    run.add_argument("--d", dest="d")
    run.add_argument("--c", dest="c")
    run.add_argument("--trace", nargs="?", const="true", default=None,
                     help="record contention traces next to the CSV")
    run.add_argument("--out", help="CSV output path (default: stdout)")

    fit = sub.add_parser("fit", help="log-log fit of median y against x")
    fit.add_argument("--csv", required=True)
    fit.add_argument("--x", default="n*sqrt(C)")
    fit.add_argument("--y", default="makespan")
    fit.add_argument("--protocol", help="only rows of this protocol")
    fit.add_argument("--plot-out", help="write points and fitted line as CSV")
    fit.add_argument("--min-exponent", type=float)
    fit.add_argument("--max-exponent", type=float)
    fit.add_argument("--min-r2", type=float)

    vb = sub.add_parser("verify-bounds", help="randomized checks of the probability bounds")
    vb.add_argument("--samples", type=int, default=100_000)
    vb.add_argument("--seed", type=int, default=0)

    ta = sub.add_parser("trace-analyze", help="contention report for a trace file")
    ta.add_argument("--trace", required=True)
    ta.add_argument("--C", dest="C", type=float, required=True)
    ta.add_argument("--n", type=int, help="also check total contention >= n/16")
    return ap


def _cmd_run(args) -> int:
    values = read_config(args.spec) if args.spec else {}
    for key in ("protocol", "n", "C", "seeds", "base_seed", "engine", "d", "c", "trace", "out"):
        val = getattr(args, key)
        if val is not None:
            values[key] = val
    spec = build_spec(values)
    results = run_experiment(spec)
    if not spec.output_path:
        print(",".join(CSV_HEADER))
        for r in results:
            print(r.csv_row())
    incomplete = sum(r.incomplete for r in results)
    print(f"{len(results)} trials, {incomplete} incomplete", file=sys.stderr)
    return EXIT_OK


def _cmd_fit(args) -> int:
    rows = read_results_csv(args.csv)
    if args.protocol:
        rows = [r for r in rows if r.protocol.lower() == args.protocol.lower()]
    fit = fit_scaling(rows, args.x, args.y)
    print(json.dumps(fit.as_dict()))
    if args.plot_out:
        write_plot_data(fit, args.plot_out)
    ok = True
    if args.min_exponent is not None:
        ok &= fit.exponent >= args.min_exponent
    if args.max_exponent is not None:
        ok &= fit.exponent <= args.max_exponent
    if args.min_r2 is not None:
        ok &= fit.r_squared >= args.min_r2
    return EXIT_OK if ok else EXIT_CHECK


def _cmd_verify(args) -> int:
    if args.samples < 1:
        raise ConfigError("--samples must be positive")
    results = verify.run_all(args.samples, args.seed)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


def _cmd_trace(args) -> int:
    if not args.C >= 1:
        raise ConfigError("--C must be >= 1")
    rep = analyze_trace(read_trace(args.trace), args.C)
    out = rep.as_dict()
    ok = rep.bound_holds
    if args.n is not None:
        out["contention_floor"] = args.n / 16
        out["contention_ok"] = bool(rep.sum_con >= args.n / 16)
        ok &= out["contention_ok"]
    print(json.dumps({k: (None if isinstance(v, float) and not math.isfinite(v) else v)
                      for k, v in out.items()}))
    return EXIT_OK if ok else EXIT_CHECK


_COMMANDS = {"run": _cmd_run, "fit": _cmd_fit, "verify-bounds": _cmd_verify,
             "trace-analyze": _cmd_trace}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"collision-bench: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
