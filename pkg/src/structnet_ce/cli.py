"""Command line entry point: ``structnet-ce {run,sweep,gradcheck,selftest}``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys

from .harness.config import OUTPUT_DIR_ENV, dump_config, load_config
from .harness.runner import CSV_HEADER, format_summary, run_sweep, run_trial, summarize
from .harness.selftest import GRAD_TOL, max_gradient_error, run_selftest, suite_gradcheck

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("-c", "--config", help="INI experiment config")
    p.add_argument("-s", "--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value (repeatable)")
    p.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="structnet-ce",
                                     description="Online MIMO-OFDM channel estimation experiments.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one trial and print its records as CSV")
    _add_config_args(p)
    p.add_argument("--trial", type=int, default=0)

    p = sub.add_parser("sweep", help="run every trial, write the CSV and print a summary",
                       epilog=f"A relative output path is resolved against ${OUTPUT_DIR_ENV} when set.")
    _add_config_args(p)
    p.add_argument("-o", "--output", help="CSV path (overrides experiment.output)")
    p.add_argument("-j", "--workers", type=int, help="worker threads (overrides experiment.workers)")

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    p.add_argument("--points", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-fault", action="store_true", help="scale the analytic gradient by 1.01")

    p = sub.add_parser("selftest", help="run the built-in invariant suites")
    p.add_argument("--full", action="store_true", help="acceptance-scale problem sizes")
    p.add_argument("--inject-fault", action="store_true", help="perturb the analytic gradient")
    return parser


def _config(args):
    cfg = load_config(args.config, args.set)
    if args.dump_config:
        sys.stdout.write(dump_config(cfg))
        return None
    return cfg


def cmd_run(args) -> int:
    cfg = _config(args)
    if cfg is None:
        return EXIT_OK
    if not 0 <= args.trial:
        raise ValueError("trial must be non-negative")
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in run_trial(cfg, args.trial):
        w.writerow(r.csv_row())
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    if cfg is None:
        return EXIT_OK
    records, rows, path = run_sweep(cfg, args.output, args.workers)
    print(format_summary(rows))
    print(f"wrote {len(records)} records to {path}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.inject_fault:
        res = suite_gradcheck(args.points, inject_fault=True)
        err = res.value
    else:
        err = max_gradient_error(args.points, args.seed)
    ok = err <= GRAD_TOL
    print(f"{args.points} points, max relative error {err:.3e} (tolerance {GRAD_TOL:.0e}): "
          f"{'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_selftest(args) -> int:
    results = run_selftest(inject_fault=args.inject_fault, full=args.full)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print("all suites passed" if not failed else f"failed: {', '.join(failed)}")
    return EXIT_OK if not failed else EXIT_FAIL


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "gradcheck": cmd_gradcheck, "selftest": cmd_selftest}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (KeyError, ValueError) as exc:
        print(f"structnet-ce: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"structnet-ce: I/O error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
