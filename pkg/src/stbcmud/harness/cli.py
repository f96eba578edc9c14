"""Command line: ``stbc-mud {simulate-ber,estimate-outage,verify,export}``.

Exit codes: 0 success / all checks passed, 1 verification failure,
2 configuration or usage error. Progress goes to stderr; results go to
stdout unless ``--out`` is given.
"""

from __future__ import annotations

import argparse
import sys

from ..analysis import InsufficientCountsError
from .config import ConfigError, SimConfig, load_config, resolve_threads
from .engine import run_ber, run_outage
from .export import ExportError, export, load_record, to_csv, to_json
from .verify import SUITES, run_verify

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with SimConfig fields")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--threads", type=int, help="worker threads (fallback: $STBC_MUD_THREADS, then 1)")
    common.add_argument("--format", choices=("csv", "json"), default="json")
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--quiet", action="store_true", help="no progress on stderr")

    p = argparse.ArgumentParser(prog="stbc-mud", description="Multi-user STBC detection simulator and verifier")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate-ber", parents=[common], help="error-rate curve over the SNR grid")
    sub.add_parser("estimate-outage", parents=[common], help="outage CDF and diversity slope")
    v = sub.add_parser("verify", parents=[common], help="run a property suite")
    v.add_argument("suite", choices=sorted(SUITES))
    v.add_argument("--samples", type=int, help="override the suite's sample count")
    e = sub.add_parser("export", parents=[common], help="convert a saved JSON run record")
    e.add_argument("record", help="run record written with --format json")
    return p


def _config(args) -> SimConfig:
    cfg = load_config(args.config) if args.config else SimConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    return cfg.validate()


def _emit(record, args):
    if args.out:
        export(record, args.out, args.format)
    else:
        sys.stdout.write(to_csv(record) if args.format == "csv" else to_json(record))


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        if args.command == "verify":
            if args.threads is not None:
                resolve_threads(args.threads)
            rep = run_verify(args.suite, seed=args.seed or 0, n=args.samples)
            text = "\n".join(rep.lines()) + "\n"
            if args.out:
                with open(args.out, "w", encoding="utf-8") as fh:
                    fh.write(text)
            else:
                sys.stdout.write(text)
            return EXIT_OK if rep.passed else EXIT_FAIL
        if args.command == "export":
            _emit(load_record(args.record), args)
            return EXIT_OK
        cfg = _config(args)
        if args.command == "simulate-ber":
            record = run_ber(cfg, progress=not args.quiet)
        else:
            record = run_outage(cfg, progress=not args.quiet)
        _emit(record, args)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InsufficientCountsError as exc:
        print(f"insufficient counts: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except ExportError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
