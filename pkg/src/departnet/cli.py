"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 model error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from .config import (
    RunConfig,
    VALID_FORMAT,
    VALID_FREEZE,
    VALID_WEIGHTING,
    load_config,
)
from .errors import DataError, ModelError
from .pipeline import STAGES, run_all

_COMMANDS = (
    "ingest",
    "graphs",
    "departures",
    "sets",
    "match",
    "metrics",
    "panel",
    "fit",
    "report",
    "simulate",
    "oracle",
    "all",
)


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _add_run_options(p: argparse.ArgumentParser, suppress: bool = False) -> None:
    # on subparsers the defaults are suppressed so that an option given
    # before the subcommand is not clobbered by the subparser's default
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    p.add_argument("--config", metavar="PATH", help="JSON run configuration", **kw)
    p.add_argument("--events", metavar="PATH", help="input event log", **kw)
    p.add_argument("--outdir", metavar="DIR", help="run directory for artifacts", **kw)
    p.add_argument("--format", choices=VALID_FORMAT, help="event log format", **kw)
    p.add_argument("--threads", type=int, help="thread cap for numeric libraries", **kw)
    p.add_argument("--seed", type=int, help="run seed (matching, simulation)", **kw)
    p.add_argument("--freeze", type=int, choices=VALID_FREEZE, help="freeze window length", **kw)
    p.add_argument("--weighting", choices=VALID_WEIGHTING, help="edge weighting rule", **kw)
    p.add_argument("--split-cutoff", type=int, dest="split_cutoff", metavar="WEEK",
                   help="calendar week separating the two fitting periods", **kw)


def build_parser() -> _Parser:
    p = _Parser(
        prog="departnet",
        description="Departure effects on communication networks: "
        "event logs to weekly graphs, matched cohorts, and event-study fits.",
    )
    _add_run_options(p)
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    for name in _COMMANDS:
        sp = sub.add_parser(
            name, help=f"run the {name} stage" if name != "all" else "run the full chain"
        )
        _add_run_options(sp, suppress=True)
    return p


_OVERRIDES = (
    "events",
    "outdir",
    "format",
    "threads",
    "seed",
    "freeze",
    "weighting",
    "split_cutoff",
)


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    updates = {
        name: getattr(args, name)
        for name in _OVERRIDES
        if getattr(args, name) is not None
    }
    if updates:
        cfg = dataclasses.replace(cfg, **updates)
    return cfg.validate()


def _limit_threads(n: int) -> None:
    os.environ.setdefault("OMP_NUM_THREADS", str(n))
    try:
        import threadpoolctl

        global _thread_limiter
        _thread_limiter = threadpoolctl.threadpool_limits(limits=n)
    except ImportError:
        pass


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = _config_from_args(args)
        _limit_threads(cfg.threads)
        if args.command == "all":
            summaries = run_all(cfg)
            for name, summary in summaries.items():
                print(f"{name}: {json.dumps(summary, sort_keys=True, default=str)}")
        else:
            summary = STAGES[args.command](cfg)
            print(f"{args.command}: {json.dumps(summary, sort_keys=True, default=str)}")
        return 0
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except ModelError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
