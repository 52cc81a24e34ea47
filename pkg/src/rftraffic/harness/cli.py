"""``rftraffic`` command line.

Every subcommand takes one JSON config, a ``--seed`` and an ``--out``
directory. Failures exit nonzero with ``error [<stage>] ...`` on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from rftraffic.errors import RfTrafficError
from rftraffic.harness import experiments
from rftraffic.harness.config import load_config

EXIT_ERROR = 1
EXIT_CONFIG = 2

COMMANDS = {
    "generate": ("synthesize traces and write IQ datasets", experiments.cmd_generate),
    "train-classifier": ("train and evaluate the traffic classifier",
                         experiments.cmd_train_classifier),
    "trade-seqlen": ("sequence-length trade study", experiments.cmd_trade_seqlen),
    "trade-grid": ("resumable grid over config axes", experiments.cmd_trade_grid),
    "train-generator": ("train the next-window generator", experiments.cmd_train_generator),
    "continue": ("free-run a trained generator", experiments.cmd_continue),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="rftraffic", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, (help_text, _) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("config", help="JSON config file (unset keys take desk defaults)")
        p.add_argument("--seed", type=int, default=0, help="run seed (default 0)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("-q", "--quiet", action="store_true", help="only report errors")
        if name == "train-classifier":
            p.add_argument("--resume", action="store_true",
                           help="continue from the checkpoint already in --out")
        if name == "trade-grid":
            p.add_argument("--workers", type=int, default=None,
                           help="worker threads (overrides grid.workers)")
    return parser


def _summary(result):
    def clean(v):
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items() if k not in ("metrics", "checkpoint", "rows")}
        return v
    return json.dumps(clean(result), sort_keys=True, default=str)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    _, fn = COMMANDS[args.command]
    kwargs = {}
    if getattr(args, "resume", False):
        kwargs["resume"] = True
    if getattr(args, "workers", None):
        kwargs["workers"] = args.workers
    try:
        cfg = load_config(args.config)
        result = fn(cfg, args.seed, args.out, **kwargs)
    except RfTrafficError as exc:
        print(f"error [{exc.stage}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG if exc.stage == "config" else EXIT_ERROR
    except OSError as exc:
        print(f"error [io] {exc}", file=sys.stderr)
        return EXIT_ERROR
    if not args.quiet:
        print(_summary(result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
