"""Command line: ``smelab {train-client,attack,diagnose,compare}``.

Every subcommand reads an optional config file and ``--set section.key=value``
overrides. Failures print one JSON line on stderr and exit nonzero.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import runner
from .config import ConfigError, apply_overrides, load_config

EXIT_ERROR = 1
EXIT_USAGE = 2


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI-style config file")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="SECTION.KEY=VALUE", help="override a config key (repeatable)")
    common.add_argument("--output-dir", help="shorthand for --set run.output_dir=...")
    common.add_argument("--seed", type=int, help="repeat index (shorthand for run.seed)")

    p = argparse.ArgumentParser(prog="smelab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train-client", parents=[common], help="train one client and save its update")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)

    a = sub.add_parser("attack", parents=[common], help="reconstruct data from a saved update")
    a.add_argument("update")
    a.add_argument("--method", choices=("ig", "sme", "sim"), default="sme")
    a.add_argument("--data", help="dataset file (defaults to the update's sibling data_*.npz)")

    d = sub.add_parser("diagnose", parents=[common], help="write diagnostic series")
    d.add_argument("update", nargs="?")
    d.add_argument("--mode", choices=("ratio", "sweep", "bounds", "flow2d"), required=True)
    d.add_argument("--data")

    sub.add_parser("compare", parents=[common], help="run every method over all settings and seeds")
    return p


def _config(args):
    cfg = load_config(args.config)
    overrides = list(args.overrides)
    if args.output_dir:
        overrides.append(f"run.output_dir={args.output_dir}")
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    return apply_overrides(cfg, overrides)


def _fail(kind, message, code=EXIT_ERROR):
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code:
            return _fail("usage", "invalid command line", EXIT_USAGE)
        return 0
    try:
        cfg = _config(args)
        if args.command == "train-client":
            upath, dpath = runner.train_client(cfg, args.epochs, args.batch_size)
            print(upath)
            print(dpath)
        elif args.command == "attack":
            row, path = runner.attack_update(cfg, args.update, args.method, args.data)
            print(path)
        elif args.command == "diagnose":
            print(runner.diagnose(cfg, args.mode, args.update, args.data))
        elif args.command == "compare":
            _, summary = runner.compare(cfg)
            for row in summary:
                print(json.dumps(row))
    except ConfigError as exc:
        return _fail("config", str(exc))
    except FileNotFoundError as exc:
        return _fail("io", f"{exc.filename}: {exc.strerror}")
    except (runner.RunnerError, ValueError, OverflowError, RuntimeError) as exc:
        return _fail(type(exc).__name__, str(exc))
    return 0


if __name__ == "__main__":
    sys.exit(main())
