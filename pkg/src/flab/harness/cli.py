"""Command-line entry point.

Subcommands: gen-data (build dataset caches), run (execute an
experiment), analyze (recompute representation analysis from stored
snapshots), export-fig (tidy figure CSVs from finished runs).

Exit codes: 0 ok, 2 configuration error, 3 runtime failure in any
seed, 4 I/O or file-format error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from flab.errors import ConfigError, DataFormatError, FlabError
from flab.harness.config import parse_config
from flab.harness.figdata import FIGURES, export_figure_data
from flab.harness.runner import analyze_run, generate_datasets, run_experiment

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_IO = 4

logger = logging.getLogger("flab.cli")


def _build_parser():
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", metavar="PATH", help="JSON experiment config")
    shared.add_argument("--out", metavar="DIR",
                        help="output root (overrides the config's out_dir)")
    shared.add_argument("--seed", metavar="N", type=int, action="append",
                        default=None, help="append a seed to the config's list")
    shared.add_argument("--quiet", action="store_true", help="warnings only")

    p = argparse.ArgumentParser(prog="flab",
                                description="continual-learning experiment engine")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[shared],
                   help="generate and cache datasets for every seed")
    sub.add_parser("run", parents=[shared], help="run the configured experiment")
    sub.add_parser("analyze", parents=[shared],
                   help="recompute feature analysis from saved snapshots")
    exp = sub.add_parser("export-fig", parents=[shared],
                         help="export tidy figure CSVs from finished runs")
    exp.add_argument("figure", choices=sorted(FIGURES), help="figure analog id")
    exp.add_argument("--run", metavar="DIR", action="append", default=[],
                     dest="runs", help="finished run directory (repeatable)")
    return p


def _load_config(args):
    if not args.config:
        raise ConfigError("--config PATH is required for this command")
    cfg = parse_config(args.config)
    if args.seed:
        for s in args.seed:
            if s not in cfg["seeds"]:
                cfg["seeds"].append(s)
    if args.out:
        cfg["out_dir"] = args.out
    return cfg


def main(argv=None):
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "gen-data":
            cfg = _load_config(args)
            paths = generate_datasets(cfg, cfg["out_dir"])
            logger.info("cached %d dataset(s)", len(paths))
            return EXIT_OK
        if args.command == "run":
            cfg = _load_config(args)
            manifest = run_experiment(cfg)
            if manifest["status"] != "ok":
                failed = [r["seed"] for r in manifest["seeds"]
                          if r["status"] != "ok"]
                logger.error("run finished with failed seeds: %s", failed)
                return EXIT_RUNTIME
            logger.info("run ok: %s", manifest["name"])
            return EXIT_OK
        if args.command == "analyze":
            cfg = _load_config(args)
            analyze_run(cfg)
            return EXIT_OK
        if args.command == "export-fig":
            if not args.runs:
                raise ConfigError("export-fig needs at least one --run DIR")
            out_dir = args.out or "figures-data"
            written = export_figure_data(args.runs, args.figure, out_dir)
            logger.info("wrote %s", ", ".join(written))
            return EXIT_OK
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    except (DataFormatError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_IO
    except FlabError as exc:
        logger.error("%s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
