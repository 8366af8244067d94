"""Command line entry point: ``oeduu {build-rom,optimize,evaluate,run-all,validate}``."""

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ExperimentConfig, load_config
from .errors import ConfigError, NumericalError
from . import pipeline

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML experiment config (defaults if omitted)")
    common.add_argument("--out", type=Path, default=Path("runs/latest"), help="output directory")
    common.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
    common.add_argument("--workers", type=int, default=None, help="threads for sample-parallel work")
    common.add_argument("--mode", choices=["oeduu", "deterministic", "validate"], action="append",
                        help="optimization mode(s); repeatable")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="oeduu", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("build-rom", parents=[common], help="sample uncertainty and build reduced models")
    opt = sub.add_parser("optimize", parents=[common], help="continuation over the gamma grid")
    opt.add_argument("--rom", type=Path, help="ROM archive (default: OUT/rom)")
    ev = sub.add_parser("evaluate", parents=[common], help="held-out evaluation of designs")
    ev.add_argument("--designs", type=Path, help="directory holding designs/ (default: OUT)")
    sub.add_parser("run-all", parents=[common], help="build-rom, optimize and evaluate")
    val = sub.add_parser("validate", parents=[common],
                         help="re-evaluate OEDUU designs with exact PDE operators")
    val.add_argument("--rom", type=Path, help="ROM archive (default: OUT/rom)")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        if args.workers is not None and args.workers < 1:
            raise ConfigError("must be >= 1", "--workers")
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "build-rom":
            result = pipeline.run_build_rom(cfg, out, args.seed, args.workers)
            summary = {"basis_sizes": result["basis_sizes"], "table": result["table"]}
        elif args.command == "optimize":
            _, summary = pipeline.run_optimize(cfg, args.rom or out / "rom", out, args.mode,
                                               args.seed)
        elif args.command == "validate":
            _, summary = pipeline.run_optimize(cfg, args.rom or out / "rom", out,
                                               ["oeduu", "validate"], args.seed)
        elif args.command == "evaluate":
            _, _, summary = pipeline.run_evaluate(cfg, args.designs or out, out, args.seed,
                                                  args.workers)
            summary.pop("seed_audit", None)
        else:
            report = pipeline.run_all(cfg, out, args.seed, args.workers, args.mode)
            summary = {k: report[k] for k in ("completed_phases", "seconds", "pde_solves_total")}
            summary["comparison"] = report.get("comparison")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(json.dumps(summary, indent=2, default=pipeline._json_default))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
