#!/usr/bin/env python3
"""
nsdb - energy-stable Navier-Stokes-Darcy-Boussinesq simulator
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from rich.console import Console
from rich.logging import RichHandler

from src.config import Config, default_log_level
from src.core.enums import ExperimentKind
from src.core.errors import BoundViolationError, ConfigError, ParameterError, SimulationError
from src.core.fem import build_dof_map
from src.core.mesh import GeometrySpec, build_decomposed_mesh, validate_mesh
from src.core.model import make_material
from src.experiments import EXPERIMENTS, print_summary, run_experiment
from src.output import write_report

logger = logging.getLogger("nsdb")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FAILED = 3
EXIT_IO = 4


def setup_logging(quiet: bool = False):
    level = logging.WARNING if quiet else default_log_level()
    logging.basicConfig(level=level, format="%(message)s", datefmt="[%X]",
                        handlers=[RichHandler(rich_tracebacks=True, show_path=False)], force=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nsdb", description=__doc__.strip())
    common = argparse.ArgumentParser(add_help=False)
    source = common.add_mutually_exclusive_group(required=True)
    source.add_argument("--config", type=Path, help="JSON run configuration")
    source.add_argument("--preset", help="named preset scenario instead of a config file")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--dump-systems", type=Path, metavar="DIR",
                        help="write the step-1 reduced systems in Matrix Market format")
    common.add_argument("--quiet", action="store_true", help="only warnings and errors")

    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("run", parents=[common], help="standard run with energy certificates")
    sweep = commands.add_parser("xi-sweep", parents=[common], help="Brinkman parameter halving study")
    sweep.add_argument("--levels", type=int)
    refine = commands.add_parser("dt-refine", parents=[common], help="time-step halving study")
    refine.add_argument("--levels", type=int)
    twins = commands.add_parser("uniqueness", parents=[common], help="perturbed twin runs and Gronwall fit")
    twins.add_argument("--amplitude", type=float)
    commands.add_parser("mms", parents=[common], help="manufactured-solution convergence orders")
    commands.add_parser("validate-config", parents=[common], help="parse and check a configuration")
    return parser


def load(args) -> Config:
    if args.preset:
        return Config.from_preset(args.preset)
    return Config.load_config(args.config)


def validate(config: Config, console: Console) -> bool:
    geometry = config.geometry
    mesh = build_decomposed_mesh(GeometrySpec(width=geometry.Lx, porous_height=geometry.Hm,
                                              free_height=geometry.Hf), geometry.nx, geometry.ny_f, geometry.ny_m)
    violations = validate_mesh(mesh)
    for v in violations:
        console.print(f"[red]mesh {v.kind}[/red] at {v.entity}: {v.message}")
    make_material(config.material.to_dict(), build_dof_map(mesh, config.scheme.clamp))
    console.print(f"configuration {config.source or ''} is valid (hash {config.config_hash()[:12]})"
                  if not violations else "configuration is invalid")
    return not violations


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    args = build_parser().parse_args(argv)
    setup_logging(args.quiet)
    console = Console(quiet=args.quiet)
    try:
        config = load(args)
        if args.command == "validate-config":
            return EXIT_OK if validate(config, console) else EXIT_CONFIG
        out_dir = config.output_directory(args.out)
        kind = ExperimentKind(args.command)
        if kind is ExperimentKind.RUN:
            report = run_experiment(config, out_dir, args.dump_systems)
        elif kind is ExperimentKind.UNIQUENESS:
            report = EXPERIMENTS[kind](config, args.amplitude)
        elif kind in (ExperimentKind.XI_SWEEP, ExperimentKind.DT_REFINE):
            report = EXPERIMENTS[kind](config, args.levels)
        else:
            report = EXPERIMENTS[kind](config)
        write_report(report, out_dir)
    except (ConfigError, BoundViolationError, ParameterError) as e:
        logger.error("configuration error: %s", e)
        return EXIT_CONFIG
    except OSError as e:
        logger.error("output failed: %s", e)
        return EXIT_IO
    except SimulationError as e:
        logger.error("simulation failed: %s", e)
        return EXIT_FAILED
    print_summary(report, console)
    return EXIT_OK if report.get("passed") else EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
