#!/usr/bin/env python3
"""
Command-line entry point for the atom-laser transfer simulator

    python main.py simulate --config config/fig3_transfer.json --out output
    python main.py sweep --kind rabi --threads 4
    python main.py losses
    python main.py validate-config --config my_scenario.json
    python main.py export-template scenario_template.json
"""

import argparse
import logging
import sys
from typing import List, Optional

from config.config import ConfigManager, setup_logging, validate_environment
from scheduler.scenario_runner import SWEEP_KINDS, ScenarioRunner
from services.dynamics import OpticalSolver, load_state
from services.errors import (
    ConfigError,
    GridMismatchError,
    GuardTripError,
    MetricsError,
    OutputError,
    TeleportError,
    UnitarityError,
)
from services.outputs import resolve_formats

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_GUARD = 2
EXIT_IO = 3
EXIT_INTERRUPTED = 130


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', default=None, help='Scenario file (JSON); defaults apply when omitted')
    common.add_argument('--out', default=None, help='Output directory (default: $TELEPORT_OUTPUT_DIR or ./output)')
    common.add_argument('--format', default='all', choices=['csv', 'json', 'svg', 'all'],
                        help='Artefacts to write')
    common.add_argument('--resolution-mult', type=int, default=None,
                        help='Multiply grid points and time steps by this power of two')
    common.add_argument('--optical-solver', default=None, choices=[s.value for s in OpticalSolver],
                        help='Override the optical solver of the scenario')
    common.add_argument('--log-file', default=None, help='Also write the log to this file')

    parser = argparse.ArgumentParser(description='Atom-laser quantum state transfer simulator')
    commands = parser.add_subparsers(dest='command', required=True)

    simulate = commands.add_parser('simulate', parents=[common], help='Single transfer run with snapshots')
    simulate.add_argument('--resume', default=None, help='Continue from a saved state (.npz)')

    sweep = commands.add_parser('sweep', parents=[common], help='T-V parameter sweep')
    sweep.add_argument('--kind', default=None, choices=SWEEP_KINDS,
                       help='Sweep parameter (default: from the scenario, else rabi)')
    sweep.add_argument('--threads', type=int, default=None, help='Sweep points run in parallel')

    losses = commands.add_parser('losses', parents=[common], help='Spontaneous-emission and coherence report')
    losses.add_argument('--trajectory', action='store_true',
                        help='Also integrate the excited population along a simulated run')

    commands.add_parser('validate-config', parents=[common], help='Check a scenario file')

    template = commands.add_parser('export-template', help='Write a fully populated default scenario')
    template.add_argument('path', nargs='?', default='scenario_template.json')

    return parser


def run_command(args: argparse.Namespace, manager: ConfigManager) -> int:
    if args.command == 'export-template':
        manager.export_config_template(args.path)
        return EXIT_OK

    if args.resolution_mult is not None or args.optical_solver is not None:
        manager.apply_overrides(args.resolution_mult, args.optical_solver)

    if args.command == 'validate-config':
        return EXIT_OK if validate_environment(manager) else EXIT_CONFIG

    runner = ScenarioRunner(
        manager,
        out_dir=args.out,
        formats=resolve_formats(args.format),
        threads=getattr(args, 'threads', None),
    )

    if args.command == 'simulate':
        resume = load_state(args.resume) if args.resume else None
        runner.run_fig3(resume)
    elif args.command == 'sweep':
        runner.run_sweep(args.kind)
    elif args.command == 'losses':
        runner.run_losses(include_trajectory=args.trajectory)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """Main function with command line argument support"""
    args = build_parser().parse_args(argv)

    try:
        manager = ConfigManager(getattr(args, 'config', None))
    except ConfigError as e:
        setup_logging()
        logger.error(f"❌ Configuration error: {e}")
        return EXIT_CONFIG

    setup_logging(manager.runtime.log_level, manager.runtime.log_format, getattr(args, 'log_file', None))

    try:
        exit_code = run_command(args, manager)
    except KeyboardInterrupt:
        logger.info("🛑 Run interrupted by user")
        exit_code = EXIT_INTERRUPTED
    except OutputError as e:
        logger.error(f"❌ Output error ({e.path}): {e}")
        exit_code = EXIT_IO
    except (GuardTripError, UnitarityError, MetricsError) as e:
        logger.error(f"❌ Numerical guard: {e}")
        exit_code = EXIT_GUARD
    except (ConfigError, GridMismatchError) as e:
        logger.error(f"❌ Configuration error: {e}")
        exit_code = EXIT_CONFIG
    except TeleportError as e:
        logger.error(f"❌ {e}")
        exit_code = EXIT_CONFIG
    except Exception as e:
        logger.error(f"💥 Unexpected error: {e}")
        exit_code = EXIT_CONFIG

    logger.info("=" * 60)
    logger.info(f"🏁 {args.command} finished with exit code: {exit_code}")
    logger.info("=" * 60)
    return exit_code


if __name__ == "__main__":
    sys.exit(main())
