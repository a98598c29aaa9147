"""
Population Counting Simulator - Main Entry Point
================================================

Command-line front end: single runs, sweeps, the acceptance check and a
protocol listing.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

# Add project root to path
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from config import (PROFILE_ALIASES, PROFILES, ConfigurationError, ExperimentSpec,
                    get_config_manager, merge_cli)
from core.acceptance import SCALES, run_acceptance
from core.harness import ExperimentResult, aggregate_runs, run_single, sweep
from protocols.suite_base import get_protocol_registry
from utils.helpers import parse_int_list
from utils.report_generator import emit

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def setup_logging(verbose: bool = False, log_file: Optional[str] = None) -> logging.Logger:
    """Set up application logging."""
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_file))

    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format=LOG_FORMAT,
        handlers=handlers,
    )
    return logging.getLogger('PopulationCounting')


def _add_experiment_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--config', help='Experiment file (YAML); flags override its values')
    parser.add_argument('--protocol', help='Protocol name (see the protocols command)')
    parser.add_argument('--n', help='Population sizes, e.g. 256,1024 or 2..16')
    parser.add_argument('--seeds', type=int, help='Number of seeds (0..seeds-1)')
    parser.add_argument('--seed', type=int, help='Single explicit seed')
    parser.add_argument('--profile', choices=sorted([*PROFILES, *PROFILE_ALIASES]),
                        help='Constant profile')
    parser.add_argument('--max-interactions', type=int, help='Hard interaction limit per run')
    parser.add_argument('--override', action='append', default=[], metavar='KEY=VALUE',
                        help='Override a profile constant (repeatable)')
    parser.add_argument('--fault', help='Fault descriptor, e.g. corrupt-k:-3@pre-errordetect')
    parser.add_argument('--out', action='append', default=[], metavar='PATH',
                        help='Result file (.csv, .json or .html; repeatable)')
    parser.add_argument('--trace', help='NDJSON interaction trace (single cell, n <= 256)')


def parse_arguments(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse command-line arguments."""
    parser = argparse.ArgumentParser(
        description='Population protocol simulator for uniform counting protocols',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog='''
Examples:
  # One run of the exact counter
  python main.py run --protocol count-exact --n 1024 --seed 3

  # Sweep with CSV and JSON output
  python main.py sweep --protocol approximate --n 256,1024 --seeds 10 --out runs.csv --out agg.json

  # Fault injection on the stable variant
  python main.py run --protocol approximate-stable --n 256 --fault corrupt-k:-3@pre-errordetect

  # Acceptance suite
  python main.py check --scale quick
        '''
    )
    parser.add_argument('-v', '--verbose', action='store_true', help='Debug logging')
    parser.add_argument('--log-file', help='Also write the log to this file')

    sub = parser.add_subparsers(dest='command', required=True)

    run_parser = sub.add_parser('run', help='Run a single (n, seed) cell')
    _add_experiment_arguments(run_parser)

    sweep_parser = sub.add_parser('sweep', help='Run every (n, seed) cell of an experiment')
    _add_experiment_arguments(sweep_parser)

    check_parser = sub.add_parser('check', help='Run the acceptance suite')
    check_parser.add_argument('--scale', choices=sorted(SCALES), default='quick',
                              help='Population sizes and trial counts')
    check_parser.add_argument('--only', help='Comma-separated criterion numbers')

    sub.add_parser('protocols', help='List available protocols and profiles')

    return parser.parse_args(argv)


def build_spec(args: argparse.Namespace) -> ExperimentSpec:
    """Experiment file (if any) with command-line values applied on top."""
    spec = get_config_manager().load_experiment(args.config) if args.config else ExperimentSpec()
    try:
        n_values = parse_int_list(args.n) if args.n else None
    except ValueError:
        raise ConfigurationError(f"Invalid population sizes: {args.n}") from None
    return merge_cli(spec, protocol=args.protocol, n_values=n_values, seeds=args.seeds,
                     seed=args.seed, profile=args.profile,
                     max_interactions=args.max_interactions, overrides=args.override,
                     fault=args.fault, outputs=args.out, trace=args.trace)


def cli_run(args: argparse.Namespace) -> int:
    """
    Run one cell and print its metrics as JSON.

    Args:
        args: Command-line arguments
    """
    spec = build_spec(args)
    if len(spec.n_values) > 1 or len(spec.seed_list) > 1:
        spec.n_values = spec.n_values[:1]
        spec.seeds = spec.seed_list[:1]
    metrics = run_single(spec)
    print(json.dumps(metrics.to_dict(), indent=2))

    if spec.outputs:
        aggregates, fit = aggregate_runs(spec.protocol, [metrics])
        emit(ExperimentResult(spec.protocol, [metrics], aggregates, fit), spec.outputs)
    return 0 if metrics.correct else 1


def cli_sweep(args: argparse.Namespace) -> int:
    """
    Run a sweep and write its result files.

    Args:
        args: Command-line arguments
    """
    logger = logging.getLogger('PopulationCounting')
    spec = build_spec(args)

    def progress(current: int, total: int, message: str) -> None:
        logger.info("[%d/%d] %s", current, total, message)

    result = sweep(spec, progress)
    print(f"\n=== {result.protocol} ({spec.profile}) ===")
    print(f"{'n':>8} {'runs':>5} {'success':>8} {'median T_C':>12} {'p95 T_C':>12} {'c':>9}")
    for a in result.aggregates:
        median_tc = f"{a.median_tc:.0f}" if a.median_tc is not None else "-"
        p95_tc = f"{a.p95_tc:.0f}" if a.p95_tc is not None else "-"
        fitted = f"{a.fitted_c:.3f}" if a.fitted_c is not None else "-"
        print(f"{a.n:>8} {a.runs:>5} {a.success_rate:>8.2f} {median_tc:>12} {p95_tc:>12} {fitted:>9}")
    if result.fit is not None:
        print(f"\nFit: T_C ~ {result.fit.c:.3f} * {result.fit.form} "
              f"(ratio spread {result.fit.ratio_spread:.2f})")

    if spec.outputs:
        emit(result, spec.outputs)
    return 0


def cli_check(args: argparse.Namespace) -> int:
    """
    Run the acceptance suite and print pass/fail per criterion.

    Args:
        args: Command-line arguments
    """
    only = parse_int_list(args.only) if args.only else None
    results = run_acceptance(args.scale, only)

    print(f"\n=== Acceptance ({args.scale}) ===")
    for result in results:
        print(result.summary())
        for line in result.details:
            print(f"    {line}")
    passed = all(r.passed for r in results)
    print(f"\n{sum(r.passed for r in results)}/{len(results)} criteria passed")
    return 0 if passed else 1


def cli_protocols() -> int:
    """List protocols and profiles."""
    print("=== Protocols ===")
    for info in get_protocol_registry().list_protocols():
        print(f"  {info['name']:<28} {info['description']}")
        print(f"  {'':<28} faults: {info['faults']}")

    print("\n=== Profiles ===")
    for profile in get_config_manager().profile_table():
        print(f"  {profile['name']:<10} c={profile['clock_c']} m={profile['modulus']} "
              f"offset={profile['level_offset']} terminal={profile['terminal_phase']} "
              f"outer={profile['outer_modulus']}")
    for alias, target in sorted(PROFILE_ALIASES.items()):
        print(f"  {alias:<10} same as {target}")
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    args = parse_arguments(argv)
    logger = setup_logging(args.verbose, args.log_file)

    try:
        if args.command == 'run':
            return cli_run(args)
        if args.command == 'sweep':
            return cli_sweep(args)
        if args.command == 'check':
            return cli_check(args)
        return cli_protocols()

    except ConfigurationError as e:
        logger.error("Configuration error: %s", e)
        print(f"ERROR: {e}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        logger.info("Interrupted by user")
        return 1
    except Exception as e:
        logger.error("Unexpected error: %s", e, exc_info=True)
        return 1


if __name__ == '__main__':
    sys.exit(main())
