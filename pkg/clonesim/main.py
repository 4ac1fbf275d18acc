"""
Request-cloning simulator - command-line interface
run / analyze / theory / verify
"""

import argparse
import logging
import sys
from typing import List, Optional

from pydantic import ValidationError

from clonesim import __version__
from clonesim.models.schemas import FigureKind
from clonesim.services import analysis, runner, verify
from clonesim.utils.config import config
from clonesim.utils.errors import ClonesimError

logger = logging.getLogger(__name__)


# === COMMAND HANDLERS ===

def handle_run(args: argparse.Namespace) -> int:
    """Simulate every point of a scenario and persist the samples."""
    manifest = runner.run(args.scenario, jobs=args.jobs, seed=args.seed, requests=args.requests,
                          replications=args.reps, out=args.out, allow_unstable=args.allow_unstable)
    print(f"✅ {manifest.scenario_name}: {len(manifest.points)} points x {manifest.replications} replications "
          f"(hash {manifest.scenario_hash[:12]})")
    return 0


def handle_analyze(args: argparse.Namespace) -> int:
    """Emit plot data for a completed run."""
    written = analysis.analyze(args.manifest, args.figure, out_dir=args.out)
    for path in written:
        print(f"📄 {path}")
    return 0


def handle_theory(args: argparse.Namespace) -> int:
    """Write the analytical curves of a scenario."""
    written = analysis.theory(args.scenario, out_dir=args.out,
                              jsq_requests=args.jsq_requests, jsq_replications=args.jsq_reps)
    for path in written:
        print(f"📄 {path}")
    return 0


def handle_verify(args: argparse.Namespace) -> int:
    """Run the acceptance suite and print its JSON report."""
    report = verify.verify(quick=args.quick, seed=args.seed, drain_factor=args.drain_factor, only=args.only)
    print(report.model_dump_json(indent=2))
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clonesim",
        description="Request cloning in processor-sharing clusters: simulation, theory and plot data"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    run_parser = commands.add_parser("run", help="Simulate a scenario file or preset")
    run_parser.add_argument("scenario", help="Scenario JSON file or preset name")
    run_parser.add_argument("--jobs", type=int, default=None, help=f"Worker processes (default: {config.JOBS})")
    run_parser.add_argument("--seed", type=int, default=None, help="Override the master seed")
    run_parser.add_argument("--requests", type=int, default=None, help="Override requests per replication")
    run_parser.add_argument("--reps", type=int, default=None, help="Override the number of replications")
    run_parser.add_argument("--out", default=None,
                            help=f"Run directory (default: {config.OUTPUT_DIR}/<scenario name>)")
    run_parser.add_argument("--allow-unstable", action="store_true",
                            help="Run points whose estimated load is >= 1 instead of refusing")
    run_parser.set_defaults(handler=handle_run)

    analyze_parser = commands.add_parser("analyze", help="Emit plot data from a run manifest")
    analyze_parser.add_argument("manifest", help="manifest.json or its run directory")
    analyze_parser.add_argument("--figure", choices=[kind.value for kind in FigureKind], default=None,
                                help="Figure family (default: the scenario's own)")
    analyze_parser.add_argument("--out", default=None, help="Data directory (default: <run>/data)")
    analyze_parser.set_defaults(handler=handle_analyze)

    theory_parser = commands.add_parser("theory", help="Write analytical optimum curves")
    theory_parser.add_argument("scenario", help="Scenario JSON file or preset name")
    theory_parser.add_argument("--out", default=None, help="Data directory (default: <run>/data)")
    theory_parser.add_argument("--jsq-requests", type=int, default=analysis.JSQ_CALIBRATION_REQUESTS,
                               help="Requests per calibration run of the simulated c-JSQ-d curve")
    theory_parser.add_argument("--jsq-reps", type=int, default=analysis.JSQ_CALIBRATION_REPLICATIONS,
                               help="Replications per calibration run (at least 2)")
    theory_parser.set_defaults(handler=handle_theory)

    verify_parser = commands.add_parser("verify", help="Run the acceptance suite")
    verify_parser.add_argument("--quick", action="store_true", help="Short runs for a smoke check")
    verify_parser.add_argument("--seed", type=int, default=None, help=f"Master seed (default: {config.SEED})")
    verify_parser.add_argument("--drain-factor", type=float, default=1.0,
                               help="Scale every server's drain rate (mutation check; 1.0 in normal use)")
    verify_parser.add_argument("--only", nargs="+", default=None, help="Run only the named criteria")
    verify_parser.set_defaults(handler=handle_verify)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except (ClonesimError, ValidationError, FileNotFoundError, ValueError) as e:
        logger.error(f"{args.command} failed: {e}")
        return 1


if __name__ == "__main__":
    logging.basicConfig(level=config.log_level(), format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
    sys.exit(main())
