"""Command-line interface for hamflow."""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

import humanize

from .acceptance import CRITERIA, CriterionResult, run_acceptance
from .config import DEFAULT_OUT_DIR, OUT_DIR_ENV, config_schema, load_config
from .errors import AcceptanceFilterError, ConfigError, HamflowError
from .experiments import ExperimentResult, run_batch

# Set up logging
logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(levelname)s - %(message)s")
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2


def parse_args(args: List[str] = None) -> argparse.Namespace:
    """Parse command line arguments."""
    parser = argparse.ArgumentParser(
        description="Run Hamiltonian curvature, Laplacian and gradient-flow experiments."
    )

    parser.add_argument(
        "--config",
        type=Path,
        help="JSON experiment config: one experiment object or {\"experiments\": [...]}",
    )

    parser.add_argument(
        "--out",
        type=Path,
        default=Path(os.environ.get(OUT_DIR_ENV, DEFAULT_OUT_DIR)),
        help=f"Output directory (default: ${OUT_DIR_ENV} or {DEFAULT_OUT_DIR})",
    )

    parser.add_argument(
        "--filter",
        help="Run only the acceptance criteria whose name contains this text",
    )

    parser.add_argument(
        "--threads",
        type=int,
        default=1,
        help="Experiments or criteria run in parallel (default: 1)",
    )

    parser.add_argument(
        "--tolerance-scale",
        type=float,
        default=1.0,
        help="Factor loosening every acceptance threshold and experiment tolerance (default: 1.0)",
    )

    parser.add_argument("--list", action="store_true", help="List acceptance criteria and exit")

    parser.add_argument("--schema", action="store_true", help="Print the config JSON schema and exit")

    parser.add_argument("-v", "--verbose", action="store_true", help="Enable verbose output")

    return parser.parse_args(args)


def _report_error(kind: str, messages: List[str]) -> None:
    """Machine-readable error object on stderr."""
    print(json.dumps({"error": kind, "messages": messages}, sort_keys=True), file=sys.stderr)


def _print_experiments(results: List[ExperimentResult], out: Path) -> None:
    print(f"\n=== Experiments ({len(results)}) ===")
    for result in results:
        status = "ok" if result.ok else f"error: {result.error}"
        print(f"{result.name} [{result.kind}]: {status} in {humanize.naturaldelta(result.runtime, minimum_unit='milliseconds')}")
        for key in sorted(result.metrics):
            print(f"  {key} = {result.metrics[key]:.6g}")
    print(f"\nArtifacts written under {out}")


def _print_acceptance(results: List[CriterionResult]) -> None:
    print("\n=== Acceptance Summary ===")
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        took = humanize.naturaldelta(result.runtime, minimum_unit="milliseconds")
        print(f"{status} {result.name} ({took})")
        if result.error:
            print(f"  - error: {result.error}")
        for m in result.measurements:
            mark = "ok" if m.passed else "FAILED"
            print(f"  - {m.name}: {m.value:.3e} {m.comparison} {m.threshold:.3e} {mark}")

    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"\n=== {len(failed)} of {len(results)} criteria failed: {', '.join(failed)} ===")
    else:
        print(f"\n=== All {len(results)} criteria passed ===")


def _run_config(args: argparse.Namespace) -> int:
    batch = load_config(args.config)
    results = run_batch(batch, args.out, threads=args.threads, tolerance_scale=args.tolerance_scale)
    _print_experiments(results, args.out)
    failed = [r.name for r in results if not r.ok]
    if failed:
        logger.error(f"{len(failed)} experiment(s) failed: {', '.join(failed)}")
        _report_error("ExperimentError", [f"{r.name}: {r.error}" for r in results if not r.ok])
        return EXIT_FAILURE
    logger.info(f"All {len(results)} experiment(s) finished")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for the CLI."""
    args = parse_args(argv)
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)

    if args.schema:
        print(config_schema())
        return EXIT_OK

    if args.list:
        print("\n=== Acceptance Criteria ===")
        for criterion in CRITERIA.values():
            print(f"{criterion.name}: {criterion.title} (budget {criterion.budget:.0f}s)")
        return EXIT_OK

    if args.threads < 1 or args.tolerance_scale <= 0:
        _report_error("ConfigError", ["--threads must be >= 1 and --tolerance-scale > 0"])
        return EXIT_CONFIG

    try:
        if args.config is not None:
            return _run_config(args)
        results = run_acceptance(args.filter, args.threads, args.tolerance_scale)
    except ConfigError as exc:
        logger.error(str(exc))
        _report_error("ConfigError", exc.messages)
        return EXIT_CONFIG
    except AcceptanceFilterError as exc:
        logger.error(str(exc))
        _report_error("AcceptanceFilterError", [str(exc), *exc.available])
        return EXIT_CONFIG
    except HamflowError as exc:
        logger.error(str(exc))
        _report_error(type(exc).__name__, [str(exc)])
        return EXIT_FAILURE

    _print_acceptance(results)
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILURE
