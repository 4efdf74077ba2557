import argparse
import logging
import sys
import traceback
from typing import List, Optional

from semiclassic_lab.config import settings
from semiclassic_lab.lab import Laboratory
from semiclassic_lab.models.experiment import ExperimentConfig

logging.basicConfig(level=settings.LOG_LEVEL, format='%(message)s')

EXIT_PASS, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(prog="semiclassic-lab",
                                     description="Semiclassical Wigner/Husimi experiments from a TOML configuration")
    commands = parser.add_subparsers(dest="command", required=True)

    run_parser = commands.add_parser("run", help="run an experiment and write its outputs")
    run_parser.add_argument("--config", default=settings.DEFAULT_CONFIG, required=settings.DEFAULT_CONFIG is None,
                            help="experiment TOML file")
    run_parser.add_argument("--out-dir", default=None, help="output directory (default from config or settings)")
    run_parser.add_argument("--seed-override", type=int, default=None, help="replace the configured seed")

    validate_parser = commands.add_parser("validate", help="parse the configuration and check the initial data")
    validate_parser.add_argument("--config", default=settings.DEFAULT_CONFIG, required=settings.DEFAULT_CONFIG is None,
                                 help="experiment TOML file")
    return parser.parse_args(argv)


def run(argv: Optional[List[str]] = None) -> int:
    """Run or validate one experiment; the return value is the process exit code."""
    args = parse_args(argv)
    config = ExperimentConfig.from_toml(args.config)

    if args.command == "validate":
        report = Laboratory(config).validate()
        for check in report.failures():
            logging.error(f"{check.name} = {check.value!r} (bound {check.bound!r})")
        return EXIT_PASS if report.passed else EXIT_FAIL

    laboratory = Laboratory(config, out_dir=args.out_dir, seed_override=args.seed_override)
    outcome, manifest = laboratory.run()
    logging.info(f"Experiment complete: {manifest.kind} -> {laboratory.out_dir} ({len(manifest.files)} files)")
    return EXIT_PASS if outcome.verdict else EXIT_FAIL


def main() -> None:
    try:
        sys.exit(run())
    except Exception as e:
        logging.error(f"Error during experiment: {e}")
        traceback.print_exc()
        sys.exit(EXIT_ERROR)


if __name__ == "__main__":
    main()
