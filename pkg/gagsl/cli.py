"""
Command-line entry point.

    gagsl run --config <path> [--seed N] [--out DIR] [--trials N]
    gagsl sweep --config <path> --attack edge_add --rates 0,0.25,0.5,0.75
    gagsl sensitivity --config <path> --parameter beta --values 0,0.01,0.1
    gagsl ablation --config <path>
    gagsl plot-data <run_dir>
    gagsl check [--seed N]

Exit codes: 0 success, 2 missing or invalid input, 1 any other failure.
"""
import argparse
import logging
import sys
from typing import List, Optional

from pydantic import ValidationError

from gagsl import pipeline
from gagsl.checks import run_checks
from gagsl.config import (
    BETA_SENSITIVITY_VALUES,
    EDGE_ADD_RATES,
    EDGE_DELETE_RATES,
    FEATURE_NOISE_RATES,
    GAMMA_SENSITIVITY_VALUES,
    setup_logging,
)
from gagsl.exceptions import ArtifactIntegrityError, ContractViolation, GaGSLError, StageError, stage
from gagsl.models import ExperimentConfig, load_config

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INPUT = 2

DEFAULT_RATES = {
    "edge_add": (0.0,) + EDGE_ADD_RATES,
    "edge_delete": EDGE_DELETE_RATES,
    "feature_noise": FEATURE_NOISE_RATES,
}
DEFAULT_VALUES = {
    "gamma1": GAMMA_SENSITIVITY_VALUES,
    "gamma2": GAMMA_SENSITIVITY_VALUES,
    "beta": BETA_SENSITIVITY_VALUES,
}


def parse_floats(text: str) -> List[float]:
    """Comma-separated list of numbers."""
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gagsl", description="Graph structure learning under the GIB principle")
    parser.add_argument("--log-level", default=None, help="Overrides GAGSL_LOG_LEVEL")
    commands = parser.add_subparsers(dest="command", required=True)

    def experiment(name: str, help_text: str) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument("--config", required=True, help="JSON experiment config")
        sub.add_argument("--seed", type=int, default=None, help="Base seed (overrides the config)")
        sub.add_argument("--out", default=None, help="Run directory (overrides the config)")
        sub.add_argument("--trials", type=int, default=None, help="Trial count (overrides the config)")
        return sub

    experiment("run", "Train and evaluate GaGSL (and the GCN baseline) over independent trials")

    sweep = experiment("sweep", "Metrics of GaGSL and GCN across attack rates")
    sweep.add_argument("--attack", required=True, choices=sorted(DEFAULT_RATES))
    sweep.add_argument("--rates", type=parse_floats, default=None, help="e.g. 0,0.25,0.5,0.75")

    sensitivity = experiment("sensitivity", "Metrics of GaGSL across gamma1, gamma2 or beta")
    sensitivity.add_argument("--parameter", required=True, choices=pipeline.SENSITIVITY_PARAMETERS)
    sensitivity.add_argument("--values", type=parse_floats, default=None)

    experiment("ablation", "The full model against each ablated variant")

    plot = commands.add_parser("plot-data", help="Heatmap CSVs and weight histogram JSON of a completed run")
    plot.add_argument("run_dir")

    check = commands.add_parser("check", help="Run the gradient and oracle invariant suite")
    check.add_argument("--seed", type=int, default=0)
    return parser


def _load(args) -> ExperimentConfig:
    with stage("load_config"):
        try:
            config = load_config(args.config)
        except ValidationError as e:
            raise ContractViolation(f"invalid config {args.config}: {e}")
        return config.with_overrides(seed=args.seed, out=args.out, trials=args.trials)


def dispatch(args) -> int:
    if args.command == "check":
        results = run_checks(seed=args.seed)
        failed = [r.name for r in results if not r.passed]
        if failed:
            logger.error("%d of %d checks failed: %s", len(failed), len(results), "; ".join(failed))
            return EXIT_FAILURE
        logger.info("All %d checks passed", len(results))
        return EXIT_OK

    if args.command == "plot-data":
        for path in pipeline.emit_plot_data(args.run_dir):
            print(path)
        return EXIT_OK

    config = _load(args)
    if args.command == "run":
        manifest = pipeline.run_experiment(config)
        print(f"{config.output_dir} ({manifest.status}, config {manifest.config_hash[:12]})")
    elif args.command == "sweep":
        rows = pipeline.run_attack_sweep(config, args.attack, args.rates or DEFAULT_RATES[args.attack])
        print(f"{config.output_dir}: {len(rows)} rows")
    elif args.command == "sensitivity":
        values = args.values or DEFAULT_VALUES[args.parameter]
        rows = pipeline.run_sensitivity_sweep(config, args.parameter, values)
        print(f"{config.output_dir}: {len(rows)} rows")
    elif args.command == "ablation":
        rows = pipeline.run_ablation(config)
        print(f"{config.output_dir}: {len(rows)} rows")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        return dispatch(args)
    except StageError as e:
        logger.error("Failed in stage '%s': %s", e.stage, e.cause)
        return EXIT_INPUT if e.is_input_error else EXIT_FAILURE
    except ArtifactIntegrityError as e:
        logger.error("Artifact error: %s", e)
        return EXIT_FAILURE
    except GaGSLError as e:
        logger.error("%s", e)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
