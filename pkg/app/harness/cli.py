"""
Command-line interface: simulate | run | sweep | report.

Exit codes: 0 on success, 2 on configuration errors, 3 on numerical failures.
"""

import argparse
import asyncio
import logging
import sys
from pathlib import Path
from typing import List, Optional

from app.harness.experiment import SWEEP_AXES, ExperimentConfig, load_config
from app.harness.orchestrator import SPLITS, ExperimentOrchestrator, materialize_trial
from app.harness.results import read_results, write_diagnostics, write_report, write_results
from app.simulation.system import save_dataset_csv
from app.utils.config import LOG_FORMAT, LOG_LEVEL, OUTPUT_DIR
from app.utils.errors import ConfigError, NumericalError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _float_list(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _name_list(text: str) -> List[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _cluster_count(text: str):
    return text if text == "auto" else int(text)


def _experiment_flags() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", type=Path, help="JSON file with ExperimentConfig keys")
    parent.add_argument("--seed", type=int)
    parent.add_argument("--trials", type=int)
    parent.add_argument("--alphas", type=_float_list, help="e.g. 0.5,0.6,0.7")
    parent.add_argument("--noise-std", type=float)
    parent.add_argument("--noise-mean", type=float)
    parent.add_argument("--methods", type=_name_list, help="subset of wcp,aci,end2end,set_level,cluster_level")
    parent.add_argument("--k-clusters", type=_cluster_count, help="integer or 'auto'")
    parent.add_argument("--quantile-mode", choices=["strict", "clamped"])
    parent.add_argument("--cluster-quantile-mode", choices=["strict", "clamped"])
    parent.add_argument("--regressor", choices=["forest", "sklearn"])
    parent.add_argument("--nonlinear", action="store_true", default=None)
    parent.add_argument("--workers", type=int)
    parent.add_argument("--out", type=Path, help="output file (directory for simulate)")
    parent.add_argument("--verbose", action="store_true", default=None)
    return parent


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cascade-calibration",
        description="Conformal prediction intervals for two-module cascaded systems",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    flags = _experiment_flags()

    simulate = commands.add_parser("simulate", parents=[flags], help="write one trial's splits as CSV")
    simulate.add_argument("--trial", type=int, default=0)

    commands.add_parser("run", parents=[flags], help="run all trials and write result rows")

    sweep = commands.add_parser("sweep", parents=[flags], help="run once per value of one axis")
    sweep.add_argument("--axis", required=True, choices=list(SWEEP_AXES))
    sweep.add_argument("--values", required=True, type=_name_list, help="comma-separated axis values")

    report = commands.add_parser("report", help="mean/std summary of a result CSV")
    report.add_argument("results", type=Path)
    report.add_argument("--out", type=Path)
    report.add_argument("--verbose", action="store_true", default=None)
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    return load_config(
        args.config,
        seed=args.seed,
        trials=args.trials,
        alphas=args.alphas,
        noise_std=args.noise_std,
        noise_mean=args.noise_mean,
        methods=args.methods,
        k_clusters=args.k_clusters,
        quantile_mode=args.quantile_mode,
        cluster_quantile_mode=args.cluster_quantile_mode,
        regressor=args.regressor,
        nonlinear=args.nonlinear,
        workers=args.workers,
        output=args.out,
        verbose=args.verbose,
    )


def _output_path(cfg: ExperimentConfig, name: str) -> Path:
    return cfg.output or OUTPUT_DIR / name


def _diagnostics_path(out: Path) -> Path:
    return out.with_name(f"{out.stem}_clusters.csv")


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = config_from_args(args)
    out_dir = cfg.output or OUTPUT_DIR / f"trial_{args.trial}"
    data = materialize_trial(cfg, args.trial, fit=False)
    for name in SPLITS:
        save_dataset_csv(data.splits[name], out_dir / f"{name}.csv")
    logger.info(f"Simulated trial {args.trial} into {out_dir}")
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    cfg = config_from_args(args)
    orchestrator = ExperimentOrchestrator(cfg)
    results = asyncio.run(orchestrator.run())
    out = write_results(results, _output_path(cfg, "run.csv"))
    if cfg.verbose and orchestrator.diagnostics:
        write_diagnostics(orchestrator.diagnostics, _diagnostics_path(out))
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = config_from_args(args)
    orchestrator = ExperimentOrchestrator(cfg)
    results = asyncio.run(orchestrator.sweep(args.axis, args.values))
    out = write_results(results, _output_path(cfg, f"sweep_{args.axis}.csv"))
    if cfg.verbose and orchestrator.diagnostics:
        write_diagnostics(orchestrator.diagnostics, _diagnostics_path(out))
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    try:
        frame = read_results(args.results)
    except (OSError, ValueError) as e:
        raise ConfigError(f"cannot read results {args.results}: {e}") from e
    out = args.out or args.results.with_name(f"{args.results.stem}_report.csv")
    write_report(frame, out)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "run": cmd_run,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else getattr(logging, LOG_LEVEL, logging.INFO)
    logging.basicConfig(level=level, format=LOG_FORMAT)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        logger.error(f"Configuration error: {str(e)}")
        return EXIT_CONFIG
    except NumericalError as e:
        logger.error(f"Numerical failure: {str(e)}")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
