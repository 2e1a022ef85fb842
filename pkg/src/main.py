"""
Command-line interface for the Deep MPC simulator
Subcommands: run, compare, bounds, sweep
"""
import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

from loguru import logger

from .artifacts import read_trajectory_logs, write_trajectory_logs
from .config import LOGGING_CONFIG, LOGS_DIR, format_run_config, load_run_config, output_root
from .errors import ConfigError, DeepMPCError
from .controller import MODES
from .experiment import DeepMPCExperiment, compare_runs

MODE_CHOICES = {"deep": ("deep",), "tube": ("tube",), "both": ("deep", "tube")}


def configure_logging(verbose: bool = False, log_file: bool = True) -> None:
    """stderr sink plus a rotating file sink under LOGS_DIR"""
    level = "DEBUG" if verbose else LOGGING_CONFIG["level"]
    logger.remove()
    logger.add(sys.stderr, level=level, format=LOGGING_CONFIG["format"])
    if log_file:
        LOGS_DIR.mkdir(parents=True, exist_ok=True)
        logger.add(
            LOGS_DIR / "deep_mpc_{time}.log",
            level=level,
            format=LOGGING_CONFIG["format"],
            rotation=LOGGING_CONFIG["rotation"],
            retention=LOGGING_CONFIG["retention"],
        )


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="key = value configuration file")
    parser.add_argument("--seed", type=int, default=None, help="override the configured seed")
    parser.add_argument("--umax-a", dest="u_max_a", type=float, default=None,
                        help="override the learning authority u_max_a")
    parser.add_argument("--steps", type=int, default=None, help="override the number of closed-loop steps")
    parser.add_argument("--out", type=Path, default=None, help="artifact directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deep-mpc", description="Deep MPC authority-allocation simulator")
    parser.add_argument("--verbose", action="store_true", help="debug-level logging")
    parser.add_argument("--no-log-file", action="store_true", help="log to stderr only")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="bounds, reference and closed-loop runs with all artifacts")
    _add_common(run)
    run.add_argument("--mode", choices=sorted(MODE_CHOICES), default="both")

    compare = sub.add_parser("compare", help="compare the step records of two run directories")
    compare.add_argument("run_a", type=Path)
    compare.add_argument("run_b", type=Path)
    compare.add_argument("--mode-a", choices=MODES, default="deep")
    compare.add_argument("--mode-b", choices=MODES, default="deep")
    compare.add_argument("--out", type=Path, default=None, help="write the comparison as JSON")

    bounds = sub.add_parser("bounds", help="estimate w_max and u_max_a from trajectory logs")
    _add_common(bounds)
    bounds.add_argument("--logs", type=Path, nargs="*", default=None,
                        help="trajectory CSV files; exploration runs of the plant when omitted")

    sweep = sub.add_parser("sweep", help="deep and tube MPC over several learning authorities")
    _add_common(sweep)
    sweep.add_argument("--values", type=float, nargs="+", required=True)
    return parser


def _load(args: argparse.Namespace):
    return load_run_config(args.config, seed=args.seed, u_max_a=args.u_max_a, steps=args.steps)


def _run(args: argparse.Namespace) -> int:
    config = _load(args)
    logger.debug("Run configuration:\n" + format_run_config(config))
    experiment = DeepMPCExperiment(config)
    result = experiment.run(args.out, MODE_CHOICES[args.mode], show_progress=True)
    acceptance = result.metrics.get("acceptance")
    if acceptance:
        logger.info(f"Safety: {acceptance['safety']}")
        logger.info(f"Regime: {acceptance['regime']}")
        logger.info(f"Saturation checks: {acceptance['saturation']}")
        logger.info(f"Adequate-authority checks: {acceptance['adequate_authority']}")
    print(result.directory)
    return 0


def _compare(args: argparse.Namespace) -> int:
    metrics = compare_runs(args.run_a, args.run_b, args.mode_a, args.mode_b)
    text = json.dumps(metrics, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return 0


def _bounds(args: argparse.Namespace) -> int:
    experiment = DeepMPCExperiment(_load(args))
    if args.logs:
        logs = [log for path in args.logs for log in read_trajectory_logs(path)]
    else:
        logs = experiment.exploration_logs()
        if args.out:
            args.out.mkdir(parents=True, exist_ok=True)
            write_trajectory_logs(logs, args.out / "exploration_logs.csv")
    bounds = experiment.estimate_authority(logs)
    bounds.check_authority(experiment.config.u_max)
    print(json.dumps({"w_max": bounds.w_max, "u_max_a": bounds.u_max_a}, indent=2))
    return 0


def _sweep(args: argparse.Namespace) -> int:
    experiment = DeepMPCExperiment(_load(args))
    frame = experiment.sweep(args.values, args.out or output_root() / "sweep", show_progress=True)
    print(frame.to_string(index=False))
    return 0


COMMANDS = {"run": _run, "compare": _compare, "bounds": _bounds, "sweep": _sweep}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, log_file=not args.no_log_file)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}")
        return 2
    except DeepMPCError as e:
        logger.error(f"{args.command} failed: {e}")
        return 1
