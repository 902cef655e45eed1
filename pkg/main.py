"""
distill-lab - Command Line Entry Point

Each stage has its own subcommand; `run` executes the whole pipeline (or the
stages named with --stage) in dependency order. Stages whose outputs already
exist under a matching cache key are skipped.

Exit codes: 0 success, 1 configuration error, 2 stage failure.
"""

import argparse
import asyncio
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv

logger = logging.getLogger("distill_lab")

STAGE_COMMANDS = [
    "generate",
    "train-teacher",
    "cache-labels",
    "train-student",
    "eval",
    "passk",
    "complexity",
    "figures",
]

THREAD_VARIABLES = [
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
    "NUMEXPR_NUM_THREADS",
]

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_STAGE = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="distill-lab",
        description="Desk-scale distillation experiments on a Markov-chain sandbox",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="Experiment configuration (YAML or JSON)")
    common.add_argument("--seed", type=int, help="Run a single replicate seed instead of experiment.seeds")
    common.add_argument("--out", type=str, help="Output directory (overrides experiment.out_dir)")
    common.add_argument("--single-thread", action="store_true", help="Pin BLAS/OpenMP to one thread for bit-stable output")

    subparsers = parser.add_subparsers(dest="command", required=True)
    for name in STAGE_COMMANDS:
        sub = subparsers.add_parser(name, parents=[common], help=f"Run the {name} stage")
        if name in ("train-student", "eval"):
            sub.add_argument("--arm", action="append", dest="arms", help="Limit to a student arm (repeatable)")

    run = subparsers.add_parser("run", parents=[common], help="Run the pipeline in dependency order")
    run.add_argument("--stage", action="append", dest="stages", choices=STAGE_COMMANDS, help="Run only this stage (repeatable)")
    return parser


def config_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    experiment: Dict[str, Any] = {}
    if args.seed is not None:
        experiment["seeds"] = [args.seed]
    if args.out is not None:
        experiment["out_dir"] = args.out
    return {"experiment": experiment} if experiment else {}


def pin_threads() -> None:
    """Must run before numpy is first imported"""
    for name in THREAD_VARIABLES:
        os.environ[name] = "1"


def configure_logging(config) -> None:
    section = config.logging
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if section.file:
        path = config.out_dir / section.file
        path.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(path))
    logging.basicConfig(level=getattr(logging, section.level), format=section.format, handlers=handlers, force=True)


def requested_stages(args: argparse.Namespace) -> Optional[List[str]]:
    if args.command == "run":
        return args.stages
    return [args.command]


def stage_params(args: argparse.Namespace) -> Dict[str, Dict[str, Any]]:
    arms = getattr(args, "arms", None)
    if args.command in ("train-student", "eval") and arms:
        return {args.command: {"arms": arms}}
    return {}


async def run_command(args: argparse.Namespace) -> int:
    from distill_lab.core.config_manager import load_experiment_config
    from distill_lab.core.errors import ConfigValidationError, DistillLabError, StageFailure
    from distill_lab.core.harness import ExperimentHarness

    try:
        config = await load_experiment_config(args.config, config_overrides(args))
    except ConfigValidationError as e:
        logging.basicConfig(level=logging.ERROR)
        logger.error(f"Invalid configuration:\n{e}")
        return EXIT_CONFIG

    configure_logging(config)
    harness = ExperimentHarness(config)
    try:
        record = await harness.run(requested_stages(args), stage_params(args))
    except ConfigValidationError as e:
        logger.error(f"Invalid configuration:\n{e}")
        return EXIT_CONFIG
    except StageFailure as e:
        logger.error(f"{e}")
        return EXIT_STAGE
    except DistillLabError as e:
        logger.error(f"Run failed: {e}")
        return EXIT_STAGE
    finally:
        await harness.shutdown()

    for name, entry in record.stages.items():
        logger.info(f"{name}: {entry['status']}")
    logger.info(f"Run record written to {config.out_dir}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point"""
    args = build_parser().parse_args(argv)
    load_dotenv()
    if args.single_thread:
        pin_threads()
    return asyncio.run(run_command(args))


def cli() -> None:
    sys.exit(main())


if __name__ == "__main__":
    cli()
