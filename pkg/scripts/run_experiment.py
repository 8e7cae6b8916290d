#!/usr/bin/env python3
"""
Command-line front end: gen | train | eval | diag | bench

Exit codes: 0 success, 2 invalid configuration, 3 dense size cap refused,
4 training diverged.
"""

import argparse
import sys
from typing import Any, Dict, List, Optional, Type

from dotenv import load_dotenv
from pydantic import BaseModel, ValidationError
from tabulate import tabulate

from doeblin.core.constants import ExitCode
from doeblin.core.exceptions import DenseSizeError, DivergenceError, DoeblinError, InvalidInputError
from doeblin.models.schemas import ExperimentConfig
from doeblin.services import storage
from doeblin.services.experiments import COMMANDS
from doeblin.utils.logger import get_structured_logger, setup_logging

logger = get_structured_logger("doeblin.cli")

COMMAND_HELP = {
    "gen": "Sample a teacher model's π_ε into train / held-out datasets",
    "train": "Maximise mean log π_ε on a dataset with SGD",
    "eval": "Exact mean log π_ε, log π̃ and log p_θ of a model on a dataset",
    "diag": "Mixing curves, approximation gap and contraction audit tables",
    "bench": "Timing report for Gibbs steps, dense solves and gradient estimates",
}

# which DataSpec field --data fills for each command
DATA_TARGET = {"train": "train_path", "eval": "heldout_path", "diag": "train_path"}


def describe_fields(schema: Type[BaseModel], prefix: str = "") -> List[str]:
    """One line per config field, nested sections dotted"""
    lines = []
    for name, field in schema.model_fields.items():
        annotation = field.annotation
        if isinstance(annotation, type) and issubclass(annotation, BaseModel):
            lines.extend(describe_fields(annotation, f"{prefix}{name}."))
            continue
        description = field.description or ""
        lines.append(f"  {prefix}{name:<22} {description}")
    return lines


def build_parser() -> argparse.ArgumentParser:
    epilog = "experiment file fields (JSON):\n" + "\n".join(describe_fields(ExperimentConfig))
    parser = argparse.ArgumentParser(
        description="Strong Doeblin restart chains: data generation, training and diagnostics",
        epilog=epilog,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    subparsers = parser.add_subparsers(dest="command", help="Command to execute")

    for name, help_text in COMMAND_HELP.items():
        sub = subparsers.add_parser(
            name,
            help=help_text,
            description=help_text,
            epilog=epilog,
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        sub.add_argument("--config", help="Experiment JSON file (defaults apply when omitted)")
        sub.add_argument("--seed", type=int, help="Override the root seed")
        sub.add_argument("--epsilon", type=float, help="Override ε")
        sub.add_argument("--out", help="Override output_dir")
        if name in ("train", "eval", "diag"):
            sub.add_argument("--model", help="Model file (data.model_path)")
            sub.add_argument("--reference", help="Reference file (data.reference_path)")
        if name in DATA_TARGET:
            sub.add_argument("--data", help=f"Dataset file (data.{DATA_TARGET[name]})")
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Config file plus command-line overrides, validated as a whole"""
    config = storage.load_config(args.config) if args.config else ExperimentConfig()
    payload: Dict[str, Any] = config.model_dump(mode="json")
    if args.seed is not None:
        payload["seed"] = args.seed
    if args.epsilon is not None:
        payload["epsilon"] = args.epsilon
    if args.out:
        payload["output_dir"] = args.out
    if getattr(args, "model", None):
        payload["data"]["model_path"] = args.model
    if getattr(args, "reference", None):
        payload["data"]["reference_path"] = args.reference
    if getattr(args, "data", None):
        payload["data"][DATA_TARGET[args.command]] = args.data
    return ExperimentConfig.model_validate(payload)


def run(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return ExitCode.INVALID_CONFIG.value

    setup_logging()
    try:
        config = resolve_config(args)
        logger.info(
            "command_started",
            context="CLI",
            command=args.command,
            config_hash=config.config_hash()[:12],
            seed=config.seed,
        )
        summary = COMMANDS[args.command](config)
    except DenseSizeError as e:
        logger.error("size_cap_refused", context="CLI", error=str(e))
        return ExitCode.SIZE_CAP.value
    except DivergenceError as e:
        logger.error("training_aborted", context="CLI", iteration=e.iteration, error=str(e))
        return ExitCode.DIVERGENCE.value
    except ValidationError as e:
        logger.error("invalid_config", context="CLI", errors=e.error_count())
        print(f"[ERROR] {e}", file=sys.stderr)
        return ExitCode.INVALID_CONFIG.value
    except InvalidInputError as e:
        logger.error("invalid_config", context="CLI", error=str(e))
        return ExitCode.INVALID_CONFIG.value
    except DoeblinError as e:
        logger.error("command_failed", context="CLI", error=str(e))
        return 1

    print(tabulate(list(summary.items()), headers=["field", "value"], tablefmt="simple"))
    logger.debug("command_finished", context="CLI", command=args.command)
    return ExitCode.OK.value


def main():
    load_dotenv()
    sys.exit(run())


if __name__ == "__main__":
    main()
