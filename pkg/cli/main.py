"""
segwatch command-line entry point
Usage: python -m cli.main <command> [options]
"""

import argparse
import sys
from typing import Callable, Dict, List, NoReturn, Optional

from loguru import logger

from cli.commands import (
    cluster_command,
    compare_command,
    cpd_command,
    evaluate_command,
    featurize_command,
    importance_command,
    synth_command,
    train_command,
)
from cli.middleware.run_guard import emit_error
from cli.utils.logger import setup_logger
from config.config import settings
from core.errors import UsageError


class CommandParser(argparse.ArgumentParser):
    """Reports usage problems as UsageError instead of exiting"""

    def error(self, message: str) -> NoReturn:
        raise UsageError(message, usage=self.format_usage().strip())


LOG_LEVELS = {"TRACE", "DEBUG", "INFO", "SUCCESS", "WARNING", "ERROR", "CRITICAL"}

# command name -> (handler, help, input flags)
COMMANDS: Dict[str, tuple] = {
    "synth": (synth_command, "generate a synthetic scenario", ["preset"]),
    "cpd": (cpd_command, "change point detection per channel", ["frame", "schema_file"]),
    "featurize": (featurize_command, "labels, change point features and segments", ["frame", "noc", "cpd", "schema_file"]),
    "cluster": (cluster_command, "sub-cluster every segment", ["dataset"]),
    "train": (train_command, "train a detector pipeline", ["dataset", "pipeline"]),
    "evaluate": (evaluate_command, "evaluate a model on the test split", ["model", "dataset", "noc"]),
    "compare": (compare_command, "compare pipelines on one split", ["dataset", "pipelines"]),
    "importance": (importance_command, "global and per-segment feature importance", ["model", "dataset"]),
}

FLAG_HELP = {
    "frame": "frame CSV (timestamp,<channels>)",
    "noc": "NoC interval CSV (start,end,state)",
    "cpd": "directory written by cpd",
    "schema_file": "expected channel names, one per line",
    "dataset": "directory written by featurize or cluster",
    "model": "model artifact JSON",
    "preset": "scenario preset (default, hard, steps)",
    "pipeline": "pipeline name",
    "pipelines": "comma-separated pipeline names",
}


def _global_flags() -> argparse.ArgumentParser:
    # SUPPRESS keeps subcommand copies from overwriting values given before the command
    common = CommandParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="experiment INI file")
    common.add_argument("--seed", type=int, help="random seed (required here or in the config)")
    common.add_argument("--jobs", type=int, help="worker cap")
    common.add_argument("--out", help="output directory")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config key")
    common.add_argument("--log-level", dest="log_level", help="DEBUG, INFO, WARNING, ERROR")
    return common


def build_parser() -> CommandParser:
    common = _global_flags()
    parser = CommandParser(prog="segwatch", description="Segmentation-driven anomaly detection", parents=[common])
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=CommandParser)
    subparsers.required = True
    for name, (handler, help_text, flags) in COMMANDS.items():
        sub = subparsers.add_parser(name, help=help_text, parents=[common])
        for flag in flags:
            sub.add_argument(f"--{flag.replace('_', '-')}", dest=flag, help=FLAG_HELP[flag])
        sub.set_defaults(handler=handler)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run one command and return its exit code"""
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        emit_error(e)
        return e.exit_code

    level = (getattr(args, "log_level", None) or settings.log_level).upper()
    if level not in LOG_LEVELS:
        emit_error(UsageError(f"unknown log level '{level}'", choices=sorted(LOG_LEVELS)))
        return UsageError.exit_code
    setup_logger(level, settings.log_file)
    handler: Callable[[argparse.Namespace], int] = args.handler
    return handler(args)


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        logger.info("Interrupted by user")
        sys.exit(130)
