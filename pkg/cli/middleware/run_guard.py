"""
Command middleware
Resolves the experiment config, records it next to the outputs and maps
failures to exit codes with a JSON error on stderr
"""

import argparse
import json
import sys
from functools import wraps
from pathlib import Path
from typing import Callable, Dict, List

from loguru import logger

from config.experiment import ExperimentConfig, load_experiment, write_resolved_config
from core.errors import PipelineError

Command = Callable[[ExperimentConfig, argparse.Namespace], None]

# command-line flag -> config key
FLAG_KEYS: Dict[str, str] = {
    "frame": "input.frame",
    "noc": "input.noc",
    "schema_file": "input.schema_file",
    "cpd": "input.cpd",
    "dataset": "input.dataset",
    "model": "input.model",
    "preset": "synth.preset",
    "pipeline": "train.pipeline",
    "pipelines": "compare.pipelines",
}


def flag_sets(args: argparse.Namespace) -> List[str]:
    """Repeated --set entries followed by the dedicated input flags"""
    sets = list(getattr(args, "set", None) or [])
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            sets.append(f"{key}={value}")
    return sets


def emit_error(error: PipelineError) -> None:
    """Single JSON line on stderr"""
    print(json.dumps(error.to_dict(), default=str), file=sys.stderr, flush=True)


def run_guard(phase: str) -> Callable[[Command], Callable[[argparse.Namespace], int]]:
    """
    Decorator turning a phase function into a CLI command returning an exit code

    Usage:
        @run_guard("cpd")
        def cpd_command(config, args):
            ...
    """
    def decorator(func: Command) -> Callable[[argparse.Namespace], int]:
        @wraps(func)
        def wrapper(args: argparse.Namespace) -> int:
            try:
                config = load_experiment(
                    getattr(args, "config", None),
                    sets=flag_sets(args),
                    seed=getattr(args, "seed", None),
                    jobs=getattr(args, "jobs", None),
                    out=getattr(args, "out", None),
                )
                resolved = write_resolved_config(config, Path(config.out))
                logger.info(f"▶️ {phase}: seed={config.seed}, jobs={config.jobs}, config {resolved}")
                func(config, args)
                logger.success(f"✅ {phase} finished; outputs in {config.out}")
                return 0
            except PipelineError as e:
                logger.error(f"❌ {phase} failed: {e.message}")
                emit_error(e)
                return e.exit_code
            except Exception as e:
                logger.exception(f"❌ Unexpected error in {phase}: {e}")
                print(
                    json.dumps({"error": type(e).__name__, "message": str(e), "exit_code": 1, "details": {}}),
                    file=sys.stderr,
                    flush=True,
                )
                return 1

        return wrapper

    return decorator


__all__ = ["FLAG_KEYS", "flag_sets", "emit_error", "run_guard"]
