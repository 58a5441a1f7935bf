"""
Input resolution
Unset input paths fall back to the previous phase's output under `out`
"""

from pathlib import Path
from typing import List, Optional

from config.experiment import ExperimentConfig
from core.io import require_file

DEFAULTS = {
    "frame": "frame.csv",
    "noc": "noc.csv",
    "cpd": "cpd",
    "dataset": "dataset",
    "model": "model.json",
}


def input_path(config: ExperimentConfig, key: str) -> Path:
    """Configured input, else `<out>/<default>`"""
    configured = getattr(config.input, key)
    return Path(configured) if configured else Path(config.out) / DEFAULTS[key]


def required_input(config: ExperimentConfig, key: str) -> Path:
    return require_file(input_path(config, key))


def optional_noc(config: ExperimentConfig) -> Optional[Path]:
    """An explicitly configured NoC must exist; the fallback may be absent"""
    if config.input.noc:
        return require_file(config.input.noc)
    fallback = input_path(config, "noc")
    return fallback if fallback.exists() else None


def read_schema(config: ExperimentConfig) -> Optional[List[str]]:
    """Channel names, one per line; blank lines and # comments ignored"""
    if not config.input.schema_file:
        return None
    lines = require_file(config.input.schema_file).read_text(encoding="utf-8").splitlines()
    return [line.strip() for line in lines if line.strip() and not line.strip().startswith("#")]


__all__ = ["input_path", "required_input", "optional_noc", "read_schema"]
