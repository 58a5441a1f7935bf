"""
CLI command exports
"""

from cli.commands.data import *
from cli.commands.models import *

__all__ = [
    # From data.py
    "synth_command",
    "cpd_command",
    "featurize_command",
    "cluster_command",

    # From models.py
    "train_command",
    "evaluate_command",
    "compare_command",
    "importance_command",
    "forest_of",
    "model_label",
]
