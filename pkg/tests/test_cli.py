import json

import pytest

from cli.main import build_parser, main
from config.experiment import RESOLVED_NAME

SMALL = [
    "--set", "synth.n_rows=1000",
    "--set", "synth.n_channels=3",
    "--set", "synth.regime_changes=3",
    "--set", "synth.jump_sigma=5",
    "--set", "detectors.forest.n_trees=5",
    "--set", "detectors.boosting.n_rounds=5",
]


def last_error(capsys) -> dict:
    lines = [line for line in capsys.readouterr().err.splitlines() if line.strip()]
    return json.loads(lines[-1])


# ============================================
# EXIT CODES
# ============================================

def test_no_command_is_usage_error(capsys):
    assert main([]) == 2
    assert last_error(capsys)["exit_code"] == 2


def test_unknown_flag_is_usage_error(capsys):
    assert main(["cpd", "--no-such-flag"]) == 2


def test_unknown_log_level(tmp_path, capsys):
    assert main(["synth", "--seed", "1", "--out", str(tmp_path), "--log-level", "LOUD"]) == 2
    assert last_error(capsys)["error"] == "UsageError"


def test_missing_frame_is_missing_input(tmp_path, capsys):
    code = main(["cpd", "--seed", "1", "--out", str(tmp_path), "--log-level", "ERROR"])
    assert code == 4
    assert last_error(capsys)["exit_code"] == 4


def test_missing_seed_is_rejected(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path), "--log-level", "ERROR"]) == 5


def test_global_flags_before_or_after_command():
    before = build_parser().parse_args(["--seed", "3", "synth", "--preset", "steps"])
    after = build_parser().parse_args(["synth", "--preset", "steps", "--seed", "3"])
    assert before.seed == after.seed == 3
    assert before.preset == after.preset == "steps"


# ============================================
# END TO END
# ============================================

def run(phase: str, out, *extra: str) -> int:
    return main([phase, "--seed", "11", "--out", str(out), "--log-level", "ERROR", *SMALL, *extra])


def test_phases_chain_through_default_paths(tmp_path):
    assert run("synth", tmp_path) == 0
    assert (tmp_path / "frame.csv").exists() and (tmp_path / "noc.csv").exists()
    assert (tmp_path / RESOLVED_NAME).exists()

    assert run("cpd", tmp_path) == 0
    assert (tmp_path / "cpd").is_dir()

    assert run("featurize", tmp_path) == 0
    assert (tmp_path / "dataset").is_dir()

    assert run("train", tmp_path, "--pipeline", "baseline") == 0
    assert (tmp_path / "model.json").exists()

    assert run("evaluate", tmp_path) == 0
    report = json.loads((tmp_path / "eval_report.json").read_text())
    assert report["model_kind"] == "baseline"
    assert report["n_anomalous"] > 0 and report["threshold"] is not None
    # τ* fitted on the anomaly window inside the validation tail
    assert report["threshold_rule"] == "f1-optimal"
    assert report["thresholds"]["f1-optimal"] == report["threshold"]


def test_resolved_config_reproduces_run(tmp_path):
    assert run("synth", tmp_path / "a") == 0
    resolved = tmp_path / "a" / RESOLVED_NAME
    code = main(["synth", "--config", str(resolved), "--out", str(tmp_path / "b"), "--log-level", "ERROR"])
    assert code == 0
    assert (tmp_path / "a" / "frame.csv").read_text() == (tmp_path / "b" / "frame.csv").read_text()
