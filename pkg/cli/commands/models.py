"""
Model phases: training, evaluation, pipeline comparison and feature importance
"""

import argparse
from pathlib import Path

import pandas as pd
from loguru import logger

from analysis.evaluation import assemble_report, fit_f1_threshold, format_report, label_runs, write_report
from analysis.importance import (
    category_summary,
    mdi_importance,
    permutation_importance_by_segment,
    top_k,
    write_importance,
)
from analysis.segmentation import maps_from_dataset
from cli.middleware.run_guard import run_guard
from cli.utils.formatters import format_comparison, format_table, format_top_features, format_written
from cli.utils.paths import optional_noc, required_input
from config.experiment import ExperimentConfig
from core.errors import RejectedInput
from core.io import holdout_split, interval_rows, parse_noc, read_dataset, temporal_split
from detectors.artifact import ModelArtifact, ModelKind, load_artifact, quantile_threshold, save_artifact
from detectors.hybrid import run_comparison, score_dataset, train_on_dataset, write_comparison


def model_label(model: ModelArtifact) -> str:
    """Pipeline name, or the bare model kind"""
    if model.kind == ModelKind.PIPELINE:
        return model.params["spec"]["name"]
    return model.kind.value


def forest_of(model: ModelArtifact) -> ModelArtifact:
    """The random forest inside a model: itself, the first ensemble member or a pipeline's final stage"""
    if model.kind == ModelKind.RF:
        return model
    if model.kind == ModelKind.ENSEMBLE:
        return forest_of(model.payload["members"][0])
    if model.kind == ModelKind.PIPELINE:
        return forest_of(model.payload["final"])
    raise RejectedInput(f"MDI importance needs a random forest; {model.kind.value} models have none")


def _quantile_or_none(model: ModelArtifact, rate: float):
    try:
        return quantile_threshold(model, rate)
    except RejectedInput as e:
        logger.warning(f"⚠️ No quantile threshold: {e.message}")
        return None


@run_guard("train")
def train_command(config: ExperimentConfig, args: argparse.Namespace) -> None:
    """Fit the configured pipeline on the training rows before the validation tail into `<out>/model.json`"""
    dataset = read_dataset(required_input(config, "dataset"))
    evaluation = config.evaluation
    train, _, _ = holdout_split(dataset, evaluation.train_fraction, evaluation.validation_fraction)
    spec = config.pipeline(config.train.pipeline)
    logger.info(f"🌳 Training '{spec.name}' on {train.n_rows} rows ({int(train.labels.sum())} anomalous)")
    model = train_on_dataset(train, spec, config.detectors, config.seed, config.jobs)
    path = save_artifact(model, Path(config.out) / "model.json")
    print(f"🌳 {spec.name}: {' -> '.join(spec.stages)} on {len(model.feature_names)} features")
    print(format_written({"model": path}))


@run_guard("evaluate")
def evaluate_command(config: ExperimentConfig, args: argparse.Namespace) -> None:
    """Score the test split and write `<out>/eval_report.{json,csv}`"""
    model = load_artifact(required_input(config, "model"))
    dataset = read_dataset(required_input(config, "dataset"))
    evaluation = config.evaluation
    _, validation, test = holdout_split(dataset, evaluation.train_fraction, evaluation.validation_fraction)
    scores = score_dataset(model, test)
    f1_threshold = None
    if validation is not None:
        f1_threshold = fit_f1_threshold(score_dataset(model, validation), validation.labels)

    noc = optional_noc(config)
    ranges = interval_rows(test.frame.timestamps, parse_noc(noc)) if noc else label_runs(test.labels)
    report = assemble_report(
        scores,
        test.labels,
        ranges,
        threshold_rule=evaluation.threshold_rule,
        quantile_threshold=_quantile_or_none(model, evaluation.expected_rate),
        f1_threshold=f1_threshold,
        step_seconds=test.frame.step_seconds,
        model_kind=model_label(model),
    )
    written = write_report(report, config.out, config.report_formats)
    print(format_report(report))
    print(format_written({p.name: p for p in written}))


@run_guard("compare")
def compare_command(config: ExperimentConfig, args: argparse.Namespace) -> None:
    """Train and evaluate every configured pipeline on one split"""
    dataset = read_dataset(required_input(config, "dataset"))
    specs = [config.pipeline(name) for name in config.compare.pipelines]
    table = run_comparison(dataset, specs, config.detectors, config.evaluation, config.seed, config.jobs)
    written = write_comparison(table, config.out, config.report_formats)
    print(format_comparison(table))
    print(format_written({p.name: p for p in written}))


@run_guard("importance")
def importance_command(config: ExperimentConfig, args: argparse.Namespace) -> None:
    """Global MDI and within-segment permutation importance into `<out>/importance`"""
    model = load_artifact(required_input(config, "model"))
    dataset = read_dataset(required_input(config, "dataset"))
    _, test = temporal_split(dataset, config.evaluation.train_fraction)
    params = config.importance

    mdi = mdi_importance(forest_of(model))

    maps = maps_from_dataset(test)
    channel = params.segment_channel or next(iter(maps))
    if channel not in maps:
        raise RejectedInput(f"no segment map for '{channel}'", choices=sorted(maps))
    names = model.feature_names
    threshold = _quantile_or_none(model, config.evaluation.expected_rate)
    permutation = permutation_importance_by_segment(
        model,
        test.matrix(names),
        test.labels,
        maps[channel].segment_ids,
        names,
        repetitions=params.repetitions,
        seed=config.seed,
        accuracy_fallback=params.accuracy_fallback,
        threshold=0.5 if threshold is None else threshold,
        jobs=config.jobs,
    )
    logger.info(f"🧭 Permutation importance by segments of '{channel}'")

    summary = category_summary(pd.concat([mdi, permutation], ignore_index=True), origins=test.origins)
    ranking = top_k(mdi, params.top_k)
    written = write_importance(
        {"mdi": mdi, "permutation": permutation, "categories": summary, "top_features": ranking},
        Path(config.out) / "importance",
    )
    print(format_top_features(ranking))
    print(format_table(summary, "🗂 CATEGORIES"))
    print(format_written({p.name: p for p in written}))


__all__ = [
    "model_label",
    "forest_of",
    "train_command",
    "evaluate_command",
    "compare_command",
    "importance_command",
]
