"""
Data phases: scenario generation, change point detection, featurization
and per-segment clustering
"""

import argparse
from pathlib import Path

from loguru import logger

from analysis.changepoint import detect_all_channels, read_cpd_outputs, write_cpd_outputs
from analysis.clustering import cluster_per_segment
from analysis.cp_features import add_cp_features, select_features
from analysis.segmentation import (
    assign_segments,
    delta_f_report,
    encode_segment_features,
    f_ratio_report,
    maps_from_dataset,
)
from cli.middleware.run_guard import run_guard
from cli.utils.formatters import format_cpd_summary, format_table, format_written
from cli.utils.paths import optional_noc, read_schema, required_input
from config.experiment import ExperimentConfig
from core.errors import RejectedInput
from core.io import align_labels, parse_frame, parse_noc, read_dataset, write_dataset
from core.models import FeatureOrigin, LabelTimeline
from core.synthgen import generate_scenario, write_scenario


@run_guard("synth")
def synth_command(config: ExperimentConfig, args: argparse.Namespace) -> None:
    """Generate a scenario into `<out>/frame.csv`, `noc.csv` and `manifest.json`"""
    scenario = generate_scenario(config.synth, config.seed, config.jobs)
    paths = write_scenario(scenario, config.out)
    print(format_written(paths))


@run_guard("cpd")
def cpd_command(config: ExperimentConfig, args: argparse.Namespace) -> None:
    """Change scores and change points for every channel into `<out>/cpd`"""
    frame = parse_frame(required_input(config, "frame"), read_schema(config), config.missing_policy)
    results = detect_all_channels(frame, config.changepoint, jobs=config.jobs)
    directory = write_cpd_outputs(results, Path(config.out) / "cpd", config.changepoint)
    print(format_cpd_summary(results))
    print(format_written({"cpd": directory}))


@run_guard("featurize")
def featurize_command(config: ExperimentConfig, args: argparse.Namespace) -> None:
    """
    Labels from the NoC file, change point features and segment ids into
    `<out>/dataset`, with the F-ratio ranking of the change point features
    """
    frame = parse_frame(required_input(config, "frame"), read_schema(config), config.missing_policy)
    noc = optional_noc(config)
    if noc is None:
        logger.warning("⚠️ No NoC file; every row is labeled normal")
        timeline = LabelTimeline()
    else:
        timeline = parse_noc(noc)
    detections = read_cpd_outputs(required_input(config, "cpd"))

    unknown = [c for c in detections if c not in frame.channels]
    if unknown:
        raise RejectedInput(f"change points for channels missing from the frame: {unknown}", channels=unknown)

    dataset = align_labels(frame, timeline)
    dataset = add_cp_features(dataset, detections, config.cp_features.window_rows, config.cp_features.lookback)

    channels = config.segmentation.channels or [name for name, r in detections.items() if len(r.cps)]
    missing = [c for c in channels if c not in detections]
    if missing:
        raise RejectedInput(f"no change points computed for {missing}; run cpd on them first", channels=missing)
    maps = {name: assign_segments(detections[name].cps.indices, dataset.n_rows) for name in channels}
    dataset = encode_segment_features(dataset, maps)
    logger.info(f"🧭 Segmented {len(maps)} channels ({sum(m.n_segments for m in maps.values())} segments)")

    if config.cp_features.keep:
        dataset = select_features(dataset, config.cp_features.keep, scope=[FeatureOrigin.CP_FEATURE])

    directory = write_dataset(dataset, Path(config.out) / "dataset")
    written = {"dataset": directory}
    if config.segmentation.f_ratio_report and maps:
        ranking = f_ratio_report(dataset, maps)
        ranking.to_csv(directory / "f_ratio.csv", index=False)
        written["f_ratio"] = directory / "f_ratio.csv"
        print(format_table(ranking.head(10), "📈 F-RATIO (top 10)"))
    print(format_written(written))


@run_guard("cluster")
def cluster_command(config: ExperimentConfig, args: argparse.Namespace) -> None:
    """Per-segment sub-clusters, validation metrics and ΔF into `<out>/clustered`"""
    dataset = read_dataset(required_input(config, "dataset"))
    maps = maps_from_dataset(dataset)
    if config.segmentation.channels:
        maps = {name: maps[name] for name in config.segmentation.channels if name in maps}
    outcome = cluster_per_segment(dataset, maps, config.clustering, config.seed, config.jobs)

    directory = write_dataset(outcome.dataset, Path(config.out) / "clustered")
    outcome.metrics.to_csv(directory / "cluster_metrics.csv", index=False)
    outcome.clustering.per_segment_table().to_csv(directory / "cluster_segments.csv", index=False)
    written = {
        "dataset": directory,
        "metrics": directory / "cluster_metrics.csv",
        "segments": directory / "cluster_segments.csv",
    }
    if config.clustering.delta_f:
        delta_f_report(outcome.delta_f, outcome.delta_f_segments).to_csv(directory / "delta_f.csv", index=False)
        written["delta_f"] = directory / "delta_f.csv"
    print(format_table(outcome.metrics, "🧩 CLUSTER VALIDATION (segment average)"))
    print(format_written(written))


__all__ = ["synth_command", "cpd_command", "featurize_command", "cluster_command"]
