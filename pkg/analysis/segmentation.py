"""
Segment maps, F-ratio separability and the ΔF index
"""

from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel, Field

from core.errors import RejectedInput, UndefinedMetric
from core.models import FeatureOrigin, LabeledDataset

EPS = 1e-12


class SegmentationParams(BaseModel):
    channels: List[str] = Field(default_factory=list)  # empty: every channel with change points
    f_ratio_report: bool = True


@dataclass(frozen=True)
class SegmentMap:
    segment_ids: np.ndarray  # int64, non-decreasing
    boundaries: np.ndarray  # the change points that produced it

    @property
    def n_segments(self) -> int:
        return int(self.segment_ids[-1]) + 1 if self.segment_ids.size else 0

    def rows_of(self, segment: int) -> np.ndarray:
        return np.flatnonzero(self.segment_ids == segment)


@dataclass(frozen=True)
class SegmentStats:
    f_ratio: float
    between_df: int
    within_df: int
    capped: bool


@dataclass(frozen=True)
class DeltaF:
    value: float  # 0 when undefined
    defined: bool
    f_a: Optional[float]
    f_b: Optional[float]


def assign_segments(cps: Sequence[int], n_rows: int) -> SegmentMap:
    """Segment id 0 before the first change point, +1 at every change point row"""
    cps = np.asarray(cps, dtype=np.int64)
    if cps.size and (cps.min() < 0 or cps.max() >= n_rows):
        raise RejectedInput(f"change points outside [0, {n_rows})")
    ids = np.searchsorted(cps, np.arange(n_rows), side="right").astype(np.int64)
    return SegmentMap(segment_ids=ids, boundaries=cps)


def f_ratio(values: np.ndarray, groups: np.ndarray) -> SegmentStats:
    """
    One-way ANOVA F statistic.

    F = (SSB / (k-1)) / (SSW / (N-k)); the within mean square is floored at
    1e-12 and `capped` records when the floor was applied.
    """
    values = np.asarray(values, dtype=np.float64)
    groups = np.asarray(groups)
    if values.shape != groups.shape:
        raise RejectedInput("values and group ids differ in length")
    labels, codes = np.unique(groups, return_inverse=True)
    k, n = labels.size, values.size
    if k < 2:
        raise RejectedInput(f"F-ratio needs at least 2 groups, got {k}", reason="df")

    counts = np.bincount(codes, minlength=k).astype(np.float64)
    sums = np.bincount(codes, weights=values, minlength=k)
    means = sums / counts
    grand = values.mean()
    ssb = float(np.sum(counts * (means - grand) ** 2))
    ssw = float(np.sum((values - means[codes]) ** 2))

    msb = ssb / (k - 1)
    msw = ssw / (n - k) if n > k else 0.0
    capped = msw < EPS
    return SegmentStats(f_ratio=msb / max(msw, EPS), between_df=k - 1, within_df=n - k, capped=capped)


def delta_f(values: np.ndarray, labels_a: np.ndarray, labels_b: np.ndarray) -> DeltaF:
    """F under labeling a minus F under labeling b, noise (-1) excluded per side"""
    values = np.asarray(values, dtype=np.float64)
    sides = []
    for labels in (labels_a, labels_b):
        labels = np.asarray(labels)
        keep = labels != -1
        if np.unique(labels[keep]).size < 2:
            sides.append(None)
        else:
            sides.append(f_ratio(values[keep], labels[keep]).f_ratio)
    f_a, f_b = sides
    if f_a is None or f_b is None:
        return DeltaF(value=0.0, defined=False, f_a=f_a, f_b=f_b)
    return DeltaF(value=f_a - f_b, defined=True, f_a=f_a, f_b=f_b)


def delta_f_value(values: np.ndarray, labels_a: np.ndarray, labels_b: np.ndarray) -> float:
    """Strict form of delta_f: raises UndefinedMetric instead of returning 0"""
    result = delta_f(values, labels_a, labels_b)
    if not result.defined:
        raise UndefinedMetric("ΔF needs at least 2 non-noise clusters on both sides")
    return result.value


def encode_segment_features(
    dataset: LabeledDataset,
    maps: Mapping[str, SegmentMap],
    deltas: Optional[Mapping[str, DeltaF]] = None,
) -> LabeledDataset:
    """
    Append `<channel>_segment` columns and, when ΔF values are given,
    `<channel>_delta_f` columns (the channel's ΔF broadcast to every row).
    Undefined ΔF values are written as 0 and listed in the
    `delta_f_undefined` flag.
    """
    segments: Dict[str, np.ndarray] = {}
    for channel, smap in maps.items():
        if smap.segment_ids.size != dataset.n_rows:
            raise RejectedInput(
                f"segment map for '{channel}' has {smap.segment_ids.size} rows, dataset has {dataset.n_rows}",
                column=channel,
            )
        segments[f"{channel}_segment"] = smap.segment_ids.astype(np.float64)
    enriched = dataset.with_columns(segments, FeatureOrigin.SEGMENT)

    if deltas:
        columns = {}
        undefined = []
        for channel, result in deltas.items():
            if channel not in maps:
                raise RejectedInput(f"ΔF given for '{channel}' without a segment map", column=channel)
            columns[f"{channel}_delta_f"] = np.full(dataset.n_rows, result.value)
            if not result.defined:
                undefined.append(channel)
        if undefined:
            logger.warning(f"⚠️ ΔF undefined for {len(undefined)} channels; encoded as 0")
        flags = {"delta_f_undefined": sorted(set(enriched.flags.get("delta_f_undefined", [])) | set(undefined))}
        enriched = enriched.with_columns(columns, FeatureOrigin.DELTA_F, flags=flags)
    return enriched


def maps_from_dataset(dataset: LabeledDataset) -> Dict[str, SegmentMap]:
    """Rebuild segment maps from the `<channel>_segment` columns"""
    maps = {}
    for name in dataset.columns_of(FeatureOrigin.SEGMENT):
        ids = dataset.matrix([name])[:, 0].astype(np.int64)
        boundaries = np.flatnonzero(np.diff(ids) != 0) + 1
        maps[name[: -len("_segment")]] = SegmentMap(segment_ids=ids, boundaries=boundaries)
    if not maps:
        raise RejectedInput("dataset has no segment columns; run featurize first")
    return maps


def f_ratio_report(dataset: LabeledDataset, maps: Mapping[str, SegmentMap]) -> pd.DataFrame:
    """
    F-ratio of every change point feature against its channel's segments,
    sorted best first (`feature,f_ratio,capped`).
    """
    rows = []
    for channel, smap in maps.items():
        if smap.n_segments < 2:
            continue
        for name in dataset.columns_of(FeatureOrigin.CP_FEATURE):
            if not name.startswith(f"{channel}_"):
                continue
            stats = f_ratio(dataset.matrix([name])[:, 0], smap.segment_ids)
            rows.append({"feature": name, "f_ratio": stats.f_ratio, "capped": stats.capped})
    table = pd.DataFrame(rows, columns=["feature", "f_ratio", "capped"])
    return table.sort_values(["f_ratio", "feature"], ascending=[False, True], ignore_index=True)


def delta_f_report(
    per_channel: Mapping[str, DeltaF], per_segment: Mapping[str, Mapping[int, DeltaF]]
) -> pd.DataFrame:
    """ΔF per channel (`segment` empty) and per (channel, segment)"""
    rows: List[dict] = []
    for channel, result in per_channel.items():
        rows.append(_delta_row(channel, None, result))
        for segment, seg_result in sorted(per_segment.get(channel, {}).items()):
            rows.append(_delta_row(channel, segment, seg_result))
    return pd.DataFrame(rows, columns=["channel", "segment", "delta_f", "defined", "f_optics", "f_hdbscan"])


def _delta_row(channel: str, segment: Optional[int], result: DeltaF) -> dict:
    return {
        "channel": channel,
        "segment": segment,
        "delta_f": result.value,
        "defined": result.defined,
        "f_optics": result.f_a,
        "f_hdbscan": result.f_b,
    }


__all__ = [
    "SegmentationParams",
    "SegmentMap",
    "SegmentStats",
    "DeltaF",
    "assign_segments",
    "f_ratio",
    "delta_f",
    "delta_f_value",
    "encode_segment_features",
    "maps_from_dataset",
    "f_ratio_report",
    "delta_f_report",
]
