"""
Ingestion, alignment and serialization of frames, NoC files and datasets
"""

import io
import json
from dataclasses import replace
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np
import pandas as pd
import pytz
from dateutil.parser import isoparse
from loguru import logger

from core.errors import MissingInput, RejectedInput, SchemaMismatch
from core.models import (
    FeatureOrigin,
    LabeledDataset,
    LabelInterval,
    LabelState,
    LabelTimeline,
    MissingPolicy,
    TimeSeriesFrame,
)

Source = Union[TextIO, str, Path]

SCHEMA_VERSION = 1
MISSING_TOKENS = {"", "NaN", "nan", "NAN"}
STEP_TOLERANCE = 0.01
SINGLE_ROW_STEP_SECONDS = 60.0  # nominal step of a one-row frame without a given step


# ============================================
# HELPERS
# ============================================

def require_file(path: Union[str, Path]) -> Path:
    """Resolve an input path or raise MissingInput"""
    path = Path(path)
    if not path.exists():
        raise MissingInput(f"File not found: {path}", path=str(path))
    return path


def _read_table(source: Source) -> Optional[pd.DataFrame]:
    """Read a headed CSV as strings; None for an empty file"""
    if isinstance(source, (str, Path)):
        source = require_file(source)
    try:
        return pd.read_csv(source, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        return None


def to_datetime64(value: datetime) -> np.datetime64:
    """Timezone-aware (or naive = UTC) datetime to numpy UTC nanoseconds"""
    if value.tzinfo is None:
        value = pytz.UTC.localize(value)
    value = value.astimezone(pytz.UTC).replace(tzinfo=None)
    return np.datetime64(value, "ns")


def parse_instant(text: str, row: Optional[int] = None, column: str = "timestamp") -> datetime:
    """Parse one ISO-8601 instant, normalized to UTC"""
    try:
        value = isoparse(text.strip())
    except (ValueError, OverflowError):
        raise RejectedInput(f"invalid ISO-8601 instant '{text}'", row=row, column=column) from None
    if value.tzinfo is None:
        return pytz.UTC.localize(value)
    return value.astimezone(pytz.UTC)


def format_instants(timestamps: np.ndarray) -> np.ndarray:
    """ISO-8601 UTC strings, second resolution unless sub-second parts exist"""
    ns = timestamps.astype("datetime64[ns]").astype(np.int64)
    unit = "s" if not (ns % 1_000_000_000).any() else "us"
    return np.datetime_as_string(timestamps.astype("datetime64[ns]"), unit=unit, timezone="UTC")


def _numeric_column(cells: np.ndarray, column: str, row_offset: int = 0) -> np.ndarray:
    """Convert CSV cells to floats; missing tokens become NaN"""
    missing = np.isin(cells, list(MISSING_TOKENS))
    out = np.full(len(cells), np.nan)
    present = ~missing
    try:
        out[present] = cells[present].astype(np.float64)
    except ValueError:
        for row in np.flatnonzero(present):
            try:
                float(cells[row])
            except ValueError:
                raise RejectedInput(
                    f"non-numeric cell '{cells[row]}' at row {row + row_offset}, column '{column}'",
                    row=int(row) + row_offset,
                    column=column,
                ) from None
    bad = present & ~np.isfinite(out)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise RejectedInput(
            f"non-finite cell '{cells[row]}' at row {row + row_offset}, column '{column}'",
            row=row + row_offset,
            column=column,
        )
    return out


def _check_uniform_step(timestamps: np.ndarray, step_seconds: Optional[float] = None) -> float:
    """Return the nominal step, rejecting non-monotone or irregular sampling"""
    if len(timestamps) == 0:
        raise RejectedInput("frame has no rows")
    if len(timestamps) == 1:
        # no spacing to infer from
        return step_seconds or SINGLE_ROW_STEP_SECONDS
    diffs = np.diff(timestamps.astype("datetime64[ns]").astype(np.int64)).astype(np.float64)
    bad = np.flatnonzero(diffs <= 0)
    if bad.size:
        row = int(bad[0]) + 1
        raise RejectedInput(
            f"timestamps not strictly increasing at row {row}", row=row, reason="non-monotone"
        )
    nominal = step_seconds * 1e9 if step_seconds else float(np.median(diffs))
    deviation = np.abs(diffs - nominal) / nominal
    irregular = np.flatnonzero(deviation > STEP_TOLERANCE)
    if irregular.size:
        row = int(irregular[0]) + 1
        raise RejectedInput(
            f"irregular step at row {row}: {diffs[row - 1] / 1e9:.3f}s vs nominal {nominal / 1e9:.3f}s",
            row=row,
            reason="irregular-step",
        )
    return nominal / 1e9


# ============================================
# FRAMES
# ============================================

def parse_frame(
    source: Source,
    schema: Optional[Sequence[str]] = None,
    missing: Optional[Union[MissingPolicy, str]] = None,
    step_seconds: Optional[float] = None,
) -> TimeSeriesFrame:
    """
    Parse a frame CSV (`timestamp,<ch1>,<ch2>,...`).

    Args:
        source: Text stream or path
        schema: Expected channel names in header order, or None for auto
        missing: Optional missing-value policy applied after parsing
        step_seconds: Nominal step; inferred from the spacing when None
            (a one-row frame falls back to SINGLE_ROW_STEP_SECONDS)

    Returns:
        TimeSeriesFrame with channel order preserved from the header
    """
    table = _read_table(source)
    if table is None or table.shape[1] < 2:
        raise RejectedInput("frame CSV needs a header with a timestamp and at least one channel")

    header = list(table.columns)
    if header[0].strip().lower() != "timestamp":
        raise RejectedInput(f"first column must be 'timestamp', got '{header[0]}'", column=header[0])
    channels = tuple(h.strip() for h in header[1:])
    if schema is not None and tuple(schema) != channels:
        raise RejectedInput(
            f"header channels {list(channels)} do not match schema {list(schema)}",
            reason="schema",
        )

    timestamps = np.array(
        [to_datetime64(parse_instant(text, row=i)) for i, text in enumerate(table.iloc[:, 0])],
        dtype="datetime64[ns]",
    )
    cells = table.iloc[:, 1:].to_numpy(dtype=object)
    values = np.column_stack(
        [_numeric_column(cells[:, j], channels[j]) for j in range(len(channels))]
    ) if len(table) else np.empty((0, len(channels)))

    step = _check_uniform_step(timestamps, step_seconds)
    frame = TimeSeriesFrame(timestamps=timestamps, channels=channels, values=values, step_seconds=step)
    logger.debug(f"Parsed frame: {frame.n_rows} rows x {len(channels)} channels, step {step:g}s")

    if missing is not None:
        frame = handle_missing(frame, missing)
    return frame


def serialize_frame(frame: TimeSeriesFrame, extra: Optional[Dict[str, np.ndarray]] = None) -> str:
    """Write a frame back to CSV; floats use the shortest round-trip repr"""
    extra = extra or {}
    header = ["timestamp"] + list(extra) + list(frame.channels)
    columns = list(extra.values()) + [frame.values[:, j] for j in range(len(frame.channels))]
    instants = format_instants(frame.timestamps)

    lines = [",".join(header)]
    for i in range(frame.n_rows):
        cells = [instants[i]]
        for column in columns:
            value = column[i]
            cells.append("" if np.isnan(value) else repr(float(value)))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def handle_missing(frame: TimeSeriesFrame, policy: Union[MissingPolicy, str]) -> TimeSeriesFrame:
    """
    Remove NaN markers left by parsing.

    forward-fill copies the previous row, interpolate fills linearly by row
    index and drop-row removes incomplete rows (the remaining rows must still
    be uniformly spaced).
    """
    policy = MissingPolicy(policy)
    values = frame.values.copy()
    nan = np.isnan(values)
    if not nan.any():
        return frame

    if policy == MissingPolicy.DROP_ROW:
        keep = ~nan.any(axis=1)
        if not keep.any():
            raise RejectedInput("drop-row removed every row")
        kept = frame.take_rows(keep)
        _check_uniform_step(kept.timestamps, frame.step_seconds)
        logger.info(f"Dropped {int((~keep).sum())} incomplete rows")
        return kept

    rows = np.arange(frame.n_rows)
    for j, channel in enumerate(frame.channels):
        gaps = nan[:, j]
        if not gaps.any():
            continue
        if policy == MissingPolicy.FORWARD_FILL:
            if gaps[0]:
                raise RejectedInput(
                    f"leading NaN in '{channel}' has no forward-fill source", row=0, column=channel
                )
            source = np.maximum.accumulate(np.where(gaps, 0, rows))
            values[:, j] = values[source, j]
        else:
            if gaps[0] or gaps[-1]:
                edge = 0 if gaps[0] else frame.n_rows - 1
                raise RejectedInput(
                    f"NaN at the edge of '{channel}' cannot be interpolated", row=edge, column=channel
                )
            values[gaps, j] = np.interp(rows[gaps], rows[~gaps], values[~gaps, j])

    logger.debug(f"Filled {int(nan.sum())} missing cells ({policy.value})")
    return replace(frame, values=values)


# ============================================
# NOC TIMELINES
# ============================================

def parse_noc(source: Source) -> LabelTimeline:
    """Parse a NoC CSV (`start,end,state`) into a sorted, validated timeline"""
    table = _read_table(source)
    if table is None or table.empty:
        return LabelTimeline()

    header = [h.strip().lower() for h in table.columns]
    if header[:3] != ["start", "end", "state"]:
        raise RejectedInput(f"NoC header must be start,end,state, got {list(table.columns)}")

    intervals: List[LabelInterval] = []
    for i, (start, end, state) in enumerate(table.iloc[:, :3].itertuples(index=False)):
        try:
            parsed_state = LabelState(state.strip().lower())
        except ValueError:
            raise RejectedInput(f"unknown state token '{state}'", row=i, column="state") from None
        intervals.append(
            LabelInterval(
                start=parse_instant(start, row=i, column="start"),
                end=parse_instant(end, row=i, column="end"),
                state=parsed_state,
            )
        )
    intervals.sort(key=lambda iv: iv.start)
    return LabelTimeline(intervals=tuple(intervals))


def serialize_noc(timeline: LabelTimeline) -> str:
    lines = ["start,end,state"]
    for iv in timeline.intervals:
        start = iv.start.astimezone(pytz.UTC).strftime("%Y-%m-%dT%H:%M:%SZ")
        end = iv.end.astimezone(pytz.UTC).strftime("%Y-%m-%dT%H:%M:%SZ")
        lines.append(f"{start},{end},{iv.state.value}")
    return "\n".join(lines) + "\n"


def interval_rows(timestamps: np.ndarray, timeline: LabelTimeline) -> List[Tuple[int, int]]:
    """Half-open row ranges covered by each anomalous interval (empty ones dropped)"""
    ranges = []
    for iv in timeline.anomalous:
        lo = int(np.searchsorted(timestamps, to_datetime64(iv.start), side="left"))
        hi = int(np.searchsorted(timestamps, to_datetime64(iv.end), side="left"))
        if hi > lo:
            ranges.append((lo, hi))
    return ranges


def align_labels(
    data: Union[TimeSeriesFrame, LabeledDataset], timeline: LabelTimeline
) -> LabeledDataset:
    """
    Label every frame row from the NoC timeline.

    Rows inside an anomalous interval are True, all others (including rows
    outside every interval) are normal. Passing an already labeled dataset
    relabels it and keeps its columns.
    """
    frame = data.frame if isinstance(data, LabeledDataset) else data
    labels = np.zeros(frame.n_rows, dtype=bool)
    for lo, hi in interval_rows(frame.timestamps, timeline):
        labels[lo:hi] = True

    flags: Dict[str, Any] = dict(data.flags) if isinstance(data, LabeledDataset) else {}
    flags.pop("label_warning", None)
    if not timeline.is_empty() and frame.n_rows:
        first, last = frame.timestamps[0], frame.timestamps[-1]
        overlaps = any(
            to_datetime64(iv.start) <= last and to_datetime64(iv.end) > first
            for iv in timeline.intervals
        )
        if not overlaps:
            logger.warning("⚠️ NoC timeline lies entirely outside the frame range; all rows normal")
            flags["label_warning"] = "no-overlap"

    if isinstance(data, LabeledDataset):
        dataset = LabeledDataset(frame=frame, labels=labels, origins=dict(data.origins), flags=flags)
    else:
        origins = {name: FeatureOrigin.RAW for name in frame.channels}
        dataset = LabeledDataset(frame=frame, labels=labels, origins=origins, flags=flags)

    logger.info(
        f"Aligned labels: {int(labels.sum())}/{frame.n_rows} anomalous rows "
        f"(prevalence {dataset.prevalence:.4f})"
    )
    return dataset


def temporal_split(dataset: LabeledDataset, train_fraction: float) -> Tuple[LabeledDataset, LabeledDataset]:
    """Chronological holdout: the first rows train, the rest test"""
    split = int(round(dataset.n_rows * train_fraction))
    if not 0 < split < dataset.n_rows:
        raise RejectedInput(
            f"train fraction {train_fraction} leaves an empty side of the split", split=split
        )
    rows = np.arange(dataset.n_rows)
    return dataset.take_rows(rows < split), dataset.take_rows(rows >= split)


def holdout_split(
    dataset: LabeledDataset, train_fraction: float, validation_fraction: float = 0.0
) -> Tuple[LabeledDataset, Optional[LabeledDataset], LabeledDataset]:
    """
    Chronological (fit, validation, test) split. The validation rows are the
    last `validation_fraction` of the training rows; None when it is 0.
    """
    train, test = temporal_split(dataset, train_fraction)
    if validation_fraction <= 0:
        return train, None, test
    cut = train.n_rows - int(round(train.n_rows * validation_fraction))
    if not 0 < cut < train.n_rows:
        raise RejectedInput(
            f"validation fraction {validation_fraction} leaves an empty side of the training rows", split=cut
        )
    rows = np.arange(train.n_rows)
    return train.take_rows(rows < cut), train.take_rows(rows >= cut), test


# ============================================
# DATASETS AND VERSIONED JSON
# ============================================

def write_json(path: Union[str, Path], payload: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, allow_nan=False) + "\n", encoding="utf-8")
    return path


def read_versioned_json(path: Union[str, Path], fmt: str) -> Dict[str, Any]:
    """Load a JSON container and check its format tag and schema version"""
    path = require_file(path)
    payload = json.loads(path.read_text(encoding="utf-8"))
    if payload.get("format") != fmt:
        raise SchemaMismatch(f"{path} is not a '{fmt}' file", found=payload.get("format"))
    if payload.get("schema_version") != SCHEMA_VERSION:
        raise SchemaMismatch(
            f"{path} has schema version {payload.get('schema_version')}, expected {SCHEMA_VERSION}",
            found=payload.get("schema_version"),
        )
    return payload


def write_dataset(dataset: LabeledDataset, directory: Union[str, Path]) -> Path:
    """Write `dataset.csv` plus the `dataset.json` sidecar with origin tags"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    labels = {"label": dataset.labels.astype(np.float64)}
    (directory / "dataset.csv").write_text(serialize_frame(dataset.frame, extra=labels), encoding="utf-8")
    write_json(
        directory / "dataset.json",
        {
            "format": "segwatch-dataset",
            "schema_version": SCHEMA_VERSION,
            "step_seconds": dataset.frame.step_seconds,
            "origins": {name: origin.value for name, origin in dataset.origins.items()},
            "flags": dict(dataset.flags),
        },
    )
    logger.info(f"💾 Dataset written to {directory} ({dataset.n_rows} rows, {len(dataset.columns)} columns)")
    return directory


def read_dataset(directory: Union[str, Path]) -> LabeledDataset:
    directory = Path(directory)
    meta = read_versioned_json(directory / "dataset.json", "segwatch-dataset")
    frame = parse_frame(require_file(directory / "dataset.csv"), step_seconds=float(meta["step_seconds"]))
    labels = frame.column("label") > 0.5
    channels = tuple(c for c in frame.channels if c != "label")
    frame = TimeSeriesFrame(
        timestamps=frame.timestamps,
        channels=channels,
        values=np.ascontiguousarray(frame.values[:, [frame.channels.index(c) for c in channels]]),
        step_seconds=float(meta["step_seconds"]),
    )
    origins = {name: FeatureOrigin(tag) for name, tag in meta["origins"].items()}
    return LabeledDataset(frame=frame, labels=labels, origins=origins, flags=meta.get("flags", {}))


__all__ = [
    "SCHEMA_VERSION",
    "SINGLE_ROW_STEP_SECONDS",
    "require_file",
    "to_datetime64",
    "parse_instant",
    "parse_frame",
    "serialize_frame",
    "handle_missing",
    "parse_noc",
    "serialize_noc",
    "interval_rows",
    "align_labels",
    "temporal_split",
    "holdout_split",
    "write_json",
    "read_versioned_json",
    "write_dataset",
    "read_dataset",
]
