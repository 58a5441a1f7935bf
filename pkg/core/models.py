"""
Domain types for the segmentation pipeline
Frames, NoC label timelines and the labeled dataset every phase enriches
"""

from dataclasses import dataclass, field, replace
from datetime import datetime
from enum import Enum as PyEnum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from core.errors import RejectedInput


# ============================================
# ENUMS
# ============================================

class LabelState(str, PyEnum):
    NORMAL = "normal"
    ANOMALOUS = "anomalous"


class FeatureOrigin(str, PyEnum):
    """Where a dataset column came from"""
    RAW = "raw"  # process variable as ingested
    SEGMENT = "segment"  # <channel>_segment ids
    CP_FEATURE = "cp_feature"  # change point statistics
    CLUSTER = "cluster"  # <channel>_subcluster ids
    DELTA_F = "delta_f"  # OPTICS vs HDBSCAN separability gap


class MissingPolicy(str, PyEnum):
    FORWARD_FILL = "forward-fill"
    INTERPOLATE = "interpolate"
    DROP_ROW = "drop-row"


# ============================================
# MODELS
# ============================================

@dataclass(frozen=True)
class TimeSeriesFrame:
    """Uniformly sampled multivariate series (rows = timestamps, columns = channels)"""

    timestamps: np.ndarray  # datetime64[ns], UTC
    channels: Tuple[str, ...]
    values: np.ndarray  # float64, shape (rows, channels)
    step_seconds: float

    def __post_init__(self):
        if self.values.ndim != 2:
            raise RejectedInput("values must be a 2-D matrix")
        if self.values.shape != (len(self.timestamps), len(self.channels)):
            raise RejectedInput(
                f"values shape {self.values.shape} does not match "
                f"{len(self.timestamps)} timestamps x {len(self.channels)} channels"
            )
        if not self.step_seconds > 0:
            raise RejectedInput(f"step must be positive, got {self.step_seconds}")
        if len(set(self.channels)) != len(self.channels):
            raise RejectedInput("duplicate channel names")

    @property
    def n_rows(self) -> int:
        return len(self.timestamps)

    @property
    def has_missing(self) -> bool:
        return bool(np.isnan(self.values).any())

    def column(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.channels.index(name)]
        except ValueError:
            raise RejectedInput(f"unknown channel '{name}'", column=name) from None

    def take_rows(self, rows: np.ndarray) -> "TimeSeriesFrame":
        return replace(self, timestamps=self.timestamps[rows], values=self.values[rows])


@dataclass(frozen=True)
class LabelInterval:
    """Half-open interval [start, end) with an operating state"""

    start: datetime
    end: datetime
    state: LabelState


@dataclass(frozen=True)
class LabelTimeline:
    """NoC intervals, sorted by start and non-overlapping"""

    intervals: Tuple[LabelInterval, ...] = ()

    def __post_init__(self):
        for iv in self.intervals:
            if not iv.start < iv.end:
                raise RejectedInput(f"interval start {iv.start} is not before end {iv.end}")
        for prev, nxt in zip(self.intervals, self.intervals[1:]):
            if nxt.start < prev.end:
                raise RejectedInput(
                    f"overlapping intervals: [{prev.start}, {prev.end}) and [{nxt.start}, {nxt.end})",
                    reason="overlap",
                )

    @property
    def anomalous(self) -> Tuple[LabelInterval, ...]:
        return tuple(iv for iv in self.intervals if iv.state == LabelState.ANOMALOUS)

    def is_empty(self) -> bool:
        return not self.intervals


@dataclass(frozen=True)
class LabeledDataset:
    """Frame plus per-row labels and an origin tag for every column"""

    frame: TimeSeriesFrame
    labels: np.ndarray  # bool, one per row
    origins: Mapping[str, FeatureOrigin]
    flags: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.labels) != self.frame.n_rows:
            raise RejectedInput(
                f"{len(self.labels)} labels for {self.frame.n_rows} rows"
            )
        if set(self.origins) != set(self.frame.channels):
            raise RejectedInput("origin tags must cover exactly the frame columns")

    @property
    def n_rows(self) -> int:
        return self.frame.n_rows

    @property
    def columns(self) -> Tuple[str, ...]:
        return self.frame.channels

    @property
    def feature_columns(self) -> List[Tuple[str, FeatureOrigin]]:
        return [(name, self.origins[name]) for name in self.frame.channels]

    @property
    def prevalence(self) -> float:
        return float(self.labels.mean()) if len(self.labels) else 0.0

    def columns_of(self, *origins: FeatureOrigin) -> List[str]:
        return [name for name in self.frame.channels if self.origins[name] in origins]

    @property
    def raw_channels(self) -> List[str]:
        return self.columns_of(FeatureOrigin.RAW)

    def matrix(self, columns: Optional[Sequence[str]] = None) -> np.ndarray:
        if columns is None:
            return self.frame.values
        index = {name: i for i, name in enumerate(self.frame.channels)}
        missing = [c for c in columns if c not in index]
        if missing:
            raise RejectedInput(f"unknown columns: {missing}")
        return self.frame.values[:, [index[c] for c in columns]]

    def with_columns(
        self,
        columns: Mapping[str, np.ndarray],
        origin: FeatureOrigin,
        flags: Optional[Mapping[str, object]] = None,
    ) -> "LabeledDataset":
        """Return a copy with extra (or replaced) columns of one origin"""
        names = list(self.frame.channels)
        values = self.frame.values
        new_origins: Dict[str, FeatureOrigin] = dict(self.origins)
        appended = []
        for name, column in columns.items():
            column = np.asarray(column, dtype=np.float64)
            if column.shape != (self.n_rows,):
                raise RejectedInput(
                    f"column '{name}' has {column.shape[0] if column.ndim else 0} rows, "
                    f"dataset has {self.n_rows}",
                    column=name,
                )
            if name in new_origins:
                values = values.copy() if values is self.frame.values else values
                values[:, names.index(name)] = column
            else:
                names.append(name)
                appended.append(column)
            new_origins[name] = origin
        if appended:
            values = np.column_stack([values] + appended)
        frame = replace(self.frame, channels=tuple(names), values=values)
        merged_flags = dict(self.flags)
        merged_flags.update(flags or {})
        return LabeledDataset(frame=frame, labels=self.labels, origins=new_origins, flags=merged_flags)

    def select(self, columns: Iterable[str]) -> "LabeledDataset":
        """Column-filtered copy, origin tags preserved"""
        columns = list(columns)
        frame = replace(self.frame, channels=tuple(columns), values=self.matrix(columns))
        return LabeledDataset(
            frame=frame,
            labels=self.labels,
            origins={c: self.origins[c] for c in columns},
            flags=dict(self.flags),
        )

    def take_rows(self, rows: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(
            frame=self.frame.take_rows(rows),
            labels=self.labels[rows],
            origins=dict(self.origins),
            flags=dict(self.flags),
        )


__all__ = [
    "LabelState",
    "FeatureOrigin",
    "MissingPolicy",
    "TimeSeriesFrame",
    "LabelInterval",
    "LabelTimeline",
    "LabeledDataset",
]
