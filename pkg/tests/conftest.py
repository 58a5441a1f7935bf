"""
Shared fixtures
"""

import io
from datetime import datetime, timedelta

import numpy as np
import pytest
import pytz
from loguru import logger

from core.models import FeatureOrigin, LabelInterval, LabelState, LabelTimeline, LabeledDataset, TimeSeriesFrame

START = datetime(2024, 1, 1, tzinfo=pytz.UTC)


@pytest.fixture(autouse=True)
def quiet_logs():
    logger.remove()
    yield


def make_frame(values, step_seconds: float = 60.0, channels=None) -> TimeSeriesFrame:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values.reshape(-1, 1)
    channels = tuple(channels or [f"ch{i}" for i in range(values.shape[1])])
    offsets = (np.arange(values.shape[0]) * step_seconds * 1e9).astype(np.int64).astype("timedelta64[ns]")
    timestamps = np.datetime64("2024-01-01T00:00:00", "ns") + offsets
    return TimeSeriesFrame(timestamps=timestamps, channels=channels, values=values, step_seconds=step_seconds)


def instant(row: int, step_seconds: float = 60.0) -> datetime:
    return START + timedelta(seconds=row * step_seconds)


def anomaly_timeline(lo: int, hi: int, step_seconds: float = 60.0) -> LabelTimeline:
    return LabelTimeline(
        intervals=(LabelInterval(instant(lo, step_seconds), instant(hi, step_seconds), LabelState.ANOMALOUS),)
    )


def make_dataset(values, labels, channels=None, step_seconds: float = 60.0) -> LabeledDataset:
    frame = make_frame(values, step_seconds, channels)
    return LabeledDataset(
        frame=frame,
        labels=np.asarray(labels, dtype=bool),
        origins={name: FeatureOrigin.RAW for name in frame.channels},
    )


def csv_stream(text: str) -> io.StringIO:
    return io.StringIO(text)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def separable():
    """Two Gaussian blobs in 2-D, 100 normal rows then 100 anomalous rows"""
    gen = np.random.default_rng(7)
    X = np.vstack([gen.normal(0.0, 1.0, size=(100, 2)), gen.normal(8.0, 1.0, size=(100, 2))])
    y = np.r_[np.zeros(100, dtype=bool), np.ones(100, dtype=bool)]
    return X, y


@pytest.fixture
def segmented_dataset():
    """
    Two raw channels over 400 rows at one-hour steps; ch0 steps up at row 200,
    anomalies at rows 120-139 and 320-339 lift ch1
    """
    gen = np.random.default_rng(3)
    n = 400
    ch0 = np.where(np.arange(n) < 200, 0.0, 5.0) + gen.normal(0.0, 0.1, n)
    ch1 = gen.normal(0.0, 1.0, n)
    labels = np.zeros(n, dtype=bool)
    labels[120:140] = True
    labels[320:340] = True
    ch1[labels] += 6.0
    dataset = make_dataset(np.column_stack([ch0, ch1]), labels, channels=["ch0.pv", "ch1.pv"], step_seconds=3600.0)
    segments = {"ch0.pv_segment": (np.arange(n) >= 200).astype(np.float64)}
    return dataset.with_columns(segments, FeatureOrigin.SEGMENT)


__all__ = ["make_frame", "make_dataset", "instant", "anomaly_timeline", "csv_stream", "START"]
