import io

import numpy as np
import pytest

from core.errors import MissingInput, RejectedInput, SchemaMismatch
from core.io import (
    SINGLE_ROW_STEP_SECONDS,
    align_labels,
    handle_missing,
    holdout_split,
    interval_rows,
    parse_frame,
    parse_noc,
    read_dataset,
    read_versioned_json,
    serialize_frame,
    serialize_noc,
    temporal_split,
    write_dataset,
    write_json,
)
from core.models import FeatureOrigin, LabelTimeline, MissingPolicy
from tests.conftest import anomaly_timeline, make_frame


FRAME_CSV = """timestamp,a,b
2024-01-01T00:00:00Z,1.0,10
2024-01-01T00:01:00Z,2.5,11
2024-01-01T00:02:00Z,3.0,12
"""


def test_parse_minimal_frame():
    frame = parse_frame(io.StringIO(FRAME_CSV))
    assert frame.n_rows == 3
    assert frame.channels == ("a", "b")
    assert frame.step_seconds == pytest.approx(60.0)
    assert frame.column("a").tolist() == [1.0, 2.5, 3.0]


def test_parse_single_row_frame():
    text = "timestamp,a\n2024-01-01T00:00:00Z,4.5\n"
    frame = parse_frame(io.StringIO(text))
    assert frame.n_rows == 1
    assert frame.column("a").tolist() == [4.5]
    assert frame.step_seconds == SINGLE_ROW_STEP_SECONDS
    assert parse_frame(io.StringIO(text), step_seconds=1800.0).step_seconds == 1800.0


def test_parse_rejects_header_only_frame():
    with pytest.raises(RejectedInput):
        parse_frame(io.StringIO("timestamp,a\n"))


def test_parse_rejects_non_monotone_timestamps():
    text = """timestamp,a
2024-01-01T00:02:00Z,1
2024-01-01T00:00:00Z,2
2024-01-01T00:01:00Z,3
"""
    with pytest.raises(RejectedInput) as exc:
        parse_frame(io.StringIO(text))
    assert exc.value.details["reason"] == "non-monotone"


def test_parse_reports_bad_cell_location():
    text = "timestamp,a\n2024-01-01T00:00:00Z,1\n2024-01-01T00:01:00Z,abc\n"
    with pytest.raises(RejectedInput) as exc:
        parse_frame(io.StringIO(text))
    assert exc.value.details["row"] == 1
    assert exc.value.details["column"] == "a"


def test_parse_checks_schema():
    with pytest.raises(RejectedInput):
        parse_frame(io.StringIO(FRAME_CSV), schema=["b", "a"])


def test_missing_file_raises_missing_input(tmp_path):
    with pytest.raises(MissingInput) as exc:
        parse_frame(tmp_path / "absent.csv")
    assert exc.value.exit_code == 4


def test_forward_fill_copies_previous_row():
    text = "timestamp,a\n2024-01-01T00:00:00Z,1\n2024-01-01T00:01:00Z,\n2024-01-01T00:02:00Z,3\n"
    frame = parse_frame(io.StringIO(text), missing=MissingPolicy.FORWARD_FILL)
    assert frame.column("a").tolist() == [1.0, 1.0, 3.0]


def test_interpolate_fills_linearly():
    frame = make_frame([1.0, np.nan, np.nan, 4.0])
    assert handle_missing(frame, "interpolate").column("ch0").tolist() == [1.0, 2.0, 3.0, 4.0]
    frame = make_frame([1.0, np.nan, 3.0])
    assert handle_missing(frame, "interpolate").column("ch0").tolist() == [1.0, 2.0, 3.0]


def test_forward_fill_rejects_leading_gap():
    with pytest.raises(RejectedInput):
        handle_missing(make_frame([np.nan, 2.0]), MissingPolicy.FORWARD_FILL)


def test_drop_row_rejects_broken_step():
    with pytest.raises(RejectedInput):
        handle_missing(make_frame([1.0, np.nan, 3.0, 4.0]), MissingPolicy.DROP_ROW)


def test_frame_round_trip_is_exact():
    values = np.array([[0.1, 1e-300], [1 / 3, -2.5e10], [np.pi, 0.0]])
    frame = make_frame(values)
    again = parse_frame(io.StringIO(serialize_frame(frame)))
    assert np.array_equal(again.values, frame.values)
    assert np.array_equal(again.timestamps, frame.timestamps)


def test_noc_overlap_rejected():
    text = """start,end,state
2024-01-01T00:00:00Z,2024-01-01T01:00:00Z,normal
2024-01-01T00:30:00Z,2024-01-01T02:00:00Z,anomalous
"""
    with pytest.raises(RejectedInput) as exc:
        parse_noc(io.StringIO(text))
    assert exc.value.details["reason"] == "overlap"


def test_empty_noc_is_all_normal():
    timeline = parse_noc(io.StringIO(""))
    assert timeline.is_empty()
    dataset = align_labels(make_frame(np.zeros(10)), timeline)
    assert dataset.prevalence == 0.0


def test_noc_round_trip():
    timeline = anomaly_timeline(10, 20)
    assert parse_noc(io.StringIO(serialize_noc(timeline))) == timeline


def test_align_labels_counts_interval_rows():
    dataset = align_labels(make_frame(np.zeros(100)), anomaly_timeline(50, 60))
    assert int(dataset.labels.sum()) == 10
    assert dataset.prevalence == pytest.approx(0.10)
    assert np.flatnonzero(dataset.labels).tolist() == list(range(50, 60))


def test_align_labels_clips_interval_to_frame():
    dataset = align_labels(make_frame(np.zeros(20)), anomaly_timeline(15, 40))
    assert np.flatnonzero(dataset.labels).tolist() == list(range(15, 20))


def test_align_labels_flags_disjoint_timeline():
    dataset = align_labels(make_frame(np.zeros(20)), anomaly_timeline(100, 110))
    assert dataset.flags["label_warning"] == "no-overlap"
    assert not dataset.labels.any()


def test_align_labels_is_idempotent():
    timeline = anomaly_timeline(5, 9)
    once = align_labels(make_frame(np.arange(20.0)), timeline)
    twice = align_labels(once, timeline)
    assert np.array_equal(once.labels, twice.labels)
    assert once.origins == twice.origins


def test_interval_rows_are_half_open():
    frame = make_frame(np.zeros(30))
    assert interval_rows(frame.timestamps, anomaly_timeline(10, 16)) == [(10, 16)]
    assert interval_rows(frame.timestamps, LabelTimeline()) == []


def test_temporal_split_is_chronological():
    dataset = align_labels(make_frame(np.arange(10.0)), LabelTimeline())
    train, test = temporal_split(dataset, 0.7)
    assert train.n_rows == 7 and test.n_rows == 3
    assert test.matrix()[0, 0] == 7.0
    with pytest.raises(RejectedInput):
        temporal_split(dataset, 0.01)


def test_holdout_split_takes_validation_from_training_tail():
    dataset = align_labels(make_frame(np.arange(20.0)), LabelTimeline())
    fit, validation, test = holdout_split(dataset, 0.5, 0.2)
    assert (fit.n_rows, validation.n_rows, test.n_rows) == (8, 2, 10)
    assert validation.matrix()[:, 0].tolist() == [8.0, 9.0]
    assert test.matrix()[0, 0] == 10.0
    fit, validation, _ = holdout_split(dataset, 0.5)
    assert validation is None and fit.n_rows == 10
    with pytest.raises(RejectedInput):
        holdout_split(dataset, 0.1, 0.9)


def test_dataset_round_trip(tmp_path):
    dataset = align_labels(make_frame(np.arange(12.0).reshape(6, 2)), anomaly_timeline(2, 4))
    dataset = dataset.with_columns({"ch0_segment": np.array([0, 0, 0, 1, 1, 1.0])}, FeatureOrigin.SEGMENT)
    write_dataset(dataset, tmp_path / "ds")
    again = read_dataset(tmp_path / "ds")
    assert again.columns == dataset.columns
    assert again.origins == dataset.origins
    assert np.array_equal(again.labels, dataset.labels)
    assert np.array_equal(again.matrix(), dataset.matrix())


def test_versioned_json_rejects_other_schema(tmp_path):
    path = write_json(tmp_path / "x.json", {"format": "segwatch-dataset", "schema_version": 99})
    with pytest.raises(SchemaMismatch) as exc:
        read_versioned_json(path, "segwatch-dataset")
    assert exc.value.exit_code == 3
