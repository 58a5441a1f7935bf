import numpy as np
import pytest

from analysis.segmentation import (
    DeltaF,
    assign_segments,
    delta_f,
    delta_f_report,
    delta_f_value,
    encode_segment_features,
    f_ratio,
    f_ratio_report,
    maps_from_dataset,
)
from core.errors import RejectedInput, UndefinedMetric
from core.models import FeatureOrigin
from tests.conftest import make_dataset


def test_assign_segments():
    assert assign_segments([], 4).segment_ids.tolist() == [0, 0, 0, 0]
    assert assign_segments([5], 10).segment_ids.tolist() == [0] * 5 + [1] * 5
    smap = assign_segments([3, 7], 10)
    assert smap.segment_ids.tolist() == [0, 0, 0, 1, 1, 1, 1, 2, 2, 2]
    assert smap.n_segments == 3
    assert smap.rows_of(1).tolist() == [3, 4, 5, 6]


def test_assign_segments_out_of_range():
    with pytest.raises(RejectedInput):
        assign_segments([10], 10)


def test_f_ratio_two_groups():
    stats = f_ratio(np.array([0.0, 2.0, 10.0, 12.0]), np.array([0, 0, 1, 1]))
    assert stats.f_ratio == pytest.approx(50.0)
    assert (stats.between_df, stats.within_df) == (1, 2)
    assert not stats.capped


def test_f_ratio_equal_means():
    assert f_ratio(np.array([0.0, 2.0, 0.0, 2.0]), np.array([0, 0, 1, 1])).f_ratio == 0.0


def test_f_ratio_zero_within_variance():
    stats = f_ratio(np.array([1.0, 1.0, 1.0, 5.0, 5.0, 5.0]), np.array([0, 0, 0, 1, 1, 1]))
    assert stats.capped
    assert stats.f_ratio == pytest.approx(24.0 / 1e-12)


def test_f_ratio_single_group():
    with pytest.raises(RejectedInput) as err:
        f_ratio(np.arange(5.0), np.zeros(5))
    assert err.value.details["reason"] == "df"


def test_f_ratio_affine_invariance():
    rng = np.random.default_rng(0)
    values = rng.normal(size=60)
    groups = np.repeat([0, 1, 2], 20)
    values[groups == 2] += 1.5
    base = f_ratio(values, groups).f_ratio
    assert f_ratio(-3.0 * values + 7.0, groups).f_ratio == pytest.approx(base, rel=1e-9)


def test_delta_f_identical_labelings():
    values = np.array([0.0, 1.0, 10.0, 11.0])
    labels = np.array([0, 0, 1, 1])
    assert delta_f(values, labels, labels).value == 0.0


def test_delta_f_prefers_separating_labeling():
    values = np.array([0.0, 0.0, 10.0, 10.0])
    result = delta_f(values, np.array([0, 0, 1, 1]), np.array([0, 1, 0, 1]))
    assert result.defined
    assert result.f_b == 0.0
    assert result.value > 0


def test_delta_f_antisymmetric():
    rng = np.random.default_rng(1)
    values = rng.normal(size=40)
    a = rng.integers(0, 3, size=40)
    b = rng.integers(0, 2, size=40)
    assert delta_f(values, a, b).value == pytest.approx(-delta_f(values, b, a).value)


def test_delta_f_noise_excluded():
    values = np.array([0.0, 0.0, 10.0, 10.0, 500.0])
    clean = delta_f(values[:4], np.array([0, 0, 1, 1]), np.array([0, 1, 0, 1]))
    noisy = delta_f(values, np.array([0, 0, 1, 1, -1]), np.array([0, 1, 0, 1, -1]))
    assert noisy.value == pytest.approx(clean.value)


def test_delta_f_undefined_side():
    values = np.arange(4.0)
    result = delta_f(values, np.array([0, 0, 1, 1]), np.array([0, 0, 0, -1]))
    assert not result.defined
    assert result.value == 0.0
    with pytest.raises(UndefinedMetric):
        delta_f_value(values, np.array([0, 0, 1, 1]), np.array([0, 0, 0, -1]))


def test_encode_one_channel():
    dataset = make_dataset(np.zeros((10, 1)), np.zeros(10), channels=["a"])
    encoded = encode_segment_features(dataset, {"a": assign_segments([5], 10)})
    assert encoded.columns_of(FeatureOrigin.SEGMENT) == ["a_segment"]
    assert encoded.matrix(["a_segment"])[:, 0].tolist() == [0.0] * 5 + [1.0] * 5


def test_encode_two_channels_with_delta_f():
    dataset = make_dataset(np.zeros((10, 2)), np.zeros(10), channels=["a", "b"])
    maps = {"a": assign_segments([5], 10), "b": assign_segments([2, 8], 10)}
    deltas = {"a": DeltaF(3.5, True, 4.0, 0.5), "b": DeltaF(0.0, False, None, 1.0)}
    encoded = encode_segment_features(dataset, maps, deltas)
    assert len(encoded.columns) == 6
    assert encoded.columns_of(FeatureOrigin.DELTA_F) == ["a_delta_f", "b_delta_f"]
    assert np.all(encoded.matrix(["a_delta_f"]) == 3.5)
    assert np.all(encoded.matrix(["b_delta_f"]) == 0.0)
    assert encoded.flags["delta_f_undefined"] == ["b"]


def test_encode_misaligned_map():
    dataset = make_dataset(np.zeros((10, 1)), np.zeros(10), channels=["a"])
    with pytest.raises(RejectedInput):
        encode_segment_features(dataset, {"a": assign_segments([2], 8)})


def test_maps_rebuilt_from_columns(segmented_dataset):
    maps = maps_from_dataset(segmented_dataset)
    assert list(maps) == ["ch0.pv"]
    assert maps["ch0.pv"].boundaries.tolist() == [200]
    assert maps["ch0.pv"].n_segments == 2


def test_maps_need_segment_columns():
    with pytest.raises(RejectedInput):
        maps_from_dataset(make_dataset(np.zeros((5, 1)), np.zeros(5)))


def test_f_ratio_report_ranks_features():
    rng = np.random.default_rng(2)
    dataset = make_dataset(rng.normal(size=(40, 1)), np.zeros(40), channels=["a"])
    smap = assign_segments([20], 40)
    shifted = rng.normal(size=40) + np.where(smap.segment_ids == 1, 10.0, 0.0)
    dataset = dataset.with_columns(
        {"a_mean_score_pre_cp": shifted, "a_cp_freq": rng.normal(size=40)}, FeatureOrigin.CP_FEATURE
    )
    table = f_ratio_report(dataset, {"a": smap})
    assert table["feature"].tolist() == ["a_mean_score_pre_cp", "a_cp_freq"]
    assert table["f_ratio"].is_monotonic_decreasing


def test_delta_f_report_rows():
    table = delta_f_report(
        {"a": DeltaF(1.0, True, 2.0, 1.0)}, {"a": {1: DeltaF(0.0, False, None, 3.0), 0: DeltaF(2.0, True, 3.0, 1.0)}}
    )
    assert len(table) == 3
    assert table["segment"].tolist()[1:] == [0, 1]
