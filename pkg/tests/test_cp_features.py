import numpy as np
import pytest

from analysis.changepoint import ChangeScoreSeries, ChannelChangepoints, CPList
from analysis.cp_features import (
    FEATURE_NAMES,
    TOP3,
    add_cp_features,
    compute_cp_features,
    default_window,
    select_features,
)
from core.errors import RejectedInput
from core.models import FeatureOrigin
from tests.conftest import make_dataset


def detection(channel, scores, cps):
    scores = np.asarray(scores, dtype=float)
    return ChannelChangepoints(
        channel=channel,
        scores=ChangeScoreSeries(scores, scores, (2, 0.005, 5, 5), 0),
        cps=CPList(np.asarray(cps, dtype=np.int64), 3.0, 10),
    )


def test_pre_cp_statistics():
    scores = np.array([1.0, 2.0, 3.0, 9.0, 9.0, 9.0])
    features = compute_cp_features(scores, [3], window=10)
    assert features["mean_score_pre_cp"][3] == pytest.approx(2.0)
    assert features["max_score_pre_cp"][3] == pytest.approx(3.0)
    assert features["std_score_pre_cp"][3] == pytest.approx(1.0)


def test_no_changepoints():
    features = compute_cp_features(np.random.default_rng(0).normal(size=100), [], window=10)
    row = [features[name][57] for name in FEATURE_NAMES]
    assert row == [0.0, 57.0, 0.0, 0.0, 0.0]


def test_cp_frequency_window():
    features = compute_cp_features(np.zeros(500), [100, 250, 300], window=200)
    assert features["cp_freq"][400] == 2
    assert features["cp_freq"][299] == 2
    assert features["cp_freq"][99] == 0


def test_distance_resets_at_changepoints():
    dist = compute_cp_features(np.zeros(30), [10, 20], window=5)["dist_last_cp"]
    assert dist[9] == 9
    assert dist[10] == 0 and dist[11] == 1
    assert dist[20] == 0 and dist[29] == 9


def test_statistics_constant_between_changepoints():
    rng = np.random.default_rng(1)
    scores = rng.normal(size=200)
    features = compute_cp_features(scores, [40, 90, 150], window=24)
    for name in ("mean_score_pre_cp", "max_score_pre_cp", "std_score_pre_cp"):
        column = features[name]
        assert np.unique(column[90:150]).size == 1
        assert np.unique(column[150:]).size == 1
    assert features["mean_score_pre_cp"][100] == pytest.approx(scores[40:90].mean())
    assert features["mean_score_pre_cp"][100] <= features["max_score_pre_cp"][100]


def test_lookback_window():
    scores = np.arange(100, dtype=float)
    features = compute_cp_features(scores, [50], window=10, lookback=5)
    assert features["mean_score_pre_cp"][60] == pytest.approx(47.0)


def test_window_must_be_positive():
    with pytest.raises(RejectedInput):
        compute_cp_features(np.zeros(10), [], window=0)


def test_default_window_is_one_day():
    assert default_window(1800.0) == 48
    assert default_window(60.0) == 1440


def with_features():
    rng = np.random.default_rng(2)
    dataset = make_dataset(rng.normal(size=(60, 2)), np.zeros(60), channels=["a", "b"])
    detections = {name: detection(name, rng.normal(size=60), [20, 40]) for name in ("a", "b")}
    return add_cp_features(dataset, detections, window=12)


def test_add_cp_features_names_and_origins():
    dataset = with_features()
    added = dataset.columns_of(FeatureOrigin.CP_FEATURE)
    assert len(added) == 10
    assert "a_cp_freq" in added and "b_dist_last_cp" in added
    assert dataset.flags["cp_freq_window"] == 12


def test_add_cp_features_length_mismatch():
    dataset = make_dataset(np.zeros((30, 1)), np.zeros(30), channels=["a"])
    with pytest.raises(RejectedInput):
        add_cp_features(dataset, {"a": detection("a", np.zeros(20), [])}, window=5)


def test_select_top_three():
    dataset = select_features(with_features(), TOP3, scope=[FeatureOrigin.CP_FEATURE])
    assert set(dataset.columns_of(FeatureOrigin.CP_FEATURE)) == {
        f"{c}_{f}" for c in ("a", "b") for f in ("mean_score_pre_cp", "std_score_pre_cp", "max_score_pre_cp")
    }
    assert dataset.raw_channels == ["a", "b"]


def test_select_everything_is_identity():
    dataset = with_features()
    assert select_features(dataset, ["*"]).columns == dataset.columns


def test_select_nothing_rejected():
    with pytest.raises(RejectedInput):
        select_features(with_features(), ["nonexistent_*"], scope=[FeatureOrigin.CP_FEATURE])
