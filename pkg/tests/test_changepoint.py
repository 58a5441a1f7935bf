import copy
import math

import numpy as np
import pytest

from analysis.changepoint import (
    ChangepointParams,
    ChangeScoreSeries,
    SdarState,
    changefinder_score,
    detect_all_channels,
    extract_changepoints,
    levinson_durbin,
    read_cpd_outputs,
    sdar_update,
    smooth,
    write_cpd_outputs,
)
from core.errors import RejectedInput
from core.synthgen import ScenarioConfig, generate_scenario
from tests.conftest import make_frame


def scores_of(values, warmup=0):
    values = np.asarray(values, dtype=float)
    return ChangeScoreSeries(outlier_scores=values, change_scores=values, params=(2, 0.005, 5, 5), warmup=warmup)


def test_smooth_trailing_average():
    assert np.allclose(smooth(np.array([0.0, 0.0, 6.0]), 3), [0.0, 0.0, 2.0])
    assert np.allclose(smooth(np.array([4.0, 8.0]), 2), [4.0, 6.0])
    assert np.allclose(smooth(np.array([1.0, 2.0, 3.0]), 1), [1.0, 2.0, 3.0])


def test_smooth_window_longer_than_series():
    with pytest.raises(RejectedInput):
        smooth(np.array([1.0, 2.0]), 3)


def test_levinson_durbin_ar1():
    coef, ok = levinson_durbin([1.0, 0.5], 1e-9)
    assert ok
    assert coef == pytest.approx([0.5])


def test_levinson_durbin_degenerate():
    coef, ok = levinson_durbin([0.0, 0.0, 0.0], 1e-9)
    assert not ok
    assert coef == [0.0, 0.0]


def warm_state(rng):
    return SdarState.warm_start(rng.normal(0.0, 1.0, 50), order=2, discount=0.05)


def test_sdar_scores_with_prior_prediction(rng):
    state = warm_state(rng)
    mu, var = state.predict(), state.sigma2
    _, score = sdar_update(state, 0.7)
    expected = 0.5 * (math.log(2 * math.pi) + math.log(var)) + (0.7 - mu) ** 2 / (2 * var)
    assert score == pytest.approx(expected)


def test_sdar_surprise_scores_higher(rng):
    state = warm_state(rng)
    _, typical = sdar_update(copy.deepcopy(state), state.predict())
    _, surprise = sdar_update(copy.deepcopy(state), state.predict() + 10.0)
    assert surprise > typical


def test_sdar_updates_history_and_moments(rng):
    state = warm_state(rng)
    before = state.mean
    state, _ = sdar_update(state, 100.0)
    assert state.history[0] == 100.0 and len(state.history) == 2
    assert state.mean == pytest.approx(0.95 * before + 0.05 * 100.0)
    assert state.sigma2 >= state.floor


def test_sdar_rejects_non_finite(rng):
    with pytest.raises(RejectedInput):
        sdar_update(warm_state(rng), float("nan"))


def test_constant_series_has_no_changepoints():
    cs = changefinder_score(np.full(200, 3.0))
    assert np.isfinite(cs.change_scores).all()
    assert len(extract_changepoints(cs, 3.0, 10)) == 0


def test_short_series_rejected():
    with pytest.raises(RejectedInput):
        changefinder_score(np.arange(8.0))


def test_non_finite_rejected():
    series = np.ones(100)
    series[40] = np.nan
    with pytest.raises(RejectedInput) as err:
        changefinder_score(series)
    assert err.value.details["row"] == 40


def test_warmup_rows_are_zero():
    cs = changefinder_score(np.random.default_rng(0).normal(size=300))
    assert cs.warmup >= 2 * 5
    assert np.all(cs.change_scores[: 2 * 10] == 0.0)


def test_single_spike_extracted():
    values = np.zeros(100)
    values[50] = 10.0
    assert extract_changepoints(scores_of(values), 3.0, 10).indices.tolist() == [50]


def test_equal_peaks_keep_earlier():
    values = np.zeros(100)
    values[30] = values[34] = 5.0
    assert extract_changepoints(scores_of(values), 3.0, 10).indices.tolist() == [30]


def test_distant_peaks_both_kept():
    values = np.zeros(100)
    values[30] = 5.0
    values[70] = 6.0
    assert extract_changepoints(scores_of(values), 2.0, 10).indices.tolist() == [30, 70]


def test_peaks_inside_warmup_ignored():
    values = np.zeros(100)
    values[5] = 50.0
    values[60] = 5.0
    assert extract_changepoints(scores_of(values, warmup=20), 3.0, 10).indices.tolist() == [60]


def test_min_sep_must_be_positive():
    with pytest.raises(RejectedInput):
        extract_changepoints(scores_of(np.zeros(10)), 3.0, 0)


def step_series(seed, shift=5.0, n=400):
    noise = np.random.default_rng(seed).normal(0.0, 0.1, n)
    return np.where(np.arange(n) < n // 2, 0.0, shift) + noise


@pytest.mark.parametrize("seed", range(10))
def test_constant_padding_shifts_changepoints(seed):
    params = ChangepointParams()
    base = step_series(seed)
    padded = np.r_[np.full(50, base[0]), base]
    found = extract_changepoints(changefinder_score(base, params), params.threshold_sigma, params.separation)
    shifted = extract_changepoints(changefinder_score(padded, params), params.threshold_sigma, params.separation)
    assert len(found) > 0
    assert shifted.indices.tolist() == (found.indices + 50).tolist()


def test_padding_only_shifts_scores():
    base = step_series(0)
    a = changefinder_score(base)
    b = changefinder_score(np.r_[np.full(30, base[0]), base])
    assert b.warmup == a.warmup + 30
    assert np.array_equal(b.change_scores[30:], a.change_scores)


def test_iid_change_scores_do_not_diverge():
    for seed in range(20):
        cs = changefinder_score(np.random.default_rng(seed).normal(size=2000))
        body = cs.change_scores[cs.warmup:]
        assert body.min() >= 0.0
        assert body.std() / body.mean() < 1.0


def test_larger_shift_never_lowers_peak():
    for seed in range(50):
        peaks = []
        for shift in (0.1, 0.2, 0.5):
            cs = changefinder_score(step_series(seed, shift))
            peaks.append(cs.change_scores[cs.warmup:].max())
        assert peaks[0] <= peaks[1] <= peaks[2]


def test_step_located_across_seeds():
    hits = 0
    for seed in range(100):
        cs = changefinder_score(step_series(seed))
        hits += 200 <= int(np.argmax(cs.change_scores)) <= 220
    assert hits >= 95


def test_mean_shift_is_found():
    scenario = generate_scenario(ScenarioConfig.from_preset("steps"), seed=0)
    results = detect_all_channels(scenario.frame, ChangepointParams())
    found = results["CH00.pv"].cps.indices
    assert any(abs(int(t) - 200) <= 15 for t in found)


def test_channel_order_follows_frame():
    rng = np.random.default_rng(1)
    frame = make_frame(rng.normal(size=(120, 3)), channels=["b", "a", "c"])
    assert list(detect_all_channels(frame, jobs=2)) == ["b", "a", "c"]


def test_cpd_outputs_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    values = rng.normal(size=(150, 2))
    values[75:, 0] += 8.0
    frame = make_frame(values)
    params = ChangepointParams(min_sep=12)
    results = detect_all_channels(frame, params)
    write_cpd_outputs(results, tmp_path, params)
    back = read_cpd_outputs(tmp_path)
    assert list(back) == list(results)
    for name, result in results.items():
        assert np.array_equal(back[name].cps.indices, result.cps.indices)
        assert np.array_equal(back[name].scores.change_scores, result.scores.change_scores)
        assert back[name].scores.warmup == result.scores.warmup
        assert back[name].cps.min_sep == 12
