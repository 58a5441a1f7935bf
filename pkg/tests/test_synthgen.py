import io
import json

import numpy as np
import pytest

from core.errors import RejectedInput
from core.io import align_labels, parse_frame, parse_noc
from core.synthgen import ScenarioConfig, generate_scenario, write_scenario

SMALL = dict(n_channels=4, n_rows=2000, regime_changes=3.0)


def test_same_seed_is_bit_identical():
    config = ScenarioConfig.from_preset("default", **SMALL)
    a = generate_scenario(config, seed=11)
    b = generate_scenario(config, seed=11)
    assert np.array_equal(a.frame.values, b.frame.values)
    assert a.true_cps == b.true_cps
    assert a.timeline == b.timeline


def test_worker_count_does_not_change_output():
    config = ScenarioConfig.from_preset("default", **SMALL)
    assert np.array_equal(generate_scenario(config, 5, jobs=1).frame.values, generate_scenario(config, 5, jobs=2).frame.values)


def test_zero_jump_has_no_regime_changes():
    scenario = generate_scenario(ScenarioConfig.from_preset("default", jump_sigma=0.0, **SMALL), seed=1)
    assert all(not cps for cps in scenario.true_cps.values())


def test_label_prevalence_matches_windows():
    config = ScenarioConfig.from_preset("default", **SMALL)
    scenario = generate_scenario(config, seed=2)
    dataset = align_labels(scenario.frame, scenario.timeline)
    expected = sum(hi - lo for lo, hi in config.window_rows())
    assert abs(int(dataset.labels.sum()) - expected) <= 1
    assert scenario.manifest["prevalence"] == pytest.approx(3 * 0.0156, abs=1.5 / config.n_rows)


def test_regimes_respect_min_separation():
    config = ScenarioConfig.from_preset("default", regime_changes=20.0, **{k: v for k, v in SMALL.items() if k != "regime_changes"})
    scenario = generate_scenario(config, seed=3)
    for cps in scenario.true_cps.values():
        edges = [0] + list(cps) + [config.n_rows]
        assert min(np.diff(edges)) >= config.min_regime_rows


def test_steps_preset_has_one_shift():
    scenario = generate_scenario(ScenarioConfig.from_preset("steps"), seed=0)
    assert scenario.true_cps == {"CH00.pv": [200]}
    assert not scenario.timeline.anomalous
    values = scenario.frame.values[:, 0]
    assert abs(values[200:].mean() - values[:200].mean()) == pytest.approx(5.0, abs=0.05)


def test_segment_means_differ_by_jump():
    config = ScenarioConfig.from_preset("default", anomaly_starts=[], **SMALL)
    jump = config.jump_sigma * config.noise_sigma
    ratios = []
    for seed in range(20):
        scenario = generate_scenario(config, seed=seed)
        for j, name in enumerate(scenario.frame.channels):
            edges = [0] + scenario.true_cps[name] + [config.n_rows]
            values = scenario.frame.values[:, j]
            for a, b, c in zip(edges, edges[1:], edges[2:]):
                gap = abs(values[b:c].mean() - values[a:b].mean())
                tolerance = 3.0 * config.noise_sigma * np.sqrt(1.0 / (b - a) + 1.0 / (c - b))
                ratios.append(abs(gap - jump) / tolerance)
    assert len(ratios) > 50
    assert np.mean(ratios) <= 1.0


def test_unknown_preset_rejected():
    with pytest.raises(RejectedInput):
        ScenarioConfig.from_preset("nope")


def test_window_outside_series_rejected():
    with pytest.raises(ValueError):
        ScenarioConfig(anomaly_starts=[0.99])


def test_written_files_parse_back(tmp_path):
    scenario = generate_scenario(ScenarioConfig.from_preset("default", **SMALL), seed=4)
    paths = write_scenario(scenario, tmp_path)
    frame = parse_frame(paths["frame"])
    assert np.array_equal(frame.values, scenario.frame.values)
    assert parse_noc(paths["noc"]) == scenario.timeline
    manifest = json.loads(paths["manifest"].read_text())
    assert manifest["seed"] == 4
    assert len(manifest["anomaly_rows"]) == 3
