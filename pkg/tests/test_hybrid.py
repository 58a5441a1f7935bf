import json

import numpy as np
import pytest

from analysis.evaluation import EvaluationParams
from core.errors import RejectedInput
from core.models import FeatureOrigin
from detectors.artifact import ModelKind, load_artifact, save_artifact
from detectors.hybrid import (
    COMPARISON_COLUMNS,
    NAMED_PIPELINES,
    DetectorParams,
    PipelineSpec,
    build_pipeline,
    f1_drop,
    pipeline_features,
    resolve_spec,
    run_comparison,
    score_dataset,
    score_model,
    train_on_dataset,
    write_comparison,
)
from detectors.ocsvm import OneClassParams
from detectors.trees import BoostingParams, ForestParams, predict_proba, train_random_forest

FAST = DetectorParams(
    forest=ForestParams(n_trees=10),
    boosting=BoostingParams(n_rounds=10),
    ocsvm=OneClassParams(nu=0.2),
)
NAMES = ["a", "b"]


def test_single_stage_is_identity(separable):
    X, y = separable
    pipeline = build_pipeline(PipelineSpec(name="rf", stages=["rf"]), FAST)
    model = pipeline.train(X, y, NAMES, seed=3)
    plain = train_random_forest(X, y, FAST.forest, NAMES, seed=3)
    assert model.kind == ModelKind.PIPELINE
    assert np.array_equal(pipeline.score(X), predict_proba(plain, X))


def test_augment_adds_one_score_column(separable):
    X, y = separable
    model = build_pipeline(resolve_spec("ocsvm+rf"), FAST).train(X, y, NAMES, seed=0)
    final = model.payload["final"]
    assert final.feature_names == ["a", "b", "ocsvm_score"]
    assert model.metadata["stage_features"] == ["a", "b", "ocsvm_score"]


def test_replace_feeds_reduced_space(separable):
    X, y = separable
    model = build_pipeline(resolve_spec("pca+ocsvm"), FAST).train(X, y, NAMES, seed=0)
    reducer, final = model.payload["reducer"], model.payload["final"]
    k = reducer.metadata["n_components"]
    assert final.kind == ModelKind.OCSVM
    assert final.feature_names == [f"pc{i + 1}" for i in range(k)]
    assert score_model(model, X).shape == (200,)


@pytest.mark.parametrize("stages", [["rf", "pca"], ["ocsvm", "pca", "rf"], ["pca", "pca", "rf"], []])
def test_invalid_stage_order(stages):
    with pytest.raises(RejectedInput):
        build_pipeline(PipelineSpec(name="bad", stages=stages))


def test_unknown_named_pipeline():
    with pytest.raises(RejectedInput):
        resolve_spec("nope")
    custom = {"mine": PipelineSpec(name="mine", stages=["gbt"])}
    assert resolve_spec("mine", custom).stages == ["gbt"]


def test_untrained_pipeline_cannot_score(separable):
    X, _ = separable
    with pytest.raises(RejectedInput):
        build_pipeline(NAMED_PIPELINES["rf"]).score(X)


def test_f1_drop():
    assert f1_drop(0.41, 0.04) == 90.0
    assert f1_drop(0.5, 0.5) == 0.0
    assert np.isnan(f1_drop(0.0, 0.3))


def test_pipeline_features_filter_origins(segmented_dataset):
    features = pipeline_features(segmented_dataset, resolve_spec("ensemble"))
    assert list(features.columns) == ["ch0.pv", "ch1.pv"]
    features = pipeline_features(segmented_dataset, resolve_spec("baseline"))
    assert "ch0.pv_segment" in features.columns
    with pytest.raises(RejectedInput):
        pipeline_features(
            segmented_dataset, PipelineSpec(name="cp", stages=["rf"], origins=[FeatureOrigin.CP_FEATURE])
        )


def test_pipeline_artifact_reload(tmp_path, segmented_dataset):
    model = train_on_dataset(segmented_dataset, resolve_spec("ocsvm+gbt"), FAST, seed=1)
    back = load_artifact(save_artifact(model, tmp_path / "model.json"))
    assert np.array_equal(score_dataset(back, segmented_dataset), score_dataset(model, segmented_dataset))


def test_comparison_table(segmented_dataset):
    specs = [resolve_spec("baseline"), resolve_spec("baseline"), resolve_spec("ocsvm+rf")]
    table = run_comparison(segmented_dataset, specs, FAST, EvaluationParams(train_fraction=0.7), seed=2)
    assert list(table.columns) == COMPARISON_COLUMNS
    assert len(table) == 3
    assert table.loc[0, "auc_roc"] == table.loc[1, "auc_roc"]
    assert table.loc[1, "f1_drop_pct"] == 0.0


def test_comparison_independent_of_workers(segmented_dataset):
    specs = [resolve_spec("baseline"), resolve_spec("pca+gbt")]
    a = run_comparison(segmented_dataset, specs, FAST, seed=5, jobs=1)
    b = run_comparison(segmented_dataset, specs, FAST, seed=5, jobs=2)
    assert a.equals(b)


def test_comparison_needs_specs(segmented_dataset):
    with pytest.raises(RejectedInput):
        run_comparison(segmented_dataset, [])


def test_write_comparison(tmp_path, segmented_dataset):
    table = run_comparison(segmented_dataset, [resolve_spec("baseline")], FAST)
    paths = write_comparison(table, tmp_path)
    assert sorted(p.name for p in paths) == ["comparison.csv", "comparison.json"]
    payload = json.loads((tmp_path / "comparison.json").read_text())
    assert payload["rows"][0]["approach"] == "baseline"
