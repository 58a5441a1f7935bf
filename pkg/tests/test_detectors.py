import numpy as np
import pytest

from analysis.evaluation import roc_auc
from core.errors import RejectedInput, SchemaMismatch
from detectors.artifact import ModelKind, load_artifact, quantile_threshold, save_artifact
from detectors.iforest import IsolationParams, average_path_length, score_iforest, train_isolation_forest
from detectors.kmeans import KMeansDetectorParams, score_kmeans_distance, train_kmeans_detector
from detectors.ocsvm import OneClassParams, decision_function, score_ocsvm, train_ocsvm
from detectors.pca import PCAParams, fit_pca, score_pca_spe, transform_pca
from detectors.trees import (
    BoostingParams,
    ForestParams,
    forest_trees,
    predict_proba,
    train_ensemble_rf_gbt,
    train_gradient_boosting,
    train_random_forest,
)


@pytest.fixture
def xor():
    X = np.tile(np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]]), (50, 1))
    y = np.tile(np.array([False, False, True, True]), 50)
    return X, y


# ============================================
# SUPERVISED
# ============================================

def test_forest_learns_xor(xor):
    X, y = xor
    model = train_random_forest(X, y, ForestParams(n_trees=20, max_depth=3), seed=0)
    accuracy = ((predict_proba(model, X) >= 0.5) == y).mean()
    assert accuracy >= 0.95


def test_forest_single_split_auc(separable):
    X, y = separable
    model = train_random_forest(X, y, ForestParams(n_trees=1, bootstrap=False), seed=0)
    assert roc_auc(predict_proba(model, X), y) == 1.0


def test_forest_is_deterministic(separable):
    X, y = separable
    a = train_random_forest(X, y, ForestParams(n_trees=10), seed=4, jobs=1)
    b = train_random_forest(X, y, ForestParams(n_trees=10), seed=4, jobs=2)
    for ta, tb in zip(forest_trees(a), forest_trees(b)):
        assert np.array_equal(ta.feature, tb.feature)
        assert np.array_equal(ta.threshold, tb.threshold)
        assert np.array_equal(ta.value, tb.value)


def test_forest_single_class_rejected():
    with pytest.raises(RejectedInput):
        train_random_forest(np.zeros((10, 2)), np.zeros(10, dtype=bool))


def test_empty_forest_rejected(separable):
    X, y = separable
    with pytest.raises(RejectedInput):
        train_random_forest(X, y, ForestParams(n_trees=0))


def test_column_order_is_remapped(separable):
    X, y = separable
    model = train_random_forest(X, y, ForestParams(n_trees=5), feature_names=["a", "b"], seed=1)
    straight = predict_proba(model, X, ["a", "b"])
    swapped = predict_proba(model, X[:, ::-1], ["b", "a"])
    assert np.array_equal(straight, swapped)
    with pytest.raises(RejectedInput):
        predict_proba(model, X, ["a", "c"])


def test_boosting_loss_never_rises(xor):
    X, y = xor
    model = train_gradient_boosting(X, y, BoostingParams(n_rounds=30, learning_rate=0.5), seed=0)
    losses = model.metadata["train_loss"]
    assert np.all(np.diff(losses) <= 1e-9)


@pytest.mark.parametrize("seed", range(10))
def test_boosting_loss_never_rises_on_noisy_labels(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(150, 3))
    y = (X[:, 0] + rng.normal(0.0, 1.0, 150)) > 0.5
    model = train_gradient_boosting(X, y, BoostingParams(n_rounds=20, learning_rate=1.0, subsample=0.8), seed=seed)
    assert np.all(np.diff(model.metadata["train_loss"]) <= 1e-12)


def test_boosting_separable_auc(separable):
    X, y = separable
    model = train_gradient_boosting(X, y, BoostingParams(n_rounds=50), seed=0)
    proba = predict_proba(model, X)
    assert roc_auc(proba, y) == 1.0
    assert np.all((proba >= 0) & (proba <= 1))


def test_boosting_zero_rate_is_base_rate(separable):
    X, y = separable
    y = y.copy()
    y[:50] = True
    model = train_gradient_boosting(X, y, BoostingParams(n_rounds=5, learning_rate=0.0), seed=0)
    assert np.allclose(predict_proba(model, X), y.mean())


def test_ensemble_within_member_bounds(separable):
    X, y = separable
    model = train_ensemble_rf_gbt(X, y, ForestParams(n_trees=10), BoostingParams(n_rounds=10), seed=2)
    assert model.kind == ModelKind.ENSEMBLE
    rf, gbt = model.payload["members"]
    rng = np.random.default_rng(0)
    Q = rng.normal(4.0, 4.0, size=(50, 2))
    members = np.vstack([predict_proba(rf, Q), predict_proba(gbt, Q)])
    proba = predict_proba(model, Q)
    assert np.all(proba >= members.min(axis=0) - 1e-12)
    assert np.all(proba <= members.max(axis=0) + 1e-12)
    assert np.allclose(proba, members.mean(axis=0))
    assert roc_auc(predict_proba(model, X), y) == 1.0


def test_predict_proba_rejects_unsupervised(separable):
    X, _ = separable
    with pytest.raises(RejectedInput):
        predict_proba(fit_pca(X), X)


# ============================================
# ISOLATION FOREST
# ============================================

def test_average_path_length_two():
    assert float(average_path_length(2)) == pytest.approx(1.0)
    assert float(average_path_length(1)) == 0.0


@pytest.mark.parametrize("seed", range(20))
def test_isolated_point_scores_highest(seed):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(size=(256, 2)), [[10.0, 10.0]]])
    scores = score_iforest(train_isolation_forest(X, IsolationParams(n_trees=100), seed=seed), X)
    assert int(np.argmax(scores)) == 256


def test_uniform_scores_near_half():
    X = np.random.default_rng(3).uniform(size=(1000, 2))
    scores = score_iforest(train_isolation_forest(X, seed=3), X)
    assert 0.4 <= scores.mean() <= 0.6


def test_subsample_clamped():
    model = train_isolation_forest(np.random.default_rng(0).normal(size=(50, 2)), IsolationParams(subsample_size=256))
    assert model.params["subsample_size"] == 50
    assert model.metadata["subsample_clamped"]


def test_single_point_forest_defined():
    model = train_isolation_forest(np.array([[1.0, 2.0]]), IsolationParams(n_trees=3, subsample_size=1))
    assert np.allclose(score_iforest(model, np.array([[1.0, 2.0], [5.0, 5.0]])), 0.5)


# ============================================
# ONE-CLASS SVM
# ============================================

@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("nu", [0.05, 0.1, 0.2, 1.0])
def test_nu_bounds(nu, seed):
    X = np.random.default_rng(seed).normal(size=(300, 2))
    model = train_ocsvm(X, OneClassParams(nu=nu))
    f = decision_function(model, X)
    # outliers at most ν, support vectors and boundary points at least ν
    assert (f < -2e-4).mean() <= nu + 1e-9
    assert (f < 2e-4).mean() >= nu - 1e-9
    assert model.metadata["support_fraction"] >= nu - 1e-9
    if nu < 1.0:
        assert abs((f < 0).mean() - nu) <= 0.03


def test_nu_one_keeps_every_row():
    X = np.random.default_rng(4).normal(size=(50, 2))
    model = train_ocsvm(X, OneClassParams(nu=1.0))
    assert model.metadata["support_fraction"] == 1.0
    assert model.metadata["iterations"] == 0
    assert np.all(decision_function(model, X) <= 1e-9)


def test_repeated_point_is_inside():
    X = np.ones((10, 3))
    model = train_ocsvm(X, OneClassParams(nu=0.5))
    assert np.all(decision_function(model, X) >= 0.0)


def test_far_query_scores_highest():
    X = np.random.default_rng(2).normal(size=(100, 2))
    model = train_ocsvm(X, OneClassParams(nu=0.1))
    far = score_ocsvm(model, np.array([[1000.0, 1000.0]]))
    assert far[0] > score_ocsvm(model, X).max()


def test_dual_objective_non_decreasing():
    model = train_ocsvm(np.random.default_rng(3).normal(size=(80, 2)), OneClassParams(nu=0.2))
    assert np.all(np.diff(model.metadata["dual_objective"]) >= -1e-9)
    assert model.metadata["kkt_residual"] < 1e-4


# ============================================
# PCA AND K-MEANS
# ============================================

def test_pca_full_basis_reconstructs():
    X = np.random.default_rng(4).normal(size=(60, 4))
    model = fit_pca(X, PCAParams(variance_keep=1.0))
    assert score_pca_spe(model, X).max() <= 1e-9


def test_pca_rank_one_data():
    t = np.random.default_rng(5).normal(size=100)
    X = np.column_stack([t, 2.0 * t + 1.0])
    model = fit_pca(X, PCAParams(variance_keep=0.9))
    assert model.metadata["n_components"] == 1
    assert model.payload["explained_variance_ratio"][0] >= 0.999
    assert score_pca_spe(model, X).max() <= 1e-9
    assert transform_pca(model, X).shape == (100, 1)


def test_pca_off_subspace_query():
    t = np.random.default_rng(6).normal(size=100)
    X = np.column_stack([t, t])
    model = fit_pca(X, PCAParams(variance_keep=0.9))
    mean, std = model.payload["mean"], model.payload["std"]
    query = (mean + std * np.array([1.5, -1.5])).reshape(1, 2)
    # z = (1.5, -1.5) is orthogonal to the kept axis
    assert score_pca_spe(model, query)[0] == pytest.approx(4.5)


def test_pca_drops_constant_column():
    X = np.column_stack([np.random.default_rng(7).normal(size=30), np.full(30, 2.0)])
    model = fit_pca(X)
    assert model.payload["used"].tolist() == [True, False]
    with pytest.raises(RejectedInput):
        fit_pca(np.ones((5, 2)))


def test_kmeans_distance():
    X = np.array([[0.0], [0.0], [10.0], [10.0]])
    model = train_kmeans_detector(X, KMeansDetectorParams(k=2), seed=0)
    assert score_kmeans_distance(model, np.array([[4.0], [0.0], [13.0]])).tolist() == pytest.approx([4.0, 0.0, 3.0])


# ============================================
# ARTIFACTS
# ============================================

def test_artifact_reload_is_exact(tmp_path, separable):
    X, y = separable
    models = [
        train_ensemble_rf_gbt(X, y, ForestParams(n_trees=5), BoostingParams(n_rounds=5), seed=1),
        train_ocsvm(X[:60], OneClassParams(nu=0.2)),
        train_isolation_forest(X, IsolationParams(n_trees=10)),
    ]
    for i, model in enumerate(models):
        back = load_artifact(save_artifact(model, tmp_path / f"m{i}.json"))
        assert back.kind == model.kind
        assert back.feature_names == model.feature_names
        assert quantile_threshold(back, 0.05) == quantile_threshold(model, 0.05)
    assert np.array_equal(predict_proba(load_artifact(tmp_path / "m0.json"), X), predict_proba(models[0], X))
    assert np.array_equal(score_ocsvm(load_artifact(tmp_path / "m1.json"), X), score_ocsvm(models[1], X))


def test_artifact_format_checked(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"format": "something-else", "schema_version": 1}')
    with pytest.raises(SchemaMismatch):
        load_artifact(path)
