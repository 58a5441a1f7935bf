"""
Hybrid detector pipelines and the comparison harness
"""

import math
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from loguru import logger
from pydantic import BaseModel, Field

from analysis.cp_features import TOP3, select_features
from analysis.evaluation import EvaluationParams, assemble_report, fit_f1_threshold, label_runs
from core.errors import RejectedInput
from core.io import SCHEMA_VERSION, holdout_split, write_json
from core.models import FeatureOrigin, LabeledDataset
from detectors.artifact import SUPERVISED, ModelArtifact, ModelKind, quantile_threshold, training_metadata
from detectors.iforest import IsolationParams, score_iforest, train_isolation_forest
from detectors.kmeans import KMeansDetectorParams, score_kmeans_distance, train_kmeans_detector
from detectors.ocsvm import OneClassParams, score_ocsvm, train_ocsvm
from detectors.pca import PCAParams, fit_pca, score_pca_spe, transform_pca
from detectors.trees import (
    BoostingParams,
    ForestParams,
    predict_proba,
    train_ensemble_rf_gbt,
    train_gradient_boosting,
    train_random_forest,
)

REDUCERS = {"pca"}
ONE_CLASS = {"ocsvm", "iforest"}
FINALS = {"rf", "gbt", "ensemble", "ocsvm", "iforest", "pca", "kmeans-det"}

SEGMENTED = [FeatureOrigin.RAW, FeatureOrigin.SEGMENT]


class DetectorParams(BaseModel):
    """Hyperparameters of every detector, shared by all pipelines of a run"""

    forest: ForestParams = Field(default_factory=ForestParams)
    boosting: BoostingParams = Field(default_factory=BoostingParams)
    isolation: IsolationParams = Field(default_factory=IsolationParams)
    ocsvm: OneClassParams = Field(default_factory=OneClassParams)
    pca: PCAParams = Field(default_factory=PCAParams)
    kmeans: KMeansDetectorParams = Field(default_factory=KMeansDetectorParams)
    ensemble_weights: List[float] = Field(default_factory=lambda: [1.0, 1.0])


class PipelineSpec(BaseModel):
    """
    Ordered stages: optional reducer (pca), optional one-class stage
    (ocsvm | iforest), then exactly one final stage.
    """

    name: str
    stages: List[str]
    mode: Literal["replace", "augment"] = "augment"
    origins: List[FeatureOrigin] = Field(default_factory=lambda: list(SEGMENTED))
    keep: List[str] = Field(default_factory=list)
    keep_scope: Optional[List[FeatureOrigin]] = None


NAMED_PIPELINES: Dict[str, PipelineSpec] = {
    spec.name: spec
    for spec in [
        PipelineSpec(name="baseline", stages=["ensemble"]),
        PipelineSpec(name="cp-features-all", stages=["ensemble"], origins=SEGMENTED + [FeatureOrigin.CP_FEATURE]),
        PipelineSpec(
            name="cp-features-top3",
            stages=["ensemble"],
            origins=SEGMENTED + [FeatureOrigin.CP_FEATURE],
            keep=list(TOP3),
            keep_scope=[FeatureOrigin.CP_FEATURE],
        ),
        PipelineSpec(
            name="clustering-delta-f",
            stages=["ensemble"],
            origins=SEGMENTED + [FeatureOrigin.CLUSTER, FeatureOrigin.DELTA_F],
        ),
        PipelineSpec(name="pca+ocsvm", stages=["pca", "ocsvm"], mode="replace"),
        PipelineSpec(name="pca+gbt", stages=["pca", "gbt"], mode="replace"),
        PipelineSpec(name="ocsvm+rf", stages=["ocsvm", "rf"], mode="augment"),
        PipelineSpec(name="ocsvm+gbt", stages=["ocsvm", "gbt"], mode="augment"),
        PipelineSpec(name="ensemble", stages=["ensemble"], origins=[FeatureOrigin.RAW]),
    ]
    + [PipelineSpec(name=kind, stages=[kind]) for kind in ("rf", "gbt", "iforest", "ocsvm", "pca", "kmeans-det")]
}

DEFAULT_COMPARISON = ["baseline", "cp-features-all", "cp-features-top3", "pca+ocsvm", "ocsvm+rf"]


def resolve_spec(name: str, custom: Optional[Dict[str, PipelineSpec]] = None) -> PipelineSpec:
    if custom and name in custom:
        return custom[name]
    if name not in NAMED_PIPELINES:
        raise RejectedInput(f"unknown pipeline '{name}'", known=sorted(NAMED_PIPELINES) + sorted(custom or {}))
    return NAMED_PIPELINES[name]


# ============================================
# SINGLE DETECTORS
# ============================================

def _rows2d(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return X.reshape(-1, 1) if X.ndim == 1 else X


def train_detector(
    kind: str,
    X: np.ndarray,
    y: Optional[np.ndarray],
    params: DetectorParams,
    feature_names: Sequence[str],
    seed: int,
    jobs: int = 1,
) -> ModelArtifact:
    """Train one detector; one-class detectors fit the normal rows when labels are given"""
    X = _rows2d(X)
    if kind == "rf":
        return train_random_forest(X, y, params.forest, feature_names, seed, jobs)
    if kind == "gbt":
        return train_gradient_boosting(X, y, params.boosting, feature_names, seed)
    if kind == "ensemble":
        return train_ensemble_rf_gbt(
            X, y, params.forest, params.boosting, params.ensemble_weights, feature_names, seed, jobs
        )

    if y is not None:
        normal = ~np.asarray(y).astype(bool)
        if not normal.any():
            raise RejectedInput(f"{kind} trains on normal rows but every training row is anomalous")
        X = X[normal]
    if kind == "iforest":
        return train_isolation_forest(X, params.isolation, feature_names, seed, jobs)
    if kind == "ocsvm":
        return train_ocsvm(X, params.ocsvm, feature_names, seed)
    if kind == "pca":
        return fit_pca(X, params.pca, feature_names, seed)
    if kind == "kmeans-det":
        return train_kmeans_detector(X, params.kmeans, feature_names, seed)
    raise RejectedInput(f"unknown detector kind '{kind}'")


def score_model(model: ModelArtifact, X: np.ndarray, columns: Optional[Sequence[str]] = None) -> np.ndarray:
    """Anomaly score, higher = more anomalous, for any model kind"""
    if model.kind in SUPERVISED:
        return predict_proba(model, X, columns)
    if model.kind == ModelKind.IFOREST:
        return score_iforest(model, X, columns)
    if model.kind == ModelKind.OCSVM:
        return score_ocsvm(model, X, columns)
    if model.kind == ModelKind.PCA:
        return score_pca_spe(model, X, columns)
    if model.kind == ModelKind.KMEANS_DET:
        return score_kmeans_distance(model, X, columns)
    if model.kind == ModelKind.PIPELINE:
        return _score_pipeline(model, model.align(X, columns))
    raise RejectedInput(f"cannot score {model.kind.value} models")


# ============================================
# PIPELINES
# ============================================

class Pipeline:
    """Executable composite of a PipelineSpec"""

    def __init__(self, spec: PipelineSpec, params: Optional[DetectorParams] = None):
        self.spec = spec
        self.params = params or DetectorParams()
        self.reducer, self.one_class, self.final = _parse_stages(spec.stages)
        self.artifact: Optional[ModelArtifact] = None

    def train(
        self, X: np.ndarray, y: Optional[np.ndarray], feature_names: Sequence[str], seed: int, jobs: int = 1
    ) -> ModelArtifact:
        """
        Train stage by stage. In `replace` mode each stage sees only its
        upstream stage's output; in `augment` mode the output columns are
        appended to the original features.
        """
        X = _rows2d(X)
        names = list(feature_names)
        normal = None if y is None else ~np.asarray(y).astype(bool)
        stages: Dict[str, Optional[ModelArtifact]] = {"reducer": None, "one_class": None}

        if self.reducer:
            stages["reducer"] = fit_pca(X, self.params.pca, names, seed)
        Z, z_names = _reduce(stages["reducer"], X, names, self.spec.mode)

        if self.one_class:
            fit_rows = Z[normal] if normal is not None and normal.any() else Z
            stages["one_class"] = train_detector(self.one_class, fit_rows, None, self.params, z_names, seed, jobs)
        Z, z_names = _append_score(stages["one_class"], Z, z_names, self.spec.mode)

        final = train_detector(self.final, Z, y, self.params, z_names, seed, jobs)
        self.artifact = ModelArtifact(
            kind=ModelKind.PIPELINE,
            params={"spec": self.spec.model_dump(mode="json")},
            metadata={},
            payload={"reducer": stages["reducer"], "one_class": stages["one_class"], "final": final},
        )
        self.artifact.metadata = training_metadata(
            names, seed, _score_pipeline(self.artifact, X), stage_features=z_names
        )
        logger.info(f"🧩 Pipeline '{self.spec.name}' trained: {' -> '.join(self.spec.stages)} ({self.spec.mode})")
        return self.artifact

    def score(self, X: np.ndarray, columns: Optional[Sequence[str]] = None) -> np.ndarray:
        if self.artifact is None:
            raise RejectedInput(f"pipeline '{self.spec.name}' is not trained")
        return score_model(self.artifact, X, columns)


def build_pipeline(spec: PipelineSpec, params: Optional[DetectorParams] = None) -> Pipeline:
    return Pipeline(spec, params)


def _parse_stages(stages: Sequence[str]) -> Tuple[Optional[str], Optional[str], str]:
    if not stages:
        raise RejectedInput("pipeline has no stages")
    *upstream, final = stages
    if final not in FINALS:
        raise RejectedInput(f"'{final}' cannot be a final stage", stages=list(stages))
    reducer = one_class = None
    for stage in upstream:
        if stage in REDUCERS and reducer is None and one_class is None:
            reducer = stage
        elif stage in ONE_CLASS and one_class is None:
            one_class = stage
        else:
            raise RejectedInput(
                f"invalid stage order {list(stages)}: expected [pca] [ocsvm|iforest] final", stages=list(stages)
            )
    return reducer, one_class, final


def _reduce(reducer: Optional[ModelArtifact], X: np.ndarray, names: List[str], mode: str):
    if reducer is None:
        return X, names
    reduced = transform_pca(reducer, X)
    pc_names = [f"pc{i + 1}" for i in range(reduced.shape[1])]
    if mode == "replace":
        return reduced, pc_names
    return np.column_stack([X, reduced]), names + pc_names


def _append_score(stage: Optional[ModelArtifact], Z: np.ndarray, names: List[str], mode: str):
    if stage is None:
        return Z, names
    column = score_model(stage, Z)
    name = f"{stage.kind.value}_score"
    if mode == "replace":
        return column.reshape(-1, 1), [name]
    return np.column_stack([Z, column]), names + [name]


def _score_pipeline(model: ModelArtifact, X: np.ndarray) -> np.ndarray:
    mode = model.params["spec"]["mode"]
    names = model.feature_names or [f"x{i}" for i in range(X.shape[1])]
    Z, z_names = _reduce(model.payload.get("reducer"), X, names, mode)
    Z, z_names = _append_score(model.payload.get("one_class"), Z, z_names, mode)
    return score_model(model.payload["final"], Z)


def pipeline_features(dataset: LabeledDataset, spec: PipelineSpec) -> LabeledDataset:
    """Columns a pipeline consumes: origin filter, then keep-patterns"""
    columns = dataset.columns_of(*spec.origins)
    if not columns:
        raise RejectedInput(
            f"pipeline '{spec.name}' needs columns of origin {[o.value for o in spec.origins]}; none present"
        )
    selected = dataset.select(columns)
    if spec.keep:
        selected = select_features(selected, spec.keep, spec.keep_scope)
    return selected


def train_on_dataset(
    dataset: LabeledDataset, spec: PipelineSpec, params: DetectorParams, seed: int, jobs: int = 1
) -> ModelArtifact:
    features = pipeline_features(dataset, spec)
    return Pipeline(spec, params).train(features.matrix(), dataset.labels, list(features.columns), seed, jobs)


def score_dataset(model: ModelArtifact, dataset: LabeledDataset) -> np.ndarray:
    """Score a dataset by the model's training feature names"""
    names = model.feature_names
    return score_model(model, dataset.matrix(names), names)


# ============================================
# COMPARISON
# ============================================

COMPARISON_COLUMNS = [
    "approach",
    "auc_roc",
    "f1",
    "f1_drop_pct",
    "average_precision",
    "precision",
    "recall",
    "threshold",
    "etp_detected",
    "etp_total",
    "etp_percent",
    "ttd_mean",
]


def f1_drop(reference: float, f1: float) -> float:
    """Percent F1 lost against the reference row, rounded to an integer"""
    if reference is None or f1 is None or not reference > 0:
        return math.nan
    return float(round(100.0 * (reference - f1) / reference))


def _evaluate_spec(
    spec: PipelineSpec,
    train: LabeledDataset,
    validation: Optional[LabeledDataset],
    test: LabeledDataset,
    params: DetectorParams,
    evaluation: EvaluationParams,
    seed: int,
) -> dict:
    model = train_on_dataset(train, spec, params, seed, jobs=1)
    scores = score_dataset(model, test)
    f1_threshold = None
    if validation is not None:
        f1_threshold = fit_f1_threshold(score_dataset(model, validation), validation.labels)
    report = assemble_report(
        scores,
        test.labels,
        label_runs(test.labels),
        threshold_rule=evaluation.threshold_rule,
        quantile_threshold=quantile_threshold(model, evaluation.expected_rate),
        f1_threshold=f1_threshold,
        step_seconds=test.frame.step_seconds,
        model_kind=spec.name,
    )
    return {
        "approach": spec.name,
        "auc_roc": report.auc_roc,
        "f1": report.f1,
        "average_precision": report.average_precision,
        "precision": report.precision,
        "recall": report.recall,
        "threshold": report.threshold,
        "etp_detected": report.etp_detected,
        "etp_total": report.etp_total,
        "etp_percent": report.etp_percent,
        "ttd_mean": report.ttd_mean,
    }


def run_comparison(
    dataset: LabeledDataset,
    specs: Sequence[PipelineSpec],
    params: Optional[DetectorParams] = None,
    evaluation: Optional[EvaluationParams] = None,
    seed: int = 0,
    jobs: int = 1,
) -> pd.DataFrame:
    """
    Train and evaluate every spec on the same chronological split. τ* is
    fitted on the validation tail of the training rows, which no model sees.

    F1 drop is measured against the first spec.
    """
    if not specs:
        raise RejectedInput("comparison needs at least one pipeline")
    params = params or DetectorParams()
    evaluation = evaluation or EvaluationParams()
    train, validation, test = holdout_split(dataset, evaluation.train_fraction, evaluation.validation_fraction)
    held_out = validation.n_rows if validation is not None else 0
    logger.info(
        f"🔎 Comparing {len(specs)} pipelines on {train.n_rows} train / {held_out} validation / {test.n_rows} test rows"
    )

    rows = Parallel(n_jobs=jobs)(
        delayed(_evaluate_spec)(spec, train, validation, test, params, evaluation, seed) for spec in specs
    )
    reference = rows[0]["f1"]
    for row in rows:
        row["f1_drop_pct"] = f1_drop(reference, row["f1"])
    return pd.DataFrame(rows, columns=COMPARISON_COLUMNS)


def write_comparison(
    table: pd.DataFrame, directory: Union[str, Path], formats: Sequence[str] = ("json", "csv")
) -> List[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    if "csv" in formats:
        path = directory / "comparison.csv"
        table.to_csv(path, index=False)
        written.append(path)
    if "json" in formats:
        records = table.astype(object).where(table.notna(), None).to_dict(orient="records")
        written.append(
            write_json(
                directory / "comparison.json",
                {"format": "segwatch-comparison", "schema_version": SCHEMA_VERSION, "rows": records},
            )
        )
    return written


__all__ = [
    "DetectorParams",
    "PipelineSpec",
    "NAMED_PIPELINES",
    "DEFAULT_COMPARISON",
    "resolve_spec",
    "train_detector",
    "score_model",
    "Pipeline",
    "build_pipeline",
    "pipeline_features",
    "train_on_dataset",
    "score_dataset",
    "train_ensemble_rf_gbt",
    "f1_drop",
    "run_comparison",
    "write_comparison",
]
