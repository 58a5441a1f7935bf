"""
Model artifacts and their versioned JSON container
"""

from dataclasses import dataclass, field
from enum import Enum as PyEnum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
from loguru import logger

from core.errors import RejectedInput
from core.io import SCHEMA_VERSION, read_versioned_json, write_json

MODEL_FORMAT = "segwatch-model"
QUANTILE_LEVELS = np.linspace(0.0, 1.0, 1001)


class ModelKind(str, PyEnum):
    RF = "rf"
    GBT = "gbt"
    IFOREST = "iforest"
    OCSVM = "ocsvm"
    PCA = "pca"
    KMEANS_DET = "kmeans-det"
    ENSEMBLE = "ensemble"
    PIPELINE = "pipeline"


SUPERVISED = {ModelKind.RF, ModelKind.GBT, ModelKind.ENSEMBLE}


@dataclass
class ModelArtifact:
    """Trained model: kind, hyperparameters, training metadata and numeric payload"""

    kind: ModelKind
    params: Dict[str, Any]
    metadata: Dict[str, Any]
    payload: Dict[str, Any] = field(default_factory=dict)

    @property
    def feature_names(self) -> List[str]:
        return list(self.metadata.get("feature_names", []))

    def align(self, X: np.ndarray, columns: Optional[Sequence[str]] = None) -> np.ndarray:
        """
        Reorder X's columns into training order.

        Without column names X must already have the training width.
        """
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        names = self.feature_names
        if columns is None:
            if X.shape[1] != len(names):
                raise RejectedInput(f"{self.kind.value} model expects {len(names)} columns, got {X.shape[1]}")
            return X
        columns = list(columns)
        missing = [c for c in names if c not in columns]
        extra = [c for c in columns if c not in names]
        if missing or extra or len(columns) != X.shape[1]:
            raise RejectedInput(
                f"columns do not match the {self.kind.value} model's training features",
                missing=missing,
                unexpected=extra,
            )
        index = {c: i for i, c in enumerate(columns)}
        return X[:, [index[c] for c in names]]


def training_metadata(
    feature_names: Sequence[str], seed: Optional[int], train_scores: np.ndarray, **extra: Any
) -> Dict[str, Any]:
    """Feature list, seed and the training-score quantile grid"""
    return {
        "feature_names": list(feature_names),
        "seed": seed,
        "n_train": int(len(train_scores)),
        "train_quantiles": np.quantile(train_scores, QUANTILE_LEVELS) if len(train_scores) else np.zeros(0),
        **extra,
    }


def quantile_threshold(model: ModelArtifact, expected_rate: float) -> float:
    """Training-score quantile at 1 - expected anomaly rate"""
    if not 0 <= expected_rate <= 1:
        raise RejectedInput(f"expected anomaly rate must be in [0, 1], got {expected_rate}")
    values = np.asarray(model.metadata.get("train_quantiles", []), dtype=np.float64)
    if not values.size:
        raise RejectedInput(f"{model.kind.value} model carries no training-score quantiles")
    return float(np.interp(1.0 - expected_rate, QUANTILE_LEVELS, values))


# ============================================
# JSON CODEC
# ============================================

def _encode_float(x: float) -> Union[float, str]:
    return x if np.isfinite(x) else repr(float(x))


def _encode(value: Any) -> Any:
    if isinstance(value, ModelArtifact):
        return {"__artifact__": _artifact_body(value)}
    if isinstance(value, np.ndarray):
        flat = value.ravel().tolist()
        if value.dtype.kind == "f":
            flat = [_encode_float(x) for x in flat]
        return {"__ndarray__": {"dtype": value.dtype.str, "shape": list(value.shape), "data": flat}}
    if isinstance(value, dict):
        return {str(k): _encode(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_encode(v) for v in value]
    if isinstance(value, PyEnum):
        return value.value
    if isinstance(value, (np.floating, float)):
        return {"__float__": _encode_float(float(value))} if not np.isfinite(value) else float(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def _decode_float(x: Union[float, str]) -> float:
    return float(x)


def _decode(value: Any) -> Any:
    if isinstance(value, dict):
        if "__ndarray__" in value:
            spec = value["__ndarray__"]
            dtype = np.dtype(spec["dtype"])
            data = [_decode_float(x) for x in spec["data"]] if dtype.kind == "f" else spec["data"]
            return np.array(data, dtype=dtype).reshape(spec["shape"])
        if "__artifact__" in value:
            return _artifact_from_body(value["__artifact__"])
        if "__float__" in value:
            return float(value["__float__"])
        return {k: _decode(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_decode(v) for v in value]
    return value


def _artifact_body(model: ModelArtifact) -> Dict[str, Any]:
    return {
        "kind": model.kind.value,
        "params": _encode(model.params),
        "metadata": _encode(model.metadata),
        "payload": _encode(model.payload),
    }


def _artifact_from_body(body: Dict[str, Any]) -> ModelArtifact:
    return ModelArtifact(
        kind=ModelKind(body["kind"]),
        params=_decode(body["params"]),
        metadata=_decode(body["metadata"]),
        payload=_decode(body["payload"]),
    )


def artifact_to_dict(model: ModelArtifact) -> Dict[str, Any]:
    return {"format": MODEL_FORMAT, "schema_version": SCHEMA_VERSION, **_artifact_body(model)}


def save_artifact(model: ModelArtifact, path: Union[str, Path]) -> Path:
    path = write_json(path, artifact_to_dict(model))
    logger.info(f"💾 Saved {model.kind.value} model to {path}")
    return path


def load_artifact(path: Union[str, Path]) -> ModelArtifact:
    return _artifact_from_body(read_versioned_json(path, MODEL_FORMAT))


__all__ = [
    "ModelKind",
    "SUPERVISED",
    "ModelArtifact",
    "QUANTILE_LEVELS",
    "training_metadata",
    "quantile_threshold",
    "artifact_to_dict",
    "save_artifact",
    "load_artifact",
]
