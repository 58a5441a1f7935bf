"""
K-Means distance detector
"""

from typing import Optional, Sequence

import numpy as np
from loguru import logger
from pydantic import BaseModel, Field
from scipy.spatial.distance import cdist

from analysis.clustering import kmeans_fit
from detectors.artifact import ModelArtifact, ModelKind, training_metadata


class KMeansDetectorParams(BaseModel):
    k: int = Field(default=8, ge=1)
    max_iter: int = Field(default=100, ge=1)


def train_kmeans_detector(
    X: np.ndarray,
    params: Optional[KMeansDetectorParams] = None,
    feature_names: Optional[Sequence[str]] = None,
    seed: int = 0,
) -> ModelArtifact:
    params = params or KMeansDetectorParams()
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    k = min(params.k, np.unique(X, axis=0).shape[0])
    fit = kmeans_fit(X, k, seed, params.max_iter)
    model = ModelArtifact(
        kind=ModelKind.KMEANS_DET,
        params={**params.model_dump(), "k": k},
        metadata={},
        payload={"centroids": fit.centroids},
    )
    names = list(feature_names) if feature_names is not None else [f"x{i}" for i in range(X.shape[1])]
    model.metadata = training_metadata(names, seed, score_kmeans_distance(model, X))
    logger.info(f"K-Means detector: {k} centroids, objective {fit.objective[-1]:.6g}")
    return model


def score_kmeans_distance(model: ModelArtifact, X: np.ndarray, columns: Optional[Sequence[str]] = None) -> np.ndarray:
    """Euclidean distance to the nearest training centroid"""
    X = model.align(X, columns) if model.metadata else np.asarray(X, dtype=np.float64)
    return cdist(X, model.payload["centroids"]).min(axis=1)


__all__ = ["KMeansDetectorParams", "train_kmeans_detector", "score_kmeans_distance"]
