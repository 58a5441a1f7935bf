"""
PCA reconstruction-error detector
"""

from typing import Optional, Sequence

import numpy as np
from loguru import logger
from pydantic import BaseModel, Field

from core.errors import RejectedInput
from detectors.artifact import ModelArtifact, ModelKind, training_metadata


class PCAParams(BaseModel):
    variance_keep: float = Field(default=0.95, gt=0, le=1)


def fit_pca(
    X: np.ndarray,
    params: Optional[PCAParams] = None,
    feature_names: Optional[Sequence[str]] = None,
    seed: Optional[int] = None,
) -> ModelArtifact:
    """
    Standardize with training moments and keep the smallest number of
    principal axes whose cumulative explained variance reaches
    `variance_keep`. Zero-variance columns are dropped with a warning.
    """
    params = params or PCAParams()
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    n, d = X.shape
    names = list(feature_names) if feature_names is not None else [f"x{i}" for i in range(d)]
    if n < 2:
        raise RejectedInput(f"PCA needs at least 2 training rows, got {n}")

    mean = X.mean(axis=0)
    std = X.std(axis=0)
    used = std > 1e-12
    if not used.all():
        dropped = [names[i] for i in np.flatnonzero(~used)]
        logger.warning(f"⚠️ PCA drops {len(dropped)} zero-variance columns: {dropped[:5]}")
    if not used.any():
        raise RejectedInput("every PCA input column has zero variance")

    Z = (X[:, used] - mean[used]) / std[used]
    eigvals, eigvecs = np.linalg.eigh(np.cov(Z, rowvar=False).reshape(int(used.sum()), -1))
    order = np.argsort(eigvals)[::-1]
    eigvals = np.clip(eigvals[order], 0.0, None)
    eigvecs = eigvecs[:, order]
    ratio = np.cumsum(eigvals) / eigvals.sum()
    k = int(np.searchsorted(ratio, params.variance_keep - 1e-12) + 1)
    k = min(k, eigvals.size)

    model = ModelArtifact(
        kind=ModelKind.PCA,
        params=params.model_dump(),
        metadata={},
        payload={
            "mean": mean,
            "std": std,
            "used": used,
            "components": eigvecs[:, :k],
            "explained_variance_ratio": eigvals[:k] / eigvals.sum(),
        },
    )
    model.metadata = training_metadata(names, seed, score_pca_spe(model, X), n_components=k)
    logger.info(f"PCA: {k} of {eigvals.size} components explain {ratio[k - 1]:.4f} of the variance")
    return model


def _standardize(model: ModelArtifact, X: np.ndarray) -> np.ndarray:
    used = model.payload["used"].astype(bool)
    return (X[:, used] - model.payload["mean"][used]) / model.payload["std"][used]


def transform_pca(model: ModelArtifact, X: np.ndarray, columns: Optional[Sequence[str]] = None) -> np.ndarray:
    """Projection onto the kept components"""
    X = model.align(X, columns) if model.metadata else np.asarray(X, dtype=np.float64)
    return _standardize(model, X) @ model.payload["components"]


def score_pca_spe(model: ModelArtifact, X: np.ndarray, columns: Optional[Sequence[str]] = None) -> np.ndarray:
    """Squared prediction error ‖z - P Pᵀ z‖² in standardized space"""
    X = model.align(X, columns) if model.metadata else np.asarray(X, dtype=np.float64)
    Z = _standardize(model, X)
    P = model.payload["components"]
    residual = Z - (Z @ P) @ P.T
    return np.einsum("ij,ij->i", residual, residual)


__all__ = ["PCAParams", "fit_pca", "transform_pca", "score_pca_spe"]
