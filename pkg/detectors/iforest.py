"""
Isolation forest
"""

from typing import List, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from loguru import logger
from pydantic import BaseModel, Field
from scipy.special import digamma

from detectors.artifact import ModelArtifact, ModelKind, training_metadata
from detectors.trees import Tree

EULER_GAMMA = 0.5772156649015329


class IsolationParams(BaseModel):
    n_trees: int = Field(default=100, ge=1)
    subsample_size: int = Field(default=256, ge=1)


def average_path_length(n) -> np.ndarray:
    """c(n) = 2 H(n-1) - 2 (n-1) / n, the mean unsuccessful-search depth of a BST; 0 for n <= 1"""
    n = np.asarray(n, dtype=np.float64)
    safe = np.maximum(n, 2.0)
    c = 2.0 * (digamma(safe) + EULER_GAMMA) - 2.0 * (safe - 1.0) / safe
    return np.where(n > 1, c, 0.0)


def _isolation_tree(X: np.ndarray, height_limit: int, rng: np.random.Generator) -> Tree:
    """Random axis-aligned splits; leaf value = depth + c(leaf size)"""
    feature: List[int] = []
    threshold: List[float] = []
    left: List[int] = []
    right: List[int] = []
    value: List[float] = []
    weight: List[float] = []

    def new_node(rows: np.ndarray, depth: int) -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(depth + float(average_path_length(rows.size)))
        weight.append(float(rows.size))
        return len(feature) - 1

    stack = [(new_node(np.arange(X.shape[0]), 0), np.arange(X.shape[0]), 0)]
    while stack:
        node, rows, depth = stack.pop()
        if depth >= height_limit or rows.size <= 1:
            continue
        lo, hi = X[rows].min(axis=0), X[rows].max(axis=0)
        spread = np.flatnonzero(hi > lo)
        if not spread.size:
            continue
        f = int(rng.choice(spread))
        split = float(rng.uniform(lo[f], hi[f]))
        go_left = X[rows, f] <= split
        feature[node] = f
        threshold[node] = split
        left[node] = new_node(rows[go_left], depth + 1)
        right[node] = new_node(rows[~go_left], depth + 1)
        stack.append((left[node], rows[go_left], depth + 1))
        stack.append((right[node], rows[~go_left], depth + 1))

    return Tree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.array(value, dtype=np.float64),
        weight=np.array(weight, dtype=np.float64),
        gain=np.zeros(len(feature)),
    )


def _fit_one(X: np.ndarray, size: int, height_limit: int, seed) -> Tree:
    rng = np.random.default_rng(seed)
    rows = rng.choice(X.shape[0], size=size, replace=False)
    return _isolation_tree(X[rows], height_limit, rng)


def train_isolation_forest(
    X: np.ndarray,
    params: Optional[IsolationParams] = None,
    feature_names: Optional[Sequence[str]] = None,
    seed: int = 0,
    jobs: int = 1,
) -> ModelArtifact:
    """
    Train an isolation forest on unlabeled rows.

    A subsample size above the row count is clamped to the row count with a
    warning and recorded as `subsample_clamped` in the metadata.
    """
    params = params or IsolationParams()
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    n, d = X.shape
    size = params.subsample_size
    clamped = size > n
    if clamped:
        logger.warning(f"⚠️ Isolation subsample {size} exceeds {n} training rows; using {n}")
        size = n
    height_limit = int(np.ceil(np.log2(size))) if size > 1 else 0

    children = np.random.SeedSequence(seed).spawn(params.n_trees)
    trees = Parallel(n_jobs=jobs)(delayed(_fit_one)(X, size, height_limit, child) for child in children)
    model = ModelArtifact(
        kind=ModelKind.IFOREST,
        params={**params.model_dump(), "subsample_size": size},
        metadata={},
        payload={"trees": [t.to_payload() for t in trees]},
    )
    names = list(feature_names) if feature_names is not None else [f"x{i}" for i in range(d)]
    model.metadata = training_metadata(names, seed, score_iforest(model, X), subsample_clamped=clamped)
    logger.info(f"🌳 Isolation forest: {params.n_trees} trees, subsample {size}, height limit {height_limit}")
    return model


def path_lengths(model: ModelArtifact, X: np.ndarray) -> np.ndarray:
    """Mean adjusted path length E[h(x)] over the forest"""
    trees = [Tree.from_payload(t) for t in model.payload["trees"]]
    return np.mean([t.predict(X) for t in trees], axis=0)


def score_iforest(model: ModelArtifact, X: np.ndarray, columns: Optional[Sequence[str]] = None) -> np.ndarray:
    """s(x) = 2^(-E[h(x)] / c(subsample)); 0.5 everywhere when c(subsample) = 0"""
    if model.metadata:
        X = model.align(X, columns)
    X = np.asarray(X, dtype=np.float64)
    c = float(average_path_length(model.params["subsample_size"]))
    if c == 0.0:
        return np.full(X.shape[0], 0.5)
    return np.power(2.0, -path_lengths(model, X) / c)


__all__ = [
    "IsolationParams",
    "average_path_length",
    "train_isolation_forest",
    "path_lengths",
    "score_iforest",
]
