"""
Histogram CART, random forest, gradient-boosted trees and the RF+GBT ensemble
"""

from dataclasses import dataclass
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from loguru import logger
from pydantic import BaseModel, Field
from scipy.special import expit

from core.errors import RejectedInput
from detectors.artifact import ModelArtifact, ModelKind, training_metadata


class ForestParams(BaseModel):
    n_trees: int = Field(default=100, ge=0)
    max_depth: int = Field(default=8, ge=1)
    max_features: Optional[int] = Field(default=None, ge=1)  # default ceil(sqrt(d))
    min_leaf: int = Field(default=1, ge=1)
    class_weighting: Literal["balanced", "none"] = "balanced"
    bootstrap: bool = True
    max_bins: int = Field(default=256, ge=2)


class BoostingParams(BaseModel):
    n_rounds: int = Field(default=100, ge=0)
    learning_rate: float = Field(default=0.1, ge=0)
    max_depth: int = Field(default=3, ge=1)
    min_leaf: int = Field(default=1, ge=1)
    subsample: float = Field(default=1.0, gt=0, le=1)
    reg_lambda: float = Field(default=1.0, ge=0)
    max_bins: int = Field(default=256, ge=2)


# ============================================
# BINNING
# ============================================

def fit_bins(X: np.ndarray, max_bins: int) -> List[np.ndarray]:
    """Candidate thresholds per feature: midpoints of distinct values, or quantiles when there are many"""
    thresholds = []
    for col in X.T:
        values = np.unique(col[np.isfinite(col)])
        if values.size <= max_bins:
            thresholds.append((values[:-1] + values[1:]) / 2.0)
        else:
            q = np.quantile(values, np.linspace(0.0, 1.0, max_bins + 1)[1:-1])
            thresholds.append(np.unique(q))
    return thresholds


def bin_codes(X: np.ndarray, thresholds: Sequence[np.ndarray]) -> np.ndarray:
    """code <= b  <=>  x <= thresholds[b]"""
    codes = np.empty(X.shape, dtype=np.int64)
    for j, thr in enumerate(thresholds):
        codes[:, j] = np.searchsorted(thr, X[:, j], side="left")
    return codes


# ============================================
# TREE
# ============================================

@dataclass
class Tree:
    """Flat binary tree; feature == -1 marks a leaf"""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    weight: np.ndarray  # node sample weight (or hessian sum)
    gain: np.ndarray  # impurity decrease of the split, 0 at leaves

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            feat = self.feature[node]
            idx = np.flatnonzero(feat >= 0)
            if not idx.size:
                return node
            here = node[idx]
            go_left = X[idx, feat[idx]] <= self.threshold[here]
            node[idx] = np.where(go_left, self.left[here], self.right[here])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_payload(self) -> Dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in ("feature", "threshold", "left", "right", "value", "weight", "gain")}

    @classmethod
    def from_payload(cls, payload: Dict[str, Any]) -> "Tree":
        return cls(**{k: np.asarray(v) for k, v in payload.items()})


def grow_tree(
    codes: np.ndarray,
    thresholds: Sequence[np.ndarray],
    a: np.ndarray,
    b: np.ndarray,
    rows: np.ndarray,
    criterion: Literal["gini", "newton"],
    max_depth: int,
    min_leaf: int,
    max_features: int,
    rng: np.random.Generator,
    reg_lambda: float = 1.0,
) -> Tree:
    """
    Grow one tree on histogram codes.

    gini: a = sample weight, b = weighted positives; leaf value is the
    weighted positive fraction. newton: a = hessian, b = gradient; leaf value
    is -G / (H + lambda).
    """
    n_features = codes.shape[1]
    feature: List[int] = []
    threshold: List[float] = []
    left: List[int] = []
    right: List[int] = []
    value: List[float] = []
    weight: List[float] = []
    gain: List[float] = []

    def leaf_value(A: float, B: float) -> float:
        if criterion == "gini":
            return B / A if A > 0 else 0.0
        return -B / (A + reg_lambda)

    def score(A, B):
        if criterion == "gini":
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.where(A > 0, 2.0 * B * (A - B) / np.where(A > 0, A, 1.0), 0.0)
        return B * B / (A + reg_lambda)

    def new_node(A: float, B: float) -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(leaf_value(A, B))
        weight.append(A)
        gain.append(0.0)
        return len(feature) - 1

    root = new_node(float(a[rows].sum()), float(b[rows].sum()))
    stack = [(root, rows, 0)]
    while stack:
        node, node_rows, depth = stack.pop()
        A, B = weight[node], float(b[node_rows].sum())
        if depth >= max_depth or node_rows.size < 2 * min_leaf:
            continue
        if criterion == "gini" and not 0 < B < A * (1 - 1e-12):
            continue
        candidates = (
            rng.choice(n_features, size=max_features, replace=False)
            if max_features < n_features
            else np.arange(n_features)
        )
        parent_score = float(score(np.array(A), np.array(B)))
        # an impure Gini node splits even at zero gain (XOR-shaped data)
        best = (-np.inf if criterion == "gini" else 1e-12, -1, -1)
        for f in candidates:
            n_bins = thresholds[f].size + 1
            if n_bins < 2:
                continue
            c = codes[node_rows, f]
            cnt_l = np.cumsum(np.bincount(c, minlength=n_bins))[:-1]
            A_l = np.cumsum(np.bincount(c, weights=a[node_rows], minlength=n_bins))[:-1]
            B_l = np.cumsum(np.bincount(c, weights=b[node_rows], minlength=n_bins))[:-1]
            A_r, B_r = A - A_l, B - B_l
            valid = (cnt_l >= min_leaf) & (node_rows.size - cnt_l >= min_leaf)
            if criterion == "gini":
                valid &= (A_l > 0) & (A_r > 0)
                gains = parent_score - score(A_l, B_l) - score(A_r, B_r)
            else:
                gains = 0.5 * (score(A_l, B_l) + score(A_r, B_r) - parent_score)
            gains = np.where(valid, gains, -np.inf)
            split = int(np.argmax(gains))
            if np.isfinite(gains[split]) and gains[split] > best[0]:
                best = (float(gains[split]), int(f), split)

        split_gain, f, split = best
        if f < 0:
            continue
        go_left = codes[node_rows, f] <= split
        rows_l, rows_r = node_rows[go_left], node_rows[~go_left]
        feature[node] = f
        threshold[node] = float(thresholds[f][split])
        gain[node] = max(split_gain, 0.0)
        left[node] = new_node(float(a[rows_l].sum()), float(b[rows_l].sum()))
        right[node] = new_node(float(a[rows_r].sum()), float(b[rows_r].sum()))
        stack.append((right[node], rows_r, depth + 1))
        stack.append((left[node], rows_l, depth + 1))

    return Tree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.array(value, dtype=np.float64),
        weight=np.array(weight, dtype=np.float64),
        gain=np.array(gain, dtype=np.float64),
    )


def _check_labels(X: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    y = np.asarray(y).astype(bool)
    if y.shape != (X.shape[0],):
        raise RejectedInput(f"{y.size} labels for {X.shape[0]} rows")
    if y.all() or not y.any():
        raise RejectedInput("training labels contain a single class")
    return X, y


def _names(feature_names: Optional[Sequence[str]], d: int) -> List[str]:
    return list(feature_names) if feature_names is not None else [f"x{i}" for i in range(d)]


# ============================================
# RANDOM FOREST
# ============================================

def _fit_forest_tree(codes, thresholds, y, class_w, params: ForestParams, max_features: int, seed):
    rng = np.random.default_rng(seed)
    n = y.size
    counts = np.bincount(rng.integers(0, n, size=n), minlength=n) if params.bootstrap else np.ones(n)
    w = counts * class_w[y.astype(np.int64)]
    rows = np.flatnonzero(counts > 0)
    return grow_tree(codes, thresholds, w, w * y, rows, "gini", params.max_depth, params.min_leaf, max_features, rng)


def train_random_forest(
    X: np.ndarray,
    y: np.ndarray,
    params: Optional[ForestParams] = None,
    feature_names: Optional[Sequence[str]] = None,
    seed: int = 0,
    jobs: int = 1,
) -> ModelArtifact:
    """
    Bagged Gini CART trees.

    Every tree draws its bootstrap and feature subsets from its own child of
    SeedSequence(seed), so the forest does not depend on the worker count.
    """
    params = params or ForestParams()
    X, y = _check_labels(X, y)
    n, d = X.shape
    max_features = min(d, params.max_features or int(np.ceil(np.sqrt(d))))
    if params.class_weighting == "balanced":
        class_w = np.array([n / (2.0 * (~y).sum()), n / (2.0 * y.sum())])
    else:
        class_w = np.ones(2)

    thresholds = fit_bins(X, params.max_bins)
    codes = bin_codes(X, thresholds)
    children = np.random.SeedSequence(seed).spawn(params.n_trees)
    trees = Parallel(n_jobs=jobs)(
        delayed(_fit_forest_tree)(codes, thresholds, y, class_w, params, max_features, child) for child in children
    )
    model = ModelArtifact(
        kind=ModelKind.RF,
        params={**params.model_dump(), "max_features": max_features},
        metadata={},
        payload={"trees": [t.to_payload() for t in trees]},
    )
    model.metadata = training_metadata(_names(feature_names, d), seed, _forest_proba(model, X), prevalence=float(y.mean()))
    logger.info(f"🌲 Random forest: {len(trees)} trees on {n} rows x {d} features (prevalence {y.mean():.4f})")
    return model


def forest_trees(model: ModelArtifact) -> List[Tree]:
    return [Tree.from_payload(t) for t in model.payload.get("trees", [])]


def _forest_proba(model: ModelArtifact, X: np.ndarray) -> np.ndarray:
    trees = forest_trees(model)
    if not trees:
        raise RejectedInput("random forest has no trees")
    return np.mean([t.predict(X) for t in trees], axis=0)


# ============================================
# GRADIENT BOOSTING
# ============================================

def log_loss_from_margin(y: np.ndarray, margin: np.ndarray) -> float:
    return float(np.mean(np.logaddexp(0.0, margin) - y * margin))


def train_gradient_boosting(
    X: np.ndarray,
    y: np.ndarray,
    params: Optional[BoostingParams] = None,
    feature_names: Optional[Sequence[str]] = None,
    seed: int = 0,
) -> ModelArtifact:
    """
    Newton-boosted regression trees on the logistic loss.

    The margin starts at the log-odds of the training prevalence. Each
    round's shrinkage is halved until the training log-loss does not rise;
    the applied step is stored with the tree.
    """
    params = params or BoostingParams()
    X, y = _check_labels(X, y)
    yf = y.astype(np.float64)
    n, d = X.shape
    prevalence = yf.mean()
    base = float(np.log(prevalence / (1.0 - prevalence)))

    thresholds = fit_bins(X, params.max_bins)
    codes = bin_codes(X, thresholds)
    rng = np.random.default_rng(seed)
    margin = np.full(n, base)
    losses = [log_loss_from_margin(yf, margin)]
    trees, steps = [], []

    for _ in range(params.n_rounds):
        p = expit(margin)
        grad, hess = p - yf, p * (1.0 - p)
        rows = np.arange(n)
        if params.subsample < 1.0:
            rows = np.sort(rng.choice(n, size=max(1, int(round(params.subsample * n))), replace=False))
        tree = grow_tree(
            codes, thresholds, hess, grad, rows, "newton", params.max_depth, params.min_leaf, d, rng, params.reg_lambda
        )
        update = tree.predict(X)
        step = params.learning_rate
        loss = losses[-1]
        for _ in range(40):
            if step == 0.0:
                break
            candidate = log_loss_from_margin(yf, margin + step * update)
            if candidate <= loss:
                loss = candidate
                break
            step /= 2.0
        else:
            step = 0.0
        if step > 0.0:
            margin = margin + step * update
        trees.append(tree)
        steps.append(step)
        losses.append(loss)

    model = ModelArtifact(
        kind=ModelKind.GBT,
        params=params.model_dump(),
        metadata={},
        payload={"base": base, "steps": np.array(steps), "trees": [t.to_payload() for t in trees]},
    )
    model.metadata = training_metadata(
        _names(feature_names, d), seed, expit(margin), prevalence=float(prevalence), train_loss=np.array(losses)
    )
    logger.info(f"🚀 Gradient boosting: {len(trees)} rounds, log-loss {losses[0]:.4f} -> {losses[-1]:.4f}")
    return model


def _boosting_margin(model: ModelArtifact, X: np.ndarray) -> np.ndarray:
    margin = np.full(X.shape[0], float(model.payload["base"]))
    for step, payload in zip(model.payload["steps"], model.payload["trees"]):
        if step:
            margin += step * Tree.from_payload(payload).predict(X)
    return margin


# ============================================
# ENSEMBLE AND PREDICTION
# ============================================

def train_ensemble_rf_gbt(
    X: np.ndarray,
    y: np.ndarray,
    forest: Optional[ForestParams] = None,
    boosting: Optional[BoostingParams] = None,
    weights: Sequence[float] = (1.0, 1.0),
    feature_names: Optional[Sequence[str]] = None,
    seed: int = 0,
    jobs: int = 1,
) -> ModelArtifact:
    """Train RF and GBT on the same rows; proba = weighted mean of the members"""
    if len(weights) != 2 or min(weights) < 0 or sum(weights) <= 0:
        raise RejectedInput(f"ensemble weights must be two non-negative numbers, got {list(weights)}")
    rf_seed, gbt_seed = (int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(2))
    rf = train_random_forest(X, y, forest, feature_names, rf_seed, jobs)
    gbt = train_gradient_boosting(X, y, boosting, feature_names, gbt_seed)
    model = ModelArtifact(
        kind=ModelKind.ENSEMBLE,
        params={"weights": [float(w) for w in weights]},
        metadata={},
        payload={"members": [rf, gbt]},
    )
    X = np.asarray(X, dtype=np.float64).reshape(len(y), -1)
    w = np.asarray(model.params["weights"])
    train_proba = (w[0] * predict_proba(rf, X) + w[1] * predict_proba(gbt, X)) / w.sum()
    model.metadata = training_metadata(rf.feature_names, seed, train_proba)
    return model


def predict_proba(model: ModelArtifact, X: np.ndarray, columns: Optional[Sequence[str]] = None) -> np.ndarray:
    """Anomaly probability in [0, 1] for rf, gbt and ensemble models"""
    X = model.align(X, columns)
    if model.kind == ModelKind.RF:
        proba = _forest_proba(model, X)
    elif model.kind == ModelKind.GBT:
        proba = expit(_boosting_margin(model, X))
    elif model.kind == ModelKind.ENSEMBLE:
        weights = np.asarray(model.params["weights"], dtype=np.float64)
        members = np.array([predict_proba(m, X) for m in model.payload["members"]])
        proba = weights @ members / weights.sum()
    else:
        raise RejectedInput(f"predict_proba does not apply to {model.kind.value} models")
    return np.clip(proba, 0.0, 1.0)


__all__ = [
    "ForestParams",
    "BoostingParams",
    "fit_bins",
    "bin_codes",
    "Tree",
    "grow_tree",
    "train_random_forest",
    "forest_trees",
    "log_loss_from_margin",
    "train_gradient_boosting",
    "train_ensemble_rf_gbt",
    "predict_proba",
]
