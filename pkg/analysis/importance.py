"""
Feature importance
Global mean decrease in impurity and permutation importance within segments
"""

from fnmatch import fnmatchcase
from pathlib import Path
from typing import Callable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from loguru import logger
from pydantic import BaseModel, Field

from analysis.evaluation import roc_auc
from core.errors import RejectedInput
from core.models import FeatureOrigin
from detectors.artifact import ModelArtifact, ModelKind
from detectors.hybrid import score_model
from detectors.trees import forest_trees

IMPORTANCE_COLUMNS = ["scope", "feature", "importance", "stderr", "repetitions", "metric"]

DEFAULT_CATEGORIES: List[Tuple[str, str]] = [
    ("*_segment", "segmented variables"),
    ("*_score_pre_cp", "derived indicators"),
    ("*_dist_last_cp", "derived indicators"),
    ("*_cp_freq", "derived indicators"),
    ("*_delta_f", "derived indicators"),
    ("*_subcluster", "derived indicators"),
    ("*fficiency*", "system efficiency"),
    ("*.pv", "raw process variables"),
]

ORIGIN_CATEGORIES = {
    FeatureOrigin.RAW: "raw process variables",
    FeatureOrigin.SEGMENT: "segmented variables",
    FeatureOrigin.CP_FEATURE: "derived indicators",
    FeatureOrigin.CLUSTER: "derived indicators",
    FeatureOrigin.DELTA_F: "derived indicators",
}

Permuter = Callable[[np.random.Generator, int], np.ndarray]


class ImportanceParams(BaseModel):
    repetitions: int = Field(default=5, ge=1)
    top_k: int = Field(default=10, ge=1)
    accuracy_fallback: bool = True
    segment_channel: Optional[str] = None  # default: the first channel with a segment map


# ============================================
# MDI
# ============================================

def mdi_importance(model: ModelArtifact) -> pd.DataFrame:
    """
    Per-feature impurity decrease weighted by node sample fraction,
    averaged over trees and normalized to sum 1. The stderr column is the
    across-tree spread of the same quantity.
    """
    if model.kind != ModelKind.RF:
        raise RejectedInput(f"MDI importance needs a random forest, got {model.kind.value}")
    names = model.feature_names
    trees = forest_trees(model)
    if not trees:
        raise RejectedInput("random forest has no trees")

    per_tree = np.zeros((len(trees), len(names)))
    for t, tree in enumerate(trees):
        split = tree.feature >= 0
        if tree.weight[0] > 0:
            per_tree[t] = np.bincount(tree.feature[split], weights=tree.gain[split], minlength=len(names)) / tree.weight[0]

    total = per_tree.mean(axis=0).sum()
    if total <= 0:
        logger.warning("⚠️ Forest has no informative splits; MDI importances are all 0")
        per_tree[:] = 0.0
    else:
        per_tree /= total
    importance = per_tree.mean(axis=0)
    stderr = per_tree.std(axis=0, ddof=1) / np.sqrt(len(trees)) if len(trees) > 1 else np.full(len(names), np.nan)

    table = pd.DataFrame(
        {
            "scope": "global",
            "feature": names,
            "importance": importance,
            "stderr": stderr,
            "repetitions": len(trees),
            "metric": "mdi",
        },
        columns=IMPORTANCE_COLUMNS,
    )
    return table.sort_values(["importance", "feature"], ascending=[False, True], ignore_index=True)


# ============================================
# PERMUTATION BY SEGMENT
# ============================================

def _accuracy(scores: np.ndarray, labels: np.ndarray, threshold: float) -> float:
    return float(np.mean((scores >= threshold) == labels))


def _default_permute(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.permutation(n)


def _segment_importance(
    model: ModelArtifact,
    X: np.ndarray,
    y: np.ndarray,
    columns: Sequence[str],
    segment: int,
    features: Sequence[int],
    repetitions: int,
    seed: int,
    metric: str,
    threshold: float,
    permute: Permuter,
) -> List[dict]:
    def measure(Xs: np.ndarray) -> float:
        scores = score_model(model, Xs, columns)
        return roc_auc(scores, y) if metric == "auc" else _accuracy(scores, y, threshold)

    baseline = measure(X)
    rows = []
    for f in features:
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(int(segment), int(f))))
        drops = np.empty(repetitions)
        for r in range(repetitions):
            Xp = X.copy()
            Xp[:, f] = X[permute(rng, X.shape[0]), f]
            drops[r] = baseline - measure(Xp)
        rows.append(
            {
                "scope": str(segment),
                "feature": columns[f],
                "importance": float(drops.mean()),
                "stderr": float(drops.std(ddof=1) / np.sqrt(repetitions)) if repetitions > 1 else np.nan,
                "repetitions": repetitions,
                "metric": metric,
            }
        )
    return rows


def permutation_importance_by_segment(
    model: ModelArtifact,
    X: np.ndarray,
    y: np.ndarray,
    segment_ids: np.ndarray,
    columns: Optional[Sequence[str]] = None,
    repetitions: int = 5,
    seed: int = 0,
    accuracy_fallback: bool = False,
    threshold: float = 0.5,
    jobs: int = 1,
    permute: Optional[Permuter] = None,
) -> pd.DataFrame:
    """
    Metric drop after shuffling one feature within one segment's rows.

    Only the segment's own rows are scored, so a permutation never touches
    another segment. Segments holding a single class are skipped, or scored
    by accuracy at `threshold` when `accuracy_fallback` is set (metric column
    "accuracy"). Every (segment, feature) cell draws from its own seed.

    Args:
        model: Any scoring model
        X: Feature matrix in `columns` order (training order when None)
        y: Boolean labels
        segment_ids: Segment id per row
        repetitions: Shuffles per cell
        permute: Test hook returning a row permutation for (rng, n)
    """
    if repetitions < 1:
        raise RejectedInput(f"repetitions must be >= 1, got {repetitions}")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(bool)
    segment_ids = np.asarray(segment_ids)
    if not (X.shape[0] == y.size == segment_ids.size):
        raise RejectedInput("X, labels and segment ids differ in length")
    columns = list(columns) if columns is not None else model.feature_names
    permute = permute or _default_permute
    features = list(range(X.shape[1]))

    tasks = []
    skipped = []
    for segment in np.unique(segment_ids):
        rows = np.flatnonzero(segment_ids == segment)
        y_s = y[rows]
        if y_s.all() or not y_s.any():
            if not accuracy_fallback:
                skipped.append(int(segment))
                continue
            metric = "accuracy"
        else:
            metric = "auc"
        tasks.append((int(segment), rows, metric))
    if skipped:
        logger.warning(f"⚠️ Skipped {len(skipped)} single-class segments for permutation importance: {skipped[:10]}")

    results = Parallel(n_jobs=jobs)(
        delayed(_segment_importance)(
            model, X[rows], y[rows], columns, segment, features, repetitions, seed, metric, threshold, permute
        )
        for segment, rows, metric in tasks
    )
    table = pd.DataFrame([row for rows in results for row in rows], columns=IMPORTANCE_COLUMNS)
    table.attrs["skipped_segments"] = skipped
    logger.info(f"Permutation importance over {len(tasks)} segments x {len(features)} features, R={repetitions}")
    return table


# ============================================
# SUMMARIES
# ============================================

def categorize(
    feature: str,
    categories: Sequence[Tuple[str, str]] = DEFAULT_CATEGORIES,
    origins: Optional[Mapping[str, FeatureOrigin]] = None,
) -> Optional[str]:
    for pattern, category in categories:
        if fnmatchcase(feature, pattern):
            return category
    if origins and feature in origins:
        return ORIGIN_CATEGORIES.get(origins[feature])
    return None


def category_summary(
    table: pd.DataFrame,
    categories: Sequence[Tuple[str, str]] = DEFAULT_CATEGORIES,
    origins: Optional[Mapping[str, FeatureOrigin]] = None,
) -> pd.DataFrame:
    """
    Category x {global, segment-level} importance, each column summing to 1.

    Global rows contribute their importance; segment rows contribute the
    positive part of theirs. Features matching no pattern fall back to their
    origin tag, else to `other` with a warning.
    """
    labels = []
    other = set()
    for feature in table["feature"]:
        category = categorize(feature, categories, origins)
        if category is None:
            other.add(feature)
            category = "other"
        labels.append(category)
    if other:
        logger.warning(f"⚠️ {len(other)} features match no category; counted as 'other': {sorted(other)[:5]}")

    frame = table.assign(category=labels)
    is_global = frame["scope"] == "global"
    columns = {
        "global": frame[is_global].groupby("category")["importance"].sum(),
        "segment-level": frame[~is_global].assign(importance=lambda d: d["importance"].clip(lower=0))
        .groupby("category")["importance"]
        .sum(),
    }
    order = list(dict.fromkeys([c for _, c in categories] + sorted(set(labels))))
    summary = pd.DataFrame(columns).reindex(order).fillna(0.0).astype(float)
    summary = summary[(summary > 0).any(axis=1) | summary.index.isin(set(labels))]
    totals = summary.sum(axis=0)
    summary = summary.div(totals.where(totals > 0, 1.0), axis=1)
    summary.index.name = "category"
    return summary


def top_k(table: pd.DataFrame, k: int = 10) -> pd.DataFrame:
    """Two-column ranking of the global rows"""
    global_rows = table[table["scope"] == "global"]
    ranked = global_rows.sort_values(["importance", "feature"], ascending=[False, True])
    return ranked[["feature", "importance"]].head(k).reset_index(drop=True)


def write_importance(
    tables: Mapping[str, pd.DataFrame], directory: Union[str, Path]
) -> List[Path]:
    """Write each named table as `<name>.csv`"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name, table in tables.items():
        path = directory / f"{name}.csv"
        table.to_csv(path, index=table.index.name is not None)
        written.append(path)
    return written


__all__ = [
    "IMPORTANCE_COLUMNS",
    "DEFAULT_CATEGORIES",
    "ImportanceParams",
    "mdi_importance",
    "permutation_importance_by_segment",
    "categorize",
    "category_summary",
    "top_k",
    "write_importance",
]
