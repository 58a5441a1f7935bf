"""
Change point statistical features
Five per-row statistics per channel derived from outlier scores and change points
"""

from fnmatch import fnmatchcase
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np
from loguru import logger
from pydantic import BaseModel, Field

from analysis.changepoint import ChannelChangepoints
from core.errors import RejectedInput
from core.models import FeatureOrigin, LabeledDataset

FEATURE_NAMES = (
    "mean_score_pre_cp",
    "dist_last_cp",
    "max_score_pre_cp",
    "std_score_pre_cp",
    "cp_freq",
)
TOP3 = ("*_mean_score_pre_cp", "*_std_score_pre_cp", "*_max_score_pre_cp")


class CPFeatureParams(BaseModel):
    window_rows: Optional[int] = Field(default=None, ge=1)  # cp_freq window, default one day
    lookback: Optional[int] = Field(default=None, ge=1)  # fixed pre-CP window instead of the segment
    keep: List[str] = Field(default_factory=list)


def default_window(step_seconds: float) -> int:
    """One day of rows"""
    return max(1, int(round(86400.0 / step_seconds)))


def compute_cp_features(
    scores: np.ndarray,
    cps: Sequence[int],
    window: int,
    lookback: Optional[int] = None,
) -> Dict[str, np.ndarray]:
    """
    Per-row change point features.

    With c(t) the latest change point <= t and p(t) the one before it (0 when
    absent), mean/max/std summarize scores[p(t):c(t)]. In lookback mode the
    window is the `lookback` rows before c(t) instead. Before the first change
    point every statistic is 0 and dist_last_cp = t.

    Args:
        scores: Outlier scores aligned with the rows
        cps: Change point row indices (strictly increasing)
        window: cp_freq counts change points in (t - window, t]
        lookback: Optional fixed pre-CP window length

    Returns:
        Dict of feature name -> vector with one value per row
    """
    if window <= 0:
        raise RejectedInput(f"cp_freq window must be positive, got {window}")
    scores = np.asarray(scores, dtype=np.float64)
    cps = np.asarray(cps, dtype=np.int64)
    n = scores.size
    rows = np.arange(n)

    # statistics per change point, broadcast through c(t)
    m = cps.size
    seg_mean = np.zeros(m + 1)
    seg_max = np.zeros(m + 1)
    seg_std = np.zeros(m + 1)
    for i, c in enumerate(cps):
        lo = max(0, c - lookback) if lookback else (cps[i - 1] if i > 0 else 0)
        window_scores = scores[lo:c]
        if window_scores.size:
            seg_mean[i + 1] = window_scores.mean()
            seg_max[i + 1] = window_scores.max()
            seg_std[i + 1] = window_scores.std(ddof=1) if window_scores.size > 1 else 0.0

    latest = np.searchsorted(cps, rows, side="right")  # 0 = before first CP, else 1 + index of c(t)
    last_cp = np.where(latest > 0, cps[np.maximum(latest - 1, 0)] if m else 0, 0)
    dist = np.where(latest > 0, rows - last_cp, rows)

    upto = np.searchsorted(cps, rows, side="right")
    before = np.searchsorted(cps, rows - window, side="right")
    return {
        "mean_score_pre_cp": seg_mean[latest],
        "dist_last_cp": dist.astype(np.float64),
        "max_score_pre_cp": seg_max[latest],
        "std_score_pre_cp": seg_std[latest],
        "cp_freq": (upto - before).astype(np.float64),
    }


def add_cp_features(
    dataset: LabeledDataset,
    detections: Mapping[str, ChannelChangepoints],
    window: Optional[int] = None,
    lookback: Optional[int] = None,
) -> LabeledDataset:
    """Append `<channel>_<feature>` columns for every detected channel"""
    window = window or default_window(dataset.frame.step_seconds)
    columns: Dict[str, np.ndarray] = {}
    for channel, result in detections.items():
        if len(result.scores) != dataset.n_rows:
            raise RejectedInput(
                f"scores for '{channel}' have {len(result.scores)} rows, dataset has {dataset.n_rows}",
                column=channel,
            )
        features = compute_cp_features(result.scores.outlier_scores, result.cps.indices, window, lookback)
        for name in FEATURE_NAMES:
            columns[f"{channel}_{name}"] = features[name]
    logger.info(f"Added {len(columns)} change point feature columns (cp_freq window {window} rows)")
    return dataset.with_columns(columns, FeatureOrigin.CP_FEATURE, flags={"cp_freq_window": window})


def select_features(
    dataset: LabeledDataset,
    keep: Iterable[str],
    scope: Optional[Iterable[FeatureOrigin]] = None,
) -> LabeledDataset:
    """
    Keep the columns matching any glob pattern.

    Columns whose origin lies outside `scope` are never filtered; with no
    scope every column is subject to the patterns.
    """
    patterns = list(keep)
    scope = set(scope) if scope is not None else None
    kept: List[str] = []
    matched = 0
    for name, origin in dataset.feature_columns:
        if scope is not None and origin not in scope:
            kept.append(name)
        elif any(fnmatchcase(name, p) for p in patterns):
            kept.append(name)
            matched += 1
    if not matched:
        raise RejectedInput(f"no column matches {patterns}", patterns=patterns)
    logger.debug(f"Selected {matched} columns by {patterns}")
    return dataset.select(kept)


__all__ = [
    "FEATURE_NAMES",
    "TOP3",
    "CPFeatureParams",
    "default_window",
    "compute_cp_features",
    "add_cp_features",
    "select_features",
]
