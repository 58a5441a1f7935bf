"""
Evaluation metrics and reports
Threshold-free scores, thresholded confusion metrics and early-detection measures
"""

import math
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import pytz
from loguru import logger
from pydantic import BaseModel, Field, field_validator
from scipy.stats import rankdata

from core.errors import RejectedInput, UndefinedMetric
from core.io import SCHEMA_VERSION

Ranges = Sequence[Tuple[int, int]]
ThresholdRule = Literal["f1-optimal", "quantile"]


class EvaluationParams(BaseModel):
    threshold_rule: ThresholdRule = "f1-optimal"
    expected_rate: float = Field(default=0.0156, ge=0, le=1)
    train_fraction: float = Field(default=0.7, gt=0, lt=1)
    # tail of the training rows held out to fit the F1-optimal threshold
    validation_fraction: float = Field(default=0.2, ge=0, lt=1)


def _check(scores: np.ndarray, labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise RejectedInput(f"{scores.size} scores for {labels.size} labels")
    if not np.isfinite(scores).all():
        raise RejectedInput("scores contain NaN or infinite values")
    return scores, labels


# ============================================
# THRESHOLD-FREE
# ============================================

def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney statistic; tied pairs count one half"""
    scores, labels = _check(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("AUC-ROC needs both classes")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """
    Σ (R_i - R_{i-1}) P_i over descending distinct thresholds.

    Tied scores enter as one block.
    """
    scores, labels = _check(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise UndefinedMetric("average precision needs at least one positive")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    block_end = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(y)[block_end]
    predicted = block_end + 1
    precision = tp / predicted
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


# ============================================
# THRESHOLDED
# ============================================

@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int


@dataclass(frozen=True)
class ThresholdMetrics:
    precision: float
    recall: float
    f1: float
    confusion: Confusion


def prf_at_threshold(scores: np.ndarray, labels: np.ndarray, threshold: float) -> ThresholdMetrics:
    """Predict anomalous when score >= threshold"""
    scores, labels = _check(scores, labels)
    pred = scores >= threshold
    tp = int(np.sum(pred & labels))
    fp = int(np.sum(pred & ~labels))
    fn = int(np.sum(~pred & labels))
    tn = labels.size - tp - fp - fn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return ThresholdMetrics(precision, recall, f1, Confusion(tp, fp, tn, fn))


def optimal_f1_threshold(scores: np.ndarray, labels: np.ndarray) -> Tuple[float, float]:
    """
    Scan every distinct score as τ and return (τ*, f1*).

    Ties in F1 go to the smallest τ.
    """
    scores, labels = _check(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == labels.size:
        raise UndefinedMetric("F1-optimal threshold needs both classes")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    block_end = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(y)[block_end]
    predicted = block_end + 1
    f1 = 2.0 * tp / (predicted + n_pos)
    candidates = s[block_end]  # descending
    best = f1.max()
    pick = np.flatnonzero(f1 == best)[-1]
    return float(candidates[pick]), float(best)


def fit_f1_threshold(scores: np.ndarray, labels: np.ndarray) -> Optional[float]:
    """τ* on held-out validation rows, or None when they hold a single class"""
    try:
        return optimal_f1_threshold(scores, labels)[0]
    except UndefinedMetric as e:
        logger.warning(f"⚠️ No F1-optimal threshold from validation rows: {e.message}")
        return None


# ============================================
# EARLY DETECTION
# ============================================

@dataclass(frozen=True)
class ETP:
    detected: int
    total: int

    @property
    def percent(self) -> float:
        return 100.0 * self.detected / self.total if self.total else math.nan


def _ranges(predictions: np.ndarray, ranges: Ranges) -> List[Tuple[int, int]]:
    n = len(predictions)
    for lo, hi in ranges:
        if not 0 <= lo <= hi <= n:
            raise RejectedInput(f"interval rows [{lo}, {hi}) outside [0, {n})")
    return [(int(lo), int(hi)) for lo, hi in ranges]


def label_runs(labels: np.ndarray) -> List[Tuple[int, int]]:
    """Half-open row ranges of consecutive anomalous labels"""
    padded = np.r_[False, np.asarray(labels).astype(bool), False].astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return [(int(lo), int(hi)) for lo, hi in zip(edges[::2], edges[1::2])]


def etp(predictions: np.ndarray, ranges: Ranges) -> ETP:
    """Flagged timesteps over all timesteps inside anomalous intervals"""
    predictions = np.asarray(predictions).astype(bool)
    detected = total = 0
    for lo, hi in _ranges(predictions, ranges):
        total += hi - lo
        detected += int(predictions[lo:hi].sum())
    return ETP(detected=detected, total=total)


def ttd(predictions: np.ndarray, ranges: Ranges) -> float:
    """Mean steps from interval start to its first flag, over detected intervals; NaN if none"""
    predictions = np.asarray(predictions).astype(bool)
    delays = []
    for lo, hi in _ranges(predictions, ranges):
        hits = np.flatnonzero(predictions[lo:hi])
        if hits.size:
            delays.append(int(hits[0]))
    return float(np.mean(delays)) if delays else math.nan


def event_detection_rate(predictions: np.ndarray, ranges: Ranges) -> float:
    """Share of intervals with at least one flag; NaN without intervals"""
    predictions = np.asarray(predictions).astype(bool)
    spans = _ranges(predictions, ranges)
    if not spans:
        return math.nan
    return sum(bool(predictions[lo:hi].any()) for lo, hi in spans) / len(spans)


# ============================================
# REPORT
# ============================================

class EvalReport(BaseModel):
    """Versioned evaluation report; undefined metrics are None (null in JSON)"""

    schema_version: int = SCHEMA_VERSION
    generated_at: str
    model_kind: Optional[str] = None
    n_rows: int
    n_anomalous: int
    auc_roc: Optional[float] = None
    average_precision: Optional[float] = None
    threshold: Optional[float] = None
    threshold_rule: str
    thresholds: Dict[str, Optional[float]] = Field(default_factory=dict)
    precision: Optional[float] = None
    recall: Optional[float] = None
    f1: Optional[float] = None
    confusion: Optional[Dict[str, int]] = None
    etp_detected: int = 0
    etp_total: int = 0
    etp_percent: Optional[float] = None
    ttd_mean: Optional[float] = None
    ttd_seconds: Optional[float] = None
    event_detection_rate: Optional[float] = None
    flags: List[str] = Field(default_factory=list)

    @field_validator(
        "auc_roc",
        "average_precision",
        "threshold",
        "precision",
        "recall",
        "f1",
        "etp_percent",
        "ttd_mean",
        "ttd_seconds",
        "event_detection_rate",
        mode="before",
    )
    @classmethod
    def nan_to_none(cls, v: Any) -> Any:
        if isinstance(v, float) and not math.isfinite(v):
            return None
        return v

    @field_validator("thresholds", mode="before")
    @classmethod
    def nan_thresholds(cls, v: Any) -> Any:
        return {k: (None if isinstance(x, float) and not math.isfinite(x) else x) for k, x in dict(v).items()}


def _guarded(metric, *args, flags: List[str], name: str) -> Optional[float]:
    try:
        return metric(*args)
    except UndefinedMetric as e:
        logger.warning(f"⚠️ {name} undefined: {e.message}")
        flags.append(f"{name}-undefined")
        return None


def assemble_report(
    scores: np.ndarray,
    labels: np.ndarray,
    ranges: Ranges,
    threshold_rule: ThresholdRule = "f1-optimal",
    quantile_threshold: Optional[float] = None,
    f1_threshold: Optional[float] = None,
    step_seconds: Optional[float] = None,
    model_kind: Optional[str] = None,
    generated_at: Optional[datetime] = None,
) -> EvalReport:
    """
    Compute every metric for one scored test period.

    Both thresholds come from outside the test rows: the training-score
    quantile and τ* fitted on validation rows (see `fit_f1_threshold`).
    `threshold_rule` selects the one behind precision, recall, F1, ETP and
    TTD. When it is missing the other rule is used and the substitution is
    flagged.
    """
    scores, labels = _check(scores, labels)
    flags: List[str] = []
    auc = _guarded(roc_auc, scores, labels, flags=flags, name="auc-roc")
    ap = _guarded(average_precision, scores, labels, flags=flags, name="average-precision")

    thresholds = {"f1-optimal": f1_threshold, "quantile": quantile_threshold}
    rule = threshold_rule
    threshold = thresholds.get(rule)
    if threshold is None:
        other = "quantile" if rule == "f1-optimal" else "f1-optimal"
        if thresholds[other] is None:
            raise RejectedInput(f"no usable threshold: '{rule}' and '{other}' are both unavailable")
        logger.warning(f"⚠️ Threshold rule '{rule}' unavailable; using '{other}'")
        flags.append(f"threshold-fallback:{other}")
        rule, threshold = other, thresholds[other]

    at = prf_at_threshold(scores, labels, threshold)
    predictions = scores >= threshold
    coverage = etp(predictions, ranges)
    delay = ttd(predictions, ranges)
    stamp = (generated_at or datetime.now(pytz.UTC)).astimezone(pytz.UTC)

    report = EvalReport(
        generated_at=stamp.strftime("%Y-%m-%dT%H:%M:%SZ"),
        model_kind=model_kind,
        n_rows=int(labels.size),
        n_anomalous=int(labels.sum()),
        auc_roc=auc,
        average_precision=ap,
        threshold=threshold,
        threshold_rule=rule,
        thresholds=thresholds,
        precision=at.precision,
        recall=at.recall,
        f1=at.f1,
        confusion=vars(at.confusion),
        etp_detected=coverage.detected,
        etp_total=coverage.total,
        etp_percent=coverage.percent,
        ttd_mean=delay,
        ttd_seconds=delay * step_seconds if step_seconds else math.nan,
        event_detection_rate=event_detection_rate(predictions, ranges),
        flags=flags,
    )
    logger.info(
        f"🧪 Evaluated {labels.size} rows: AUC {format_metric(report.auc_roc)}, "
        f"F1 {format_metric(report.f1)}, {format_etp(report)}"
    )
    return report


def format_metric(value: Optional[float], digits: int = 4) -> str:
    return "nan" if value is None else f"{value:.{digits}f}"


def format_percent(value: Optional[float]) -> str:
    return "nan" if value is None else f"{value:.2f}%"


def format_etp(report: EvalReport) -> str:
    return f"ETP: {report.etp_detected}/{report.etp_total} ({format_percent(report.etp_percent)})"


def format_report(report: EvalReport) -> str:
    """Text cell in the layout of a results-table entry"""
    lines = [
        f"Model: {report.model_kind or '-'}",
        f"AUC-ROC: {format_metric(report.auc_roc)}",
        f"Avg Precision: {format_metric(report.average_precision)}",
        f"Threshold ({report.threshold_rule}): {format_metric(report.threshold)}",
        f"Precision: {format_metric(report.precision)}  Recall: {format_metric(report.recall)}  "
        f"F1: {format_metric(report.f1)}",
        format_etp(report),
        f"TTD (mean steps): {format_metric(report.ttd_mean, 2)}",
    ]
    if report.flags:
        lines.append(f"Flags: {', '.join(report.flags)}")
    return "\n".join(lines)


def report_row(report: EvalReport) -> Dict[str, Any]:
    row = report.model_dump(exclude={"thresholds", "confusion", "flags"})
    for rule, value in report.thresholds.items():
        row[f"threshold_{rule.replace('-', '_')}"] = value
    for key, value in (report.confusion or {}).items():
        row[key] = value
    row["flags"] = ";".join(report.flags)
    return row


def write_report(
    report: EvalReport, directory: Union[str, Path], formats: Sequence[str] = ("json", "csv"), stem: str = "eval_report"
) -> List[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    if "json" in formats:
        path = directory / f"{stem}.json"
        path.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
        written.append(path)
    if "csv" in formats:
        path = directory / f"{stem}.csv"
        pd.DataFrame([report_row(report)]).to_csv(path, index=False)
        written.append(path)
    return written


def read_report(path: Union[str, Path]) -> EvalReport:
    return EvalReport.model_validate_json(Path(path).read_text(encoding="utf-8"))


__all__ = [
    "EvaluationParams",
    "roc_auc",
    "average_precision",
    "Confusion",
    "ThresholdMetrics",
    "prf_at_threshold",
    "optimal_f1_threshold",
    "fit_f1_threshold",
    "ETP",
    "label_runs",
    "etp",
    "ttd",
    "event_detection_rate",
    "EvalReport",
    "assemble_report",
    "format_metric",
    "format_percent",
    "format_etp",
    "format_report",
    "report_row",
    "write_report",
    "read_report",
]
