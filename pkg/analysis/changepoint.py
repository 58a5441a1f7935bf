"""
Online change point scoring (two-stage SDAR) and change point extraction
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from loguru import logger
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, Field

from core.errors import RejectedInput
from core.io import SCHEMA_VERSION, read_versioned_json, require_file, write_json
from core.models import TimeSeriesFrame

LOG_2PI = math.log(2.0 * math.pi)


# ============================================
# PARAMETERS
# ============================================

class ChangepointParams(BaseModel):
    """ChangeFinder and extraction settings"""

    order: int = Field(default=2, ge=0)
    discount: float = Field(default=0.005, gt=0, lt=1)
    smooth_1: int = Field(default=5, ge=1)
    smooth_2: int = Field(default=5, ge=1)
    sigma_floor: float = Field(default=1e-9, gt=0)
    warm_rows: int = Field(default=10, ge=1)
    threshold_sigma: float = Field(default=3.0)
    min_sep: Optional[int] = Field(default=None, ge=1)

    @property
    def separation(self) -> int:
        return self.min_sep if self.min_sep is not None else 2 * self.smooth_1


# ============================================
# SDAR
# ============================================

def levinson_durbin(cov: Sequence[float], floor: float) -> Tuple[List[float], bool]:
    """
    Solve the Yule-Walker system for AR coefficients.

    Returns (coefficients, ok); a singular or non-stationary system gives
    zero coefficients and ok=False.
    """
    k = len(cov) - 1
    if k == 0:
        return [], True
    if cov[0] <= floor:
        return [0.0] * k, False
    a: List[float] = []
    err = cov[0]
    for m in range(1, k + 1):
        acc = cov[m] - sum(a[j] * cov[m - 1 - j] for j in range(m - 1))
        refl = acc / err
        if not abs(refl) < 1.0:
            return [0.0] * k, False
        a = [a[j] - refl * a[m - 2 - j] for j in range(m - 1)] + [refl]
        err *= 1.0 - refl * refl
        if err <= 0.0:
            return [0.0] * k, False
    return a, True


@dataclass
class SdarState:
    """Sequentially discounted AR(k) model; single owner, updated in place"""

    order: int
    discount: float
    floor: float
    mean: float
    cov: List[float]  # C_0..C_k
    coef: List[float]  # a_1..a_k
    sigma2: float
    history: List[float] = field(default_factory=list)  # most recent first

    @classmethod
    def warm_start(
        cls, observations: Sequence[float], order: int, discount: float, floor: float = 1e-9
    ) -> "SdarState":
        """Initialize moments from the first observations (biased autocovariances)"""
        obs = np.asarray(observations, dtype=np.float64)
        if obs.size == 0 or not np.isfinite(obs).all():
            raise RejectedInput("warm-start needs finite observations")
        mean = float(obs.mean())
        centered = obs - mean
        n = obs.size
        cov = [float(centered[j:] @ centered[: n - j]) / n if j < n else 0.0 for j in range(order + 1)]
        coef, ok = levinson_durbin(cov, floor)
        sigma2 = max(cov[0], floor)
        recent = obs[::-1][:order].tolist()
        history = recent + [mean] * (order - len(recent))
        return cls(order, discount, floor, mean, cov, coef, sigma2, history)

    def predict(self) -> float:
        return self.mean + sum(a * (h - self.mean) for a, h in zip(self.coef, self.history))


def sdar_update(state: SdarState, x: float) -> Tuple[SdarState, float]:
    """
    Score x under the current predictive Gaussian, then fold x into the model.

    The score is the negative log-density of x given the AR(k) prediction
    and variance held before this update.
    """
    if not math.isfinite(x):
        raise RejectedInput(f"non-finite observation {x}")
    r = state.discount
    resid = x - state.predict()
    score = 0.5 * (LOG_2PI + math.log(state.sigma2)) + resid * resid / (2.0 * state.sigma2)

    state.mean = (1.0 - r) * state.mean + r * x
    dev = x - state.mean
    state.cov[0] = (1.0 - r) * state.cov[0] + r * dev * dev
    for j in range(1, state.order + 1):
        state.cov[j] = (1.0 - r) * state.cov[j] + r * dev * (state.history[j - 1] - state.mean)

    state.coef, ok = levinson_durbin(state.cov, state.floor)
    if ok:
        fitted = x - state.predict()
        state.sigma2 = (1.0 - r) * state.sigma2 + r * fitted * fitted
    else:
        state.sigma2 = state.cov[0]
    state.sigma2 = max(state.sigma2, state.floor)

    if state.order:
        state.history = [x] + state.history[:-1]
    return state, score


# ============================================
# SCORING
# ============================================

def smooth(scores: np.ndarray, window: int) -> np.ndarray:
    """Trailing moving average; the leading edge averages the available prefix"""
    scores = np.asarray(scores, dtype=np.float64)
    if window < 1:
        raise RejectedInput(f"smoothing window must be >= 1, got {window}")
    if window > scores.size:
        raise RejectedInput(f"smoothing window {window} exceeds series length {scores.size}")
    out = np.empty_like(scores)
    head = min(window - 1, scores.size)
    out[:head] = np.cumsum(scores[:head]) / np.arange(1, head + 1)
    out[window - 1:] = sliding_window_view(scores, window).mean(axis=1)
    return out


@dataclass(frozen=True)
class ChangeScoreSeries:
    outlier_scores: np.ndarray  # stage 1
    change_scores: np.ndarray  # stage 2, smoothed
    params: Tuple[int, float, int, int]  # (k, r, T1, T2)
    warmup: int  # leading rows excluded from extraction and statistics

    def __len__(self) -> int:
        return len(self.change_scores)


@dataclass(frozen=True)
class CPList:
    indices: np.ndarray  # strictly increasing
    threshold_sigma: float
    min_sep: int

    def __len__(self) -> int:
        return len(self.indices)


def _run_stage(series: np.ndarray, start: int, warm: int, params: ChangepointParams, excess: bool = False) -> np.ndarray:
    """
    SDAR scores for series[start + warm:], zeros before. With `excess` the
    scores are log-losses above the sharpest admissible prediction (zero
    residual at the variance floor), so they are non-negative.
    """
    out = np.zeros(series.size)
    base = 0.5 * (LOG_2PI + math.log(params.sigma_floor)) if excess else 0.0
    state = SdarState.warm_start(series[start:start + warm], params.order, params.discount, params.sigma_floor)
    for t in range(start + warm, series.size):
        state, score = sdar_update(state, float(series[t]))
        out[t] = score - base
    return out


def _warm_rows(n: int, params: ChangepointParams) -> Optional[int]:
    """Rows each stage warm-starts on, or None when n leaves nothing to score"""
    k, t1, t2 = params.order, params.smooth_1, params.smooth_2
    if n <= 2 * max(k, t1, t2):
        return None
    warm = max(k + 1, min(params.warm_rows, (n - 1) // 2))
    if 2 * warm + t2 > n or warm + t1 > n:
        return None
    return warm


def leading_repeats(series: np.ndarray) -> int:
    """Rows before the last copy of the series' opening value in its leading run"""
    differs = np.flatnonzero(series != series[0])
    return int(differs[0]) - 1 if differs.size else series.size - 1


def changefinder_score(series: np.ndarray, params: Optional[ChangepointParams] = None) -> ChangeScoreSeries:
    """
    Two-stage ChangeFinder.

    Stage 1 scores every point with SDAR, the scores are smoothed over T1
    rows, stage 2 rescores the smoothed values and a second smoothing over
    T2 rows gives the change scores. Each stage warm-starts on its own first
    rows, so nothing from a warm-up region feeds a later stage.

    A leading run of one repeated value is folded into the warm-up: scoring
    starts at the last row of the run, so padding a series with copies of
    its first value only shifts the output. Change scores are stage-2
    log-losses in excess of the variance-floor optimum and are never negative.
    """
    params = params or ChangepointParams()
    series = np.asarray(series, dtype=np.float64)
    k, t1, t2 = params.order, params.smooth_1, params.smooth_2
    n = series.size
    if n <= 2 * max(k, t1, t2):
        raise RejectedInput(f"series of length {n} is too short for k={k}, T1={t1}, T2={t2}")
    if not np.isfinite(series).all():
        bad = int(np.flatnonzero(~np.isfinite(series))[0])
        raise RejectedInput(f"non-finite observation at row {bad}", row=bad)

    lead = leading_repeats(series)
    if lead and _warm_rows(n - lead, params) is None:
        lead = 0
    warm = _warm_rows(n - lead, params)
    if warm is None:
        raise RejectedInput(f"series of length {n} leaves no rows after warm-up")
    body = series[lead:]
    m = body.size

    stage_1 = _run_stage(body, 0, warm, params)
    smoothed = np.zeros(m)
    smoothed[warm:] = smooth(stage_1[warm:], t1)

    stage_2 = _run_stage(smoothed, warm, warm, params, excess=True)
    change = np.zeros(m)
    change[2 * warm:] = smooth(stage_2[2 * warm:], t2)

    outlier = np.zeros(n)
    outlier[lead:] = stage_1
    scores = np.zeros(n)
    scores[lead:] = change
    if lead:
        logger.debug(f"Leading run of {lead + 1} equal values folded into the warm-up")

    return ChangeScoreSeries(
        outlier_scores=outlier,
        change_scores=scores,
        params=(k, params.discount, t1, t2),
        warmup=lead + max(k, t1, t2, 2 * warm),
    )


def extract_changepoints(cs: ChangeScoreSeries, threshold_sigma: float = 3.0, min_sep: int = 10) -> CPList:
    """
    Local maxima of the change scores above mean + λ·std, greedily thinned.

    Statistics use the post-warm-up scores only. Higher scores are kept first;
    equal scores keep the earlier index.
    """
    if min_sep < 1:
        raise RejectedInput(f"min_sep must be >= 1, got {min_sep}")
    empty = CPList(np.array([], dtype=np.int64), threshold_sigma, min_sep)
    scores = cs.change_scores
    w, n = cs.warmup, len(scores)
    if n - w < 1:
        return empty
    body = scores[w:]
    mean, std = float(body.mean()), float(body.std())
    if std <= 1e-12 * max(1.0, abs(mean)):
        return empty
    threshold = mean + threshold_sigma * std

    left = np.concatenate([[-np.inf], body[:-1]])
    right = np.concatenate([body[1:], [-np.inf]])
    peaks = np.flatnonzero((body > left) & (body >= right) & (body > threshold)) + w
    order = sorted(peaks.tolist(), key=lambda t: (-scores[t], t))

    kept: List[int] = []
    for t in order:
        if all(abs(t - other) >= min_sep for other in kept):
            kept.append(t)
    return CPList(np.array(sorted(kept), dtype=np.int64), threshold_sigma, min_sep)


# ============================================
# PER-CHANNEL PIPELINE
# ============================================

@dataclass(frozen=True)
class ChannelChangepoints:
    channel: str
    scores: ChangeScoreSeries
    cps: CPList


def detect_channel_changepoints(
    channel: str, series: np.ndarray, params: Optional[ChangepointParams] = None
) -> ChannelChangepoints:
    params = params or ChangepointParams()
    scores = changefinder_score(series, params)
    cps = extract_changepoints(scores, params.threshold_sigma, params.separation)
    logger.debug(f"{channel}: {len(cps)} change points")
    return ChannelChangepoints(channel=channel, scores=scores, cps=cps)


def detect_all_channels(
    frame: TimeSeriesFrame,
    params: Optional[ChangepointParams] = None,
    channels: Optional[Sequence[str]] = None,
    jobs: int = 1,
) -> Dict[str, ChannelChangepoints]:
    """Run score + extract for every channel; output order follows the frame"""
    params = params or ChangepointParams()
    channels = list(channels) if channels is not None else list(frame.channels)
    results = Parallel(n_jobs=jobs)(
        delayed(detect_channel_changepoints)(name, frame.column(name), params) for name in channels
    )
    total = sum(len(r.cps) for r in results)
    logger.info(f"🔎 Change points: {total} across {len(channels)} channels")
    return {r.channel: r for r in results}


def write_cpd_outputs(
    results: Dict[str, ChannelChangepoints], directory: Union[str, Path], params: ChangepointParams
) -> Path:
    """One `t,outlier_score,change_score,is_cp` CSV per channel plus cpd.json"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, result in results.items():
        is_cp = np.zeros(len(result.scores), dtype=np.int64)
        is_cp[result.cps.indices] = 1
        table = pd.DataFrame(
            {
                "t": np.arange(len(result.scores)),
                "outlier_score": result.scores.outlier_scores,
                "change_score": result.scores.change_scores,
                "is_cp": is_cp,
            }
        )
        files[name] = f"{name}.csv"
        table.to_csv(directory / files[name], index=False, float_format="%.17g")
    write_json(
        directory / "cpd.json",
        {
            "format": "segwatch-cpd",
            "schema_version": SCHEMA_VERSION,
            "params": params.model_dump(),
            "channels": [
                {"channel": name, "file": files[name], "warmup": r.scores.warmup, "n_cps": len(r.cps)}
                for name, r in results.items()
            ],
        },
    )
    return directory


def read_cpd_outputs(directory: Union[str, Path]) -> Dict[str, ChannelChangepoints]:
    directory = Path(directory)
    meta = read_versioned_json(directory / "cpd.json", "segwatch-cpd")
    params = ChangepointParams(**meta["params"])
    results = {}
    for entry in meta["channels"]:
        table = pd.read_csv(require_file(directory / entry["file"]), float_precision="round_trip")
        scores = ChangeScoreSeries(
            outlier_scores=table["outlier_score"].to_numpy(dtype=np.float64),
            change_scores=table["change_score"].to_numpy(dtype=np.float64),
            params=(params.order, params.discount, params.smooth_1, params.smooth_2),
            warmup=int(entry["warmup"]),
        )
        cps = CPList(
            indices=np.flatnonzero(table["is_cp"].to_numpy() == 1).astype(np.int64),
            threshold_sigma=params.threshold_sigma,
            min_sep=params.separation,
        )
        results[entry["channel"]] = ChannelChangepoints(entry["channel"], scores, cps)
    return results


__all__ = [
    "ChangepointParams",
    "levinson_durbin",
    "SdarState",
    "sdar_update",
    "smooth",
    "ChangeScoreSeries",
    "CPList",
    "leading_repeats",
    "changefinder_score",
    "extract_changepoints",
    "ChannelChangepoints",
    "detect_channel_changepoints",
    "detect_all_channels",
    "write_cpd_outputs",
    "read_cpd_outputs",
]
