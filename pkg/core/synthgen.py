"""
Regime-switching scenario generator
Piecewise-stationary AR(1) channels with seeded regime changes and injected anomaly windows
"""

from dataclasses import dataclass, field
from datetime import timedelta
from pathlib import Path
from typing import Any, Dict, List, Literal, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from loguru import logger
from pydantic import BaseModel, Field, model_validator
from scipy.signal import lfilter

from core.errors import RejectedInput
from core.io import (
    SCHEMA_VERSION,
    parse_instant,
    serialize_frame,
    serialize_noc,
    to_datetime64,
    write_json,
)
from core.models import LabelInterval, LabelState, LabelTimeline, TimeSeriesFrame


# ============================================
# CONFIG
# ============================================

PRESETS: Dict[str, Dict[str, Any]] = {
    "default": {},
    "hard": {"drift_sigma": 1.0},
    "steps": {
        "n_channels": 1,
        "n_rows": 400,
        "fixed_changes": [0.5],
        # a level step of 5 over noise 0.1
        "jump_sigma": 50.0,
        "noise_sigma": 0.1,
        "ar_low": 0.0,
        "ar_high": 0.0,
        "anomaly_starts": [],
    },
}


class ScenarioConfig(BaseModel):
    """Shape of a synthetic scenario; every field has a desk-scale default"""

    preset: Literal["default", "hard", "steps"] = "default"
    n_channels: int = Field(default=20, ge=1)
    n_rows: int = Field(default=50_000, ge=50)
    step_seconds: float = Field(default=1800.0, gt=0)
    start: str = "2023-01-01T00:00:00Z"

    # regime process
    regime_changes: float = Field(default=8.0, ge=0)  # Poisson mean per channel
    fixed_changes: List[float] = Field(default_factory=list)  # row fractions, overrides Poisson
    min_regime_rows: int = Field(default=20, ge=1)
    jump_sigma: float = Field(default=3.0, ge=0)  # in units of noise_sigma
    ar_low: float = Field(default=0.3, ge=0, lt=1)
    ar_high: float = Field(default=0.8, ge=0, lt=1)
    noise_sigma: float = Field(default=1.0, gt=0)

    # anomaly windows
    # one window each in the fit rows, the validation tail and the test rows
    anomaly_starts: List[float] = Field(default_factory=lambda: [0.30, 0.60, 0.85])
    anomaly_length: float = Field(default=0.0156, gt=0, lt=1)
    affected_fraction: float = Field(default=0.3, gt=0, le=1)
    drift_sigma: float = Field(default=4.0, ge=0)
    variance_inflation: float = Field(default=2.0, ge=1)

    @model_validator(mode="after")
    def check_windows(self) -> "ScenarioConfig":
        if self.ar_low > self.ar_high:
            raise ValueError("ar_low must not exceed ar_high")
        for frac in self.fixed_changes:
            if not 0 < frac < 1:
                raise ValueError(f"fixed change fraction {frac} outside (0, 1)")
        windows = sorted(self.anomaly_starts)
        for start in windows:
            if not 0 < start < 1 or start + self.anomaly_length >= 1:
                raise ValueError(f"anomaly window at {start} does not fit inside the series")
        for a, b in zip(windows, windows[1:]):
            if a + self.anomaly_length > b:
                raise ValueError("anomaly windows overlap")
        return self

    @classmethod
    def from_preset(cls, name: str = "default", **overrides: Any) -> "ScenarioConfig":
        if name not in PRESETS:
            raise RejectedInput(f"unknown scenario preset '{name}'", choices=sorted(PRESETS))
        values = {**PRESETS[name], **overrides, "preset": name}
        return cls(**values)

    def window_rows(self) -> List[Tuple[int, int]]:
        """Half-open row range of every anomaly window"""
        length = max(1, int(round(self.anomaly_length * self.n_rows)))
        return [
            (int(round(start * self.n_rows)), int(round(start * self.n_rows)) + length)
            for start in sorted(self.anomaly_starts)
        ]


@dataclass
class Scenario:
    frame: TimeSeriesFrame
    timeline: LabelTimeline
    true_cps: Dict[str, List[int]]
    manifest: Dict[str, Any] = field(default_factory=dict)


# ============================================
# GENERATION
# ============================================

def _regime_boundaries(config: ScenarioConfig, rng: np.random.Generator) -> List[int]:
    """Change rows, thinned so every regime spans at least min_regime_rows"""
    n, gap = config.n_rows, config.min_regime_rows
    if config.jump_sigma == 0:
        return []
    if config.fixed_changes:
        candidates = sorted(int(round(f * n)) for f in config.fixed_changes)
    else:
        if n <= 2 * gap:
            return []
        count = rng.poisson(config.regime_changes)
        candidates = sorted(rng.integers(gap, n - gap, size=count).tolist())

    kept: List[int] = []
    last = 0
    for row in candidates:
        if row - last >= gap and n - row >= gap:
            kept.append(row)
            last = row
    return kept


def _generate_channel(
    config: ScenarioConfig, seed: np.random.SeedSequence
) -> Tuple[np.ndarray, np.ndarray, List[int], List[Dict[str, float]]]:
    """One channel: (values, per-row regime means, change rows, regime table)"""
    rng = np.random.default_rng(seed)
    n, sigma = config.n_rows, config.noise_sigma
    changes = _regime_boundaries(config, rng)
    edges = [0] + changes + [n]

    values = np.empty(n)
    means = np.empty(n)
    regimes = []
    level = rng.normal(0.0, 5.0 * sigma)
    for i, (lo, hi) in enumerate(zip(edges[:-1], edges[1:])):
        if i > 0:
            level += rng.choice([-1.0, 1.0]) * config.jump_sigma * sigma
        phi = rng.uniform(config.ar_low, config.ar_high) if config.ar_high > 0 else 0.0
        # innovations scaled so the stationary std is sigma
        shocks = rng.normal(0.0, sigma * np.sqrt(1.0 - phi**2), size=hi - lo)
        shocks[0] = rng.normal(0.0, sigma)
        values[lo:hi] = level + lfilter([1.0], [1.0, -phi], shocks)
        means[lo:hi] = level
        regimes.append({"start": lo, "end": hi, "mean": float(level), "phi": float(phi)})
    return values, means, changes, regimes


def generate_scenario(config: ScenarioConfig, seed: int, jobs: int = 1) -> Scenario:
    """
    Build a labeled regime-switching scenario.

    Args:
        config: Scenario shape
        seed: Master seed; channels use derived child seeds
        jobs: Worker count for channel generation (results do not depend on it)

    Returns:
        Scenario with the frame, the NoC timeline, true change rows and a manifest
    """
    master = np.random.SeedSequence(seed)
    children = master.spawn(config.n_channels + 1)
    channels = tuple(f"CH{i:02d}.pv" for i in range(config.n_channels))

    results = Parallel(n_jobs=jobs)(
        delayed(_generate_channel)(config, children[i + 1]) for i in range(config.n_channels)
    )
    values = np.column_stack([r[0] for r in results])
    means = np.column_stack([r[1] for r in results])

    picker = np.random.default_rng(children[0])
    n_affected = max(1, int(round(config.affected_fraction * config.n_channels)))
    affected = np.sort(picker.choice(config.n_channels, size=n_affected, replace=False))
    signs = picker.choice([-1.0, 1.0], size=n_affected)

    windows = config.window_rows()
    for lo, hi in windows:
        ramp = config.drift_sigma * config.noise_sigma * np.arange(1, hi - lo + 1) / (hi - lo)
        for j, sign in zip(affected, signs):
            deviation = values[lo:hi, j] - means[lo:hi, j]
            values[lo:hi, j] = means[lo:hi, j] + deviation * np.sqrt(config.variance_inflation) + sign * ramp

    start = parse_instant(config.start)
    base = to_datetime64(start)
    offsets = (np.arange(config.n_rows) * config.step_seconds * 1e9).astype(np.int64)
    timestamps = base + offsets.astype("timedelta64[ns]")
    frame = TimeSeriesFrame(
        timestamps=timestamps, channels=channels, values=values, step_seconds=config.step_seconds
    )

    def instant(row: int):
        return start + timedelta(seconds=row * config.step_seconds)

    intervals = []
    cursor = 0
    for lo, hi in windows:
        if lo > cursor:
            intervals.append(LabelInterval(instant(cursor), instant(lo), LabelState.NORMAL))
        intervals.append(LabelInterval(instant(lo), instant(hi), LabelState.ANOMALOUS))
        cursor = hi
    if cursor < config.n_rows:
        intervals.append(LabelInterval(instant(cursor), instant(config.n_rows), LabelState.NORMAL))
    timeline = LabelTimeline(intervals=tuple(intervals))

    true_cps = {name: r[2] for name, r in zip(channels, results)}
    anomalous_rows = sum(hi - lo for lo, hi in windows)
    manifest = {
        "format": "segwatch-scenario",
        "schema_version": SCHEMA_VERSION,
        "seed": seed,
        "config": config.model_dump(),
        "true_cps": true_cps,
        "regimes": {name: r[3] for name, r in zip(channels, results)},
        "affected_channels": [channels[j] for j in affected],
        "anomaly_rows": [[lo, hi] for lo, hi in windows],
        "prevalence": anomalous_rows / config.n_rows,
    }
    logger.info(
        f"🧪 Scenario '{config.preset}' seed={seed}: {config.n_rows} rows x {config.n_channels} channels, "
        f"{sum(len(c) for c in true_cps.values())} regime changes, {len(windows)} anomaly windows"
    )
    return Scenario(frame=frame, timeline=timeline, true_cps=true_cps, manifest=manifest)


def write_scenario(scenario: Scenario, directory: Union[str, Path]) -> Dict[str, Path]:
    """Write frame.csv, noc.csv and manifest.json"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "frame": directory / "frame.csv",
        "noc": directory / "noc.csv",
        "manifest": directory / "manifest.json",
    }
    paths["frame"].write_text(serialize_frame(scenario.frame), encoding="utf-8")
    paths["noc"].write_text(serialize_noc(scenario.timeline), encoding="utf-8")
    write_json(paths["manifest"], scenario.manifest)
    return paths


__all__ = ["PRESETS", "ScenarioConfig", "Scenario", "generate_scenario", "write_scenario"]
