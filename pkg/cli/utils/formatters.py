"""
Plain-text formatters for command output
"""

import math
from typing import Dict, Mapping, Optional

import pandas as pd

from analysis.changepoint import ChannelChangepoints
from analysis.evaluation import format_metric, format_percent


def _cell(value) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "-"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def format_table(table: pd.DataFrame, title: str = "") -> str:
    """Fixed-width rendering of a small table"""
    if table.empty:
        return f"{title}\n(no rows)" if title else "(no rows)"
    frame = table.reset_index() if table.index.name else table
    headers = [str(c) for c in frame.columns]
    rows = [[_cell(v) for v in record] for record in frame.itertuples(index=False, name=None)]
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(headers)]
    lines = [title] if title else []
    lines.append("  ".join(h.ljust(w) for h, w in zip(headers, widths)))
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in rows)
    return "\n".join(lines)


def format_cpd_summary(results: Mapping[str, ChannelChangepoints]) -> str:
    lines = ["🔎 CHANGE POINTS"]
    for name, result in results.items():
        lines.append(f"  {name}: {len(result.cps)} (warm-up {result.scores.warmup} rows)")
    return "\n".join(lines)


def _opt(value) -> Optional[float]:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return None
    return float(value)


def format_comparison(table: pd.DataFrame) -> str:
    """Approach, AUC-ROC, F1 and F1 drop, then the detection columns"""
    rows = []
    for row in table.to_dict(orient="records"):
        drop = _opt(row["f1_drop_pct"])
        rows.append(
            {
                "Approach": row["approach"],
                "AUC-ROC": format_metric(_opt(row["auc_roc"])),
                "F1": format_metric(_opt(row["f1"])),
                "F1 drop (%)": "-" if drop is None else str(int(drop)),
                "ETP": f"{row['etp_detected']}/{row['etp_total']} ({format_percent(_opt(row['etp_percent']))})",
            }
        )
    return format_table(pd.DataFrame(rows), "📊 COMPARISON")


def format_top_features(table: pd.DataFrame) -> str:
    return format_table(table.rename(columns={"feature": "Feature", "importance": "Importance"}), "🌲 TOP FEATURES")


def format_written(paths: Dict[str, object]) -> str:
    return "\n".join(f"💾 {name}: {path}" for name, path in paths.items())


__all__ = [
    "format_table",
    "format_cpd_summary",
    "format_comparison",
    "format_top_features",
    "format_written",
]
