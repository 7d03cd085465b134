"""stats.py : Seed aggregation, outlier removal and Welch's t-test."""

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from agentsim import config

LOG = logging.getLogger(__name__)


def welch_ttest(a: Sequence[float], b: Sequence[float]) -> Tuple[float, float]:
    """
    Two-tailed Welch's t-test (unequal variances).

    Parameters:
    - a, b (Sequence[float]): per-seed values of two cells.

    Returns:
    - Tuple[float, float]: (t statistic, p-value); (nan, nan) when either side has
      fewer than two values or both sides have zero variance.
    """
    x = np.asarray(a, dtype=float)
    y = np.asarray(b, dtype=float)
    if len(x) < 2 or len(y) < 2 or (x.var() == 0 and y.var() == 0):
        return float("nan"), float("nan")
    t_stat, p_value = stats.ttest_ind(x, y, equal_var=False)
    return float(t_stat), float(p_value)


def significance_stars(p_value: Optional[float], levels: Sequence[float] = config.SIGNIFICANCE_LEVELS) -> str:
    """'*', '**' or '***' for p below each level in turn; '' otherwise."""
    if p_value is None or not np.isfinite(p_value):
        return ""
    return "*" * sum(p_value < lvl for lvl in sorted(levels, reverse=True))


def remove_outliers_iqr(values: Sequence[float], factor: float = config.IQR_FACTOR) -> Tuple[List[float], int]:
    """Drop values beyond ``factor`` IQRs outside the quartiles; returns (kept, removed count)."""
    s = pd.Series(values, dtype=float).dropna()
    if len(s) < 4:
        return s.tolist(), 0
    q25, q75 = s.quantile(0.25), s.quantile(0.75)
    iqr = q75 - q25
    mask = (s >= q25 - factor * iqr) & (s <= q75 + factor * iqr)
    removed = int((~mask).sum())
    if removed:
        LOG.warning(f"Dropped {removed} outlier(s) of {len(s)} values")
    return s[mask].tolist(), removed


def summarize(values: Sequence[float], drop_outliers: bool = True) -> Dict[str, float]:
    """Mean, standard deviation and count after optional IQR filtering."""
    kept, removed = remove_outliers_iqr(values) if drop_outliers else (list(values), 0)
    arr = np.asarray(kept, dtype=float)
    return {
        "mean": float(arr.mean()) if arr.size else float("nan"),
        "std": float(arr.std(ddof=1)) if arr.size > 1 else 0.0,
        "n": int(arr.size),
        "outliers": removed,
    }


def compare_cells(frame: pd.DataFrame, metric: str, baseline: str, cell_col: str = "cell") -> pd.DataFrame:
    """
    Welch comparison of every cell against ``baseline`` on one metric.

    Args:
        frame: one row per (cell, seed) with the metric as a column.
        metric: column to compare.
        baseline: cell name every other cell is compared with.

    Returns:
        One row per non-baseline cell: means, difference, t, p and stars.
    """
    base = frame.loc[frame[cell_col] == baseline, metric].dropna().tolist()
    rows = []
    for cell, group in frame.groupby(cell_col, sort=False):
        if cell == baseline:
            continue
        vals = group[metric].dropna().tolist()
        t_stat, p_value = welch_ttest(vals, base)
        rows.append({
            "cell": cell,
            "baseline": baseline,
            "metric": metric,
            "mean": float(np.mean(vals)) if vals else float("nan"),
            "baseline_mean": float(np.mean(base)) if base else float("nan"),
            "diff_pct": 100.0 * (np.mean(vals) - np.mean(base)) / np.mean(base) if vals and base and np.mean(base) else float("nan"),
            "t": t_stat,
            "p": p_value,
            "stars": significance_stars(p_value),
        })
    return pd.DataFrame(rows)
