"""runner.py : Fan experiment jobs out with joblib and aggregate them over seeds.

Every finished (cell, seed) job is written to
``<out>/checkpoints/<preset>/<cell>/seed-<n>.joblib``; a rerun loads existing
checkpoints instead of simulating again, so an interrupted experiment resumes where
it stopped.
"""

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import joblib
import pandas as pd
from joblib import Parallel, delayed

from agentsim.core.utils import records_to_frame, provenance, save_dataframe, write_json
from agentsim.experiments.presets import Cell, ExperimentPreset, JobKind, cell_config, cell_workload, run_cell
from agentsim.experiments.stats import compare_cells, summarize

LOG = logging.getLogger(__name__)

_ID_COLUMNS = {"preset", "cell", "seed", "policy", "workers", "capacity", "accesses"}


@dataclass
class ExperimentResult:
    raw: pd.DataFrame
    summary: pd.DataFrame
    comparisons: pd.DataFrame
    paths: Dict[str, Path] = field(default_factory=dict)


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.=-]+", "_", name).strip("_") or "cell"


def checkpoint_path(out_dir: Path, preset: str, cell: str, seed: int) -> Path:
    return Path(out_dir) / "checkpoints" / _slug(preset) / _slug(cell) / f"seed-{seed}.joblib"


def _run_or_load(preset: ExperimentPreset, cell: Cell, seed: int, out_dir: Optional[Path],
                 horizon_ms: Optional[float], scale: float) -> List[Dict[str, Any]]:
    path = checkpoint_path(out_dir, preset.name, cell.name, seed) if out_dir is not None else None
    if path is not None and path.exists():
        try:
            return joblib.load(path)
        except Exception as e:
            LOG.warning(f"Ignoring unreadable checkpoint {path}: {e}")
    rows = run_cell(preset, cell, seed, horizon_ms=horizon_ms, scale=scale)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        joblib.dump(rows, path)
    return rows


def summarize_frame(raw: pd.DataFrame, by: Sequence[str]) -> pd.DataFrame:
    """Long table of mean, std, n and removed outliers per group and numeric metric."""
    metrics = [c for c in raw.columns
               if c not in _ID_COLUMNS and pd.api.types.is_numeric_dtype(raw[c]) and not pd.api.types.is_bool_dtype(raw[c])]
    rows = []
    for key, group in raw.groupby(list(by), sort=False):
        key = key if isinstance(key, tuple) else (key,)
        for metric in metrics:
            values = group[metric].dropna().tolist()
            if not values:
                continue
            rows.append(dict(zip(by, key), metric=metric, **summarize(values)))
    return pd.DataFrame(rows)


def _against(frame: pd.DataFrame, preset: ExperimentPreset, baseline: str,
             candidates: Optional[Sequence[str]] = None) -> pd.DataFrame:
    col = preset.compare_by
    if candidates is not None:
        frame = frame[frame[col].isin([baseline, *candidates])]
    return compare_cells(frame, preset.compare_metric, baseline, cell_col=col)


def _comparisons(preset: ExperimentPreset, raw: pd.DataFrame) -> pd.DataFrame:
    """Welch tables against the preset baseline, then one row per extra (candidate, baseline) pair."""
    if preset.baseline is None or preset.compare_metric not in raw.columns:
        return pd.DataFrame()
    groups = [(None, raw)] if preset.compare_by == "cell" else list(raw.groupby("cell", sort=False))
    frames = []
    for workload, group in groups:
        parts = [_against(group, preset, preset.baseline)]
        parts += [_against(group, preset, base, [cand]) for cand, base in preset.pairs]
        for cmp in parts:
            if cmp.empty:
                continue
            if workload is not None:
                cmp.insert(0, "workload", workload)
            frames.append(cmp)
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()


def _resolved_configs(preset: ExperimentPreset, horizon_ms: Optional[float], scale: float) -> Dict[str, Any]:
    if preset.job != JobKind.SIM:
        return {}
    horizon = horizon_ms or preset.horizon_ms
    out = {}
    for cell in preset.cells:
        spec = cell_workload(cell, horizon, scale)
        out[cell.name] = {"config": cell_config(cell, spec, horizon, seed=0).to_dict(), "workload": spec.to_dict()}
    return out


def run_preset(preset: ExperimentPreset, seeds: int, out_dir: Optional[Path] = None, jobs: int = 1,
               horizon_ms: Optional[float] = None, scale: float = 1.0, seed_base: int = 0,
               output_format: str = "pandas") -> ExperimentResult:
    """
    Run every cell of ``preset`` for ``seeds`` seeds and aggregate.

    Parameters:
    - preset (ExperimentPreset): grid to run.
    - seeds (int): number of seeds, starting at ``seed_base``.
    - out_dir (Path | None): where checkpoints and tables go; nothing is written when None.
    - jobs (int): joblib worker count (-1 for all cores).
    - horizon_ms (float | None): overrides the preset's horizon.
    - scale (float): extra arrival-rate scale on top of each cell's own.
    - output_format (str): table backend for the raw rows, "pandas" or "polars".

    Returns:
    - ExperimentResult: raw rows, per-cell summary and Welch comparisons against the
      preset's baseline.
    """
    if seeds < 1:
        raise ValueError(f"seeds must be >= 1, got {seeds}")
    work = [(cell, seed_base + i) for cell in preset.cells for i in range(seeds)]
    LOG.info(f"Running preset {preset.name}: {len(preset.cells)} cells x {seeds} seeds on {jobs} job(s)")
    try:
        chunks = Parallel(n_jobs=jobs)(
            delayed(_run_or_load)(preset, cell, seed, out_dir, horizon_ms, scale) for cell, seed in work)
    except KeyboardInterrupt:
        LOG.warning(f"Interrupted; finished seeds are checkpointed under {out_dir}")
        raise
    records = [row for chunk in chunks for row in chunk]
    raw = pd.DataFrame(records)
    by = ["cell", "policy"] if "policy" in raw.columns else ["cell"]
    summary = summarize_frame(raw, by) if not raw.empty else pd.DataFrame()
    comparisons = _comparisons(preset, raw) if not raw.empty else pd.DataFrame()

    result = ExperimentResult(raw=raw, summary=summary, comparisons=comparisons)
    if out_dir is not None:
        base = Path(out_dir) / preset.name
        table = records_to_frame(records, output_format)
        result.paths["raw"] = save_dataframe(table, base / "raw.csv")
        result.paths["summary"] = save_dataframe(summary, base / "summary.csv")
        result.paths["comparisons"] = save_dataframe(comparisons, base / "comparisons.csv")
        result.paths["meta"] = write_json({
            "preset": preset.name,
            "description": preset.description,
            "seeds": [seed_base + i for i in range(seeds)],
            "scale": scale,
            "horizon_ms": horizon_ms or preset.horizon_ms,
            "cells": _resolved_configs(preset, horizon_ms, scale),
            "version": provenance(),
        }, base / "meta.json")
    return result
