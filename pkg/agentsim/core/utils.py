"""utils.py : Table, serialization, logging and provenance helpers."""

import json
import logging
import os
import subprocess
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional

import pandas as pd
import polars as pl

from agentsim import config

TABLE_BACKENDS = ("pandas", "polars")


def clamp(x: float, lo: float = 0.0, hi: float = 1.0) -> float:
    return lo if x < lo else hi if x > hi else x


def dumps_canonical(obj: Any) -> str:
    """Compact, key-sorted JSON so repeated runs write identical bytes."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False, default=_json_default)


def _json_default(obj: Any):
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    if hasattr(obj, "item"):  # numpy scalars
        return obj.item()
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def records_to_frame(records: Iterable[Mapping[str, Any]], output_format: str = "pandas",
                     sep: str = ".") -> pd.DataFrame | pl.DataFrame:
    """
    One flat row per record; nested mappings become ``parent.child`` columns.

    Every row is scanned for the schema so a field that only shows up late (a steal
    count, a tenant class) still gets a column. No records gives an empty frame.

    Raises:
        ValueError: if ``output_format`` is not "pandas" or "polars".
    """
    if output_format not in TABLE_BACKENDS:
        raise ValueError(f"output_format must be one of {TABLE_BACKENDS}, got {output_format!r}")
    rows = [dict(r) for r in records]
    if output_format == "polars":
        return pl.json_normalize(rows, separator=sep, infer_schema_length=None) if rows else pl.DataFrame()
    return pd.json_normalize(rows, sep=sep) if rows else pd.DataFrame()


def save_dataframe(df: pd.DataFrame | pl.DataFrame, path: Path, fmt: str = "csv") -> Path:
    """Save a pandas or polars DataFrame as csv, json or parquet."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    if isinstance(df, pl.DataFrame):
        if fmt == "csv":
            df.write_csv(str(path))
        elif fmt == "json":
            df.write_json(str(path))
        elif fmt == "parquet":
            df.write_parquet(str(path))
        else:
            raise ValueError(f"Unsupported format: {fmt}")
    else:
        if fmt == "csv":
            df.to_csv(path, index=False)
        elif fmt == "json":
            df.to_json(path, orient="records", indent=2)
        elif fmt == "parquet":
            df.to_parquet(path, index=False)
        else:
            raise ValueError(f"Unsupported format: {fmt}")
    return path


def write_json(obj: Any, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_canonical(obj) + "\n", encoding="utf-8")
    return path


def setup_logging(level: Optional[str | int] = None) -> int:
    """
    Configure root logging once for CLI use.

    The level comes from ``level``, else from the ``AGENTSIM_LOG`` environment variable
    (a level name or number), else WARNING.

    Returns:
    - int: the effective level.
    """
    raw = level if level is not None else os.environ.get(config.LOG_ENV_VAR, "WARNING")
    if isinstance(raw, str):
        raw = raw.strip()
        resolved = int(raw) if raw.isdigit() else logging.getLevelName(raw.upper())
        if not isinstance(resolved, int):
            resolved = logging.WARNING
    else:
        resolved = int(raw)

    root = logging.getLogger()
    if not root.handlers:
        logging.basicConfig(level=resolved, format=config.LOG_FORMAT)
    root.setLevel(resolved)
    return resolved


def provenance() -> str:
    """git-describe-style version string, falling back to the package version."""
    from agentsim import __version__

    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__
