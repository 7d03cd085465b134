"""Tool types and their latency distributions."""

from typing import Dict, Iterable, Optional

import numpy as np

from agentsim import config
from agentsim.core.model import LatencyDistribution, ToolType


def default_tools() -> Dict[str, ToolType]:
    """Tool types with log-normals fit to the median and P95 of the latency table."""
    return {name: ToolType(name, LatencyDistribution.from_quantiles(p50, p95))
            for name, (p50, p95, _p99) in sorted(config.TOOL_LATENCY_TABLE.items())}


def tools_with_cv(mean_ms: float, cv: float, names: Optional[Iterable[str]] = None) -> Dict[str, ToolType]:
    """Every tool gets the same log-normal with the given mean and coefficient of variation."""
    names = list(names) if names is not None else list(config.TOOL_NAMES)
    dist = LatencyDistribution.from_mean_cv(mean_ms, cv)
    return {name: ToolType(name, dist) for name in names}


def sample_tool_latency(tool: ToolType, rng: np.random.Generator) -> float:
    """One latency draw in ms, rounded to the microsecond."""
    return round(tool.latency.sample(rng), 3)
