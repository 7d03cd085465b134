"""ttl.py : Adaptive TTLs for caches of sessions paused on a tool call."""

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Deque, Dict, Optional, Sequence

import numpy as np

from agentsim import config
from agentsim.core.errors import ConfigError
from agentsim.core.model import LatencyDistribution, ToolType, nearest_rank
from agentsim.core.utils import clamp

LOG = logging.getLogger(__name__)


class TtlEstimator(str, Enum):
    EMPIRICAL = "empirical"  # nearest-rank percentile of the recent window
    LOGNORMAL = "lognormal"  # percentile of a log-normal fit to EMA moments


@dataclass(frozen=True)
class TtlConfig:
    percentile: float = config.TTL_PERCENTILE
    ttl_max_ms: float = config.TTL_MAX_MS
    low: float = config.PRESSURE_LOW
    high: float = config.PRESSURE_HIGH
    window: int = config.TTL_WINDOW
    estimator: TtlEstimator = TtlEstimator.EMPIRICAL
    smoothing: float = config.EMA_SMOOTHING

    def __post_init__(self):
        issues = []
        if not 0 < self.percentile <= 100:
            issues.append(("ttl.percentile", f"must be in (0, 100], got {self.percentile}"))
        if self.ttl_max_ms <= 0:
            issues.append(("ttl.ttl_max_ms", "must be > 0"))
        if not 0 <= self.low < self.high <= 1:
            issues.append(("ttl.low", f"need 0 <= low < high <= 1, got {self.low}, {self.high}"))
        if self.window < 1:
            issues.append(("ttl.window", "must be >= 1"))
        if not 0 < self.smoothing <= 1:
            issues.append(("ttl.smoothing", "must be in (0, 1]"))
        if issues:
            raise ConfigError(issues)

    def to_dict(self):
        return {"percentile": self.percentile, "ttl_max_ms": self.ttl_max_ms, "low": self.low,
                "high": self.high, "window": self.window, "estimator": self.estimator.value,
                "smoothing": self.smoothing}


def memory_pressure(used: int, capacity: int, cfg: TtlConfig = TtlConfig()) -> float:
    """Pressure in [0, 1]: 0 below ``low`` occupancy, 1 above ``high``, linear between."""
    if capacity <= 0:
        return 1.0
    return clamp((used / capacity - cfg.low) / (cfg.high - cfg.low))


def compute_ttl(tool: ToolType, history: Sequence[float], cfg: TtlConfig, m: float,
                fit: Optional[LatencyDistribution] = None) -> float:
    """
    TTL in ms for a cache whose session just called ``tool``.

    The base is the configured percentile of the tool's latency: from the log-normal
    ``fit`` when that estimator is selected and a fit exists, else from the recent
    ``history``, else from the tool's own distribution. Pressure ``m`` shrinks the base
    by up to half and the result never exceeds ``ttl_max_ms``.
    """
    q = cfg.percentile / 100.0
    if cfg.estimator == TtlEstimator.LOGNORMAL and fit is not None:
        base = fit.quantile(min(q, 0.999999))
    elif len(history):
        base = nearest_rank(history, cfg.percentile)
    else:
        base = tool.latency.quantile(min(q, 0.999999))
    return min(base * (1.0 - 0.5 * clamp(m)), cfg.ttl_max_ms)


@dataclass
class _Moments:
    m1: float
    m2: float


@dataclass
class LatencyHistory:
    """Observed tool latencies: a bounded window per tool plus EMA moments."""

    cfg: TtlConfig = field(default_factory=TtlConfig)
    _windows: Dict[str, Deque[float]] = field(default_factory=dict)
    _moments: Dict[str, _Moments] = field(default_factory=dict)

    def observe(self, tool: str, latency_ms: float) -> None:
        self._windows.setdefault(tool, deque(maxlen=self.cfg.window)).append(float(latency_ms))
        a = self.cfg.smoothing
        x = float(latency_ms)
        mom = self._moments.get(tool)
        if mom is None:
            self._moments[tool] = _Moments(x, x * x)
        else:
            mom.m1 = (1 - a) * mom.m1 + a * x
            mom.m2 = (1 - a) * mom.m2 + a * x * x

    def samples(self, tool: str) -> Sequence[float]:
        return self._windows.get(tool, ())

    def fit(self, tool: str) -> Optional[LatencyDistribution]:
        """Log-normal matched to the EMA mean and second moment, if any sample exists."""
        mom = self._moments.get(tool)
        if mom is None or mom.m1 <= 0:
            return None
        var = max(0.0, mom.m2 - mom.m1 * mom.m1)
        return LatencyDistribution.from_mean_cv(mom.m1, np.sqrt(var) / mom.m1)

    def median(self, tool: str, fallback: ToolType) -> float:
        window = self.samples(tool)
        return nearest_rank(window, 50) if len(window) else fallback.latency.median()


def ttl_coverage(distribution: LatencyDistribution, n_calls: int, cfg: TtlConfig, seed: int,
                 pressure: float = 0.0) -> float:
    """
    Fraction of simulated tool calls that finish within the TTL set when they start.

    Each call's TTL is computed from the history of the calls before it, then the call's
    latency is drawn from ``distribution`` and added to the history.
    """
    rng = np.random.default_rng(seed)
    tool = ToolType("sampled", distribution)
    history = LatencyHistory(cfg)
    covered = 0
    for _ in range(n_calls):
        ttl = compute_ttl(tool, history.samples("sampled"), cfg, pressure, fit=history.fit("sampled"))
        x = distribution.sample(rng)
        covered += x <= ttl
        history.observe("sampled", x)
    return covered / n_calls if n_calls else 0.0
