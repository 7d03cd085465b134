"""settings.py : Resolved simulator configuration.

Defaults come from ``agentsim.config``; a JSON or TOML document may override any
field, using the same nesting as ``SimConfig.to_dict()``. Every problem found while
loading is collected and raised together as one ConfigError.
"""

import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Mapping, Tuple

from agentsim import config
from agentsim.cache.eviction import EvictionPolicy, EvictionWeights
from agentsim.cache.ttl import TtlConfig, TtlEstimator
from agentsim.core.errors import ConfigError
from agentsim.core.model import CostModel, LatencyDistribution, ToolType
from agentsim.scheduler.stealing import MigrationModel, StealConfig
from agentsim.sim.tools import default_tools

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

LOG = logging.getLogger(__name__)


class FairnessPolicy(str, Enum):
    AFS = "afs"
    FCFS = "fcfs"
    UNIFORM = "uniform"


class Strategy(str, Enum):
    HYBRID = "hybrid"
    BFS = "bfs"
    DFS = "dfs"


class AegMode(str, Enum):
    HINTS = "hints"
    INFERRED = "inferred"
    NONE = "none"


ABLATION_COMPONENTS = ("session-affinity", "eviction", "ttl", "prefetch", "stealing", "afs")


@dataclass(frozen=True)
class ClusterConfig:
    workers: int = config.NUM_WORKERS
    lanes_per_worker: int = config.LANES_PER_WORKER
    kv_capacity_gb: float = config.KV_CAPACITY_GB
    load_window_ms: float = config.LOAD_WINDOW_MS

    @property
    def kv_capacity_bytes(self) -> int:
        return int(self.kv_capacity_gb * (1 << 30))

    @property
    def total_lanes(self) -> int:
        return self.workers * self.lanes_per_worker


@dataclass(frozen=True)
class PolicyConfig:
    eviction: EvictionPolicy = EvictionPolicy.WA_LRU
    affinity: bool = True
    ttl: bool = True
    prefetch: bool = True
    stealing: bool = True
    fairness: FairnessPolicy = FairnessPolicy.AFS
    strategy: Strategy = Strategy.HYBRID
    aeg_mode: AegMode = AegMode.HINTS
    theta: float = config.THETA
    weights: EvictionWeights = field(default_factory=EvictionWeights)
    prefix_fraction: float = config.PREFIX_FRACTION
    theta_conf: float = config.THETA_CONF


@dataclass(frozen=True)
class FairnessConfig:
    block_threshold_ms: float = config.BLOCK_THRESHOLD_MS
    preemption: bool = True


@dataclass(frozen=True)
class SimConfig:
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    cost: CostModel = field(default_factory=CostModel)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    ttl: TtlConfig = field(default_factory=TtlConfig)
    steal: StealConfig = field(default_factory=StealConfig)
    fairness: FairnessConfig = field(default_factory=FairnessConfig)
    tools: Mapping[str, ToolType] = field(default_factory=default_tools)
    horizon_ms: float = config.DEFAULT_HORIZON_MS
    warmup_ms: float = 0.0
    epoch_ms: float = config.EPOCH_MS
    max_context_tokens: int = config.MAX_CONTEXT_TOKENS
    seed: int = 0

    def validate(self) -> "SimConfig":
        issues: List[Tuple[str, str]] = []
        c = self.cluster
        if c.workers < 1:
            issues.append(("cluster.workers", f"must be >= 1, got {c.workers}"))
        if c.lanes_per_worker < 1:
            issues.append(("cluster.lanes_per_worker", f"must be >= 1, got {c.lanes_per_worker}"))
        if c.kv_capacity_gb <= 0:
            issues.append(("cluster.kv_capacity_gb", f"must be > 0, got {c.kv_capacity_gb}"))
        if c.load_window_ms <= 0:
            issues.append(("cluster.load_window_ms", "must be > 0"))
        if self.policy.theta <= 0:
            issues.append(("policy.theta", f"must be > 0, got {self.policy.theta}"))
        if not 0 <= self.policy.prefix_fraction <= 1:
            issues.append(("policy.prefix_fraction", "must be within [0, 1]"))
        if not 0 < self.policy.theta_conf <= 1:
            issues.append(("policy.theta_conf", "must be within (0, 1]"))
        if self.fairness.block_threshold_ms < 0:
            issues.append(("fairness.block_threshold_ms", "must be >= 0"))
        if self.horizon_ms <= 0:
            issues.append(("horizon_ms", "must be > 0"))
        if not 0 <= self.warmup_ms < self.horizon_ms:
            issues.append(("warmup_ms", "must be within [0, horizon_ms)"))
        if self.epoch_ms <= 0:
            issues.append(("epoch_ms", "must be > 0"))
        if self.max_context_tokens < 1:
            issues.append(("max_context_tokens", "must be >= 1"))
        if not self.tools:
            issues.append(("tools", "at least one tool type is required"))
        if issues:
            raise ConfigError(issues)
        return self

    def with_tools(self, tools: Mapping[str, ToolType]) -> "SimConfig":
        """Swap the tool table and keep the cost model's tool medians in step."""
        medians = {name: t.latency.median() for name, t in tools.items()}
        return replace(self, tools=dict(tools), cost=replace(self.cost, tool_median_ms=medians))

    def to_dict(self) -> Dict[str, Any]:
        return _to_plain(self)


def _to_plain(obj: Any) -> Any:
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, ToolType):
        return obj.latency.to_dict()
    if isinstance(obj, LatencyDistribution):
        return obj.to_dict()
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj) if not f.name.startswith("_")}
    if isinstance(obj, Mapping):
        return {str(k): _to_plain(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


def _coerce(value: Any, target: Any, path: str, issues: List[Tuple[str, str]]) -> Any:
    """Convert one plain value into the type of the default it replaces."""
    try:
        if isinstance(target, Enum):
            return type(target)(value)
        if isinstance(target, bool):
            if not isinstance(value, bool):
                raise TypeError("expected true or false")
            return value
        if isinstance(target, int) and not isinstance(target, bool):
            if isinstance(value, bool) or float(value) != int(value):
                raise TypeError("expected an integer")
            return int(value)
        if isinstance(target, float):
            return float(value)
        if isinstance(target, LatencyDistribution):
            return LatencyDistribution.from_dict(value)
        if isinstance(target, EvictionWeights):
            return EvictionWeights(**value)
        if dataclasses.is_dataclass(target):
            return _merge(target, value, path, issues)
    except (TypeError, ValueError) as e:
        issues.append((path, f"invalid value {value!r}: {e}"))
        return target
    return value


def _merge(base: Any, overrides: Mapping[str, Any], prefix: str, issues: List[Tuple[str, str]]) -> Any:
    if not isinstance(overrides, Mapping):
        issues.append((prefix, "expected a table"))
        return base
    names = {f.name for f in dataclasses.fields(base) if f.init and not f.name.startswith("_")}
    changes = {}
    for key, value in overrides.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in names:
            issues.append((path, "unknown key"))
            continue
        current = getattr(base, key)
        if key == "tools":
            changes[key] = _tools_from(value, path, issues)
        elif key == "tool_median_ms":
            changes[key] = {str(k): float(v) for k, v in value.items()}
        else:
            changes[key] = _coerce(value, current, path, issues)
    try:
        return replace(base, **changes)
    except ConfigError as e:
        issues.extend(e.issues)
        return base


def _tools_from(value: Any, path: str, issues: List[Tuple[str, str]]) -> Dict[str, ToolType]:
    tools = {}
    if not isinstance(value, Mapping):
        issues.append((path, "expected a table of tool latency distributions"))
        return default_tools()
    for name, spec in value.items():
        try:
            if "p50" in spec:
                dist = LatencyDistribution.from_quantiles(float(spec["p50"]), float(spec["p95"]))
            else:
                dist = LatencyDistribution.from_dict(spec)
            tools[name] = ToolType(name, dist)
        except (ConfigError, KeyError, TypeError, ValueError) as e:
            issues.append((f"{path}.{name}", f"invalid distribution: {e}"))
    return tools


def config_from_dict(d: Mapping[str, Any], base: SimConfig | None = None) -> SimConfig:
    issues: List[Tuple[str, str]] = []
    cfg = _merge(base or SimConfig(), d, "", issues)
    if issues:
        raise ConfigError(issues)
    if "tools" in d and "tool_median_ms" not in d.get("cost", {}):
        cfg = cfg.with_tools(cfg.tools)
    return cfg.validate()


def load_config(path: Path) -> SimConfig:
    """
    Load a configuration document.

    Parameters:
    - path (Path): ``.json`` or ``.toml`` file.

    Returns:
    - SimConfig: defaults overridden by the document, validated.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise ConfigError([("config", f"cannot read {path}: {e}")]) from e
    try:
        if path.suffix == ".toml":
            data = tomllib.loads(raw.decode("utf-8"))
        elif path.suffix == ".json":
            data = json.loads(raw)
        else:
            raise ConfigError([("config", f"unsupported config format {path.suffix!r}; use .json or .toml")])
    except (json.JSONDecodeError, tomllib.TOMLDecodeError, UnicodeDecodeError) as e:
        raise ConfigError([("config", f"cannot parse {path}: {e}")]) from e
    LOG.info(f"Loaded config from {path}")
    return config_from_dict(data)


def apply_ablation(cfg: SimConfig, component: str) -> SimConfig:
    """Disable one component, replacing it with its baseline."""
    p = cfg.policy
    if component == "session-affinity":
        p = replace(p, affinity=False)
    elif component == "eviction":
        p = replace(p, eviction=EvictionPolicy.LRU)
    elif component == "ttl":
        p = replace(p, ttl=False)
    elif component == "prefetch":
        p = replace(p, prefetch=False)
    elif component == "stealing":
        p = replace(p, stealing=False)
    elif component == "afs":
        p = replace(p, fairness=FairnessPolicy.FCFS)
    else:
        raise ConfigError([("ablate", f"unknown component {component!r}; choose from {', '.join(ABLATION_COMPONENTS)}")])
    return replace(cfg, policy=p)


def apply_strategy(cfg: SimConfig, strategy: Strategy | str) -> SimConfig:
    """Switch the scheduling strategy; bfs also turns the cache-aware parts off."""
    try:
        strategy = Strategy(strategy)
    except ValueError as e:
        raise ConfigError([("strategy", str(e))]) from e
    p = replace(cfg.policy, strategy=strategy)
    if strategy == Strategy.BFS:
        p = replace(p, eviction=EvictionPolicy.LRU, affinity=False, ttl=False, prefetch=False, stealing=False)
    return replace(cfg, policy=p)


__all__ = [
    "AegMode",
    "ClusterConfig",
    "FairnessConfig",
    "FairnessPolicy",
    "MigrationModel",
    "PolicyConfig",
    "SimConfig",
    "Strategy",
    "TtlEstimator",
    "apply_ablation",
    "apply_strategy",
    "config_from_dict",
    "load_config",
]
