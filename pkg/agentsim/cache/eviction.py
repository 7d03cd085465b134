"""eviction.py : Victim selection for a worker's KV pool.

Four policies share one selection routine and differ only in how candidates are
ordered:

- wa-lru: workflow-aware score mixing staleness, expected non-reuse and size.
- lru: least recently accessed first.
- prefix-lru: LRU order.
- evict-all: LRU order; the simulator also drops every entry when its tool call starts.

wa-lru and prefix-lru run on a prefix-sharing engine: the global shared prefix of a
prompt is never charged as regeneration. lru and evict-all have no prefix sharing.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, Iterable, List, Optional

from agentsim import config
from agentsim.core.errors import CapacityError, ConfigError
from agentsim.core.model import CacheEntry, WorkerState

LOG = logging.getLogger(__name__)


class EvictionPolicy(str, Enum):
    WA_LRU = "wa-lru"
    LRU = "lru"
    PREFIX_LRU = "prefix-lru"
    EVICT_ALL = "evict-all"

    @property
    def shares_prefix(self) -> bool:
        return self in (EvictionPolicy.WA_LRU, EvictionPolicy.PREFIX_LRU)


@dataclass(frozen=True)
class EvictionWeights:
    """Score weights, normalized to sum to 1 on construction."""

    alpha: float = config.ALPHA
    beta: float = config.BETA
    gamma: float = config.GAMMA

    def __post_init__(self):
        issues = [(f"weights.{k}", f"must be >= 0, got {v}")
                  for k, v in (("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)) if v < 0]
        total = self.alpha + self.beta + self.gamma
        if not issues and total <= 0:
            issues.append(("weights", "alpha + beta + gamma must be > 0"))
        if issues:
            raise ConfigError(issues)
        object.__setattr__(self, "alpha", self.alpha / total)
        object.__setattr__(self, "beta", self.beta / total)
        object.__setattr__(self, "gamma", self.gamma / total)

    def to_dict(self) -> Dict[str, float]:
        return {"alpha": self.alpha, "beta": self.beta, "gamma": self.gamma}


@dataclass
class ScoreScale:
    """Running maxima of staleness and size used to normalize scores.

    The simulator resets these every epoch; they only ever grow in between.
    """

    tau_max: float = 0.0
    size_max: int = 0

    def observe(self, entries: Iterable[CacheEntry], now: float) -> None:
        for e in entries:
            self.tau_max = max(self.tau_max, now - e.last_access)
            self.size_max = max(self.size_max, e.bytes)

    def reset(self) -> None:
        self.tau_max = 0.0
        self.size_max = 0


def eviction_score(entry: CacheEntry, now: float, tau_max: float, size_max: int,
                   weights: EvictionWeights) -> float:
    """
    Workflow-aware eviction score; higher means evict sooner.

    Parameters:
    - entry (CacheEntry): candidate.
    - now (float): current time in ms.
    - tau_max (float): largest staleness in the pool (ms).
    - size_max (int): largest entry size in the pool (bytes).
    - weights (EvictionWeights): normalized alpha, beta, gamma.

    Returns:
    - float: score in [0, 1]. Zero maxima contribute 0 for their term.
    """
    tau = max(0.0, now - entry.last_access)
    staleness = tau / tau_max if tau_max > 0 else 0.0
    size = entry.bytes / size_max if size_max > 0 else 0.0
    return weights.alpha * min(1.0, staleness) + weights.beta * (1.0 - entry.reuse_prob) + weights.gamma * min(1.0, size)


def _order(candidates: List[CacheEntry], policy: EvictionPolicy, now: float,
           weights: EvictionWeights, scale: Optional[ScoreScale]) -> List[CacheEntry]:
    if policy == EvictionPolicy.WA_LRU:
        if scale is None:
            scale = ScoreScale()
        scale.observe(candidates, now)
        key: Callable[[CacheEntry], tuple] = lambda e: (
            -eviction_score(e, now, scale.tau_max, scale.size_max, weights), e.session_id)
    else:
        key = lambda e: (e.last_access, e.session_id)
    return sorted(candidates, key=key)


def _prefix(ordered: List[CacheEntry], bytes_needed: int) -> Optional[List[int]]:
    freed, out = 0, []
    for e in ordered:
        if freed >= bytes_needed:
            break
        out.append(e.session_id)
        freed += e.bytes
    return out if freed >= bytes_needed else None


def select_victims(worker: WorkerState, bytes_needed: int, policy: EvictionPolicy, now: float,
                   weights: Optional[EvictionWeights] = None, scale: Optional[ScoreScale] = None,
                   exclude: Iterable[int] = ()) -> List[int]:
    """
    Choose entries to evict so that at least ``bytes_needed`` more bytes become free.

    Candidates are ordered by the policy and the shortest leading run that frees enough
    is returned. Pinned entries and ``exclude`` are never chosen. Entries whose TTL has
    not expired are only taken once the unprotected ones cannot free enough; at that
    point the allocation would push occupancy past capacity, which is hard pressure.

    Args:
        worker: pool to evict from.
        bytes_needed: shortfall to cover, in bytes (<= 0 means nothing to do).
        policy: candidate ordering.
        now: current time in ms.
        weights: WA-LRU weights (defaults when omitted).
        scale: running score maxima; computed from the candidates when omitted.
        exclude: session ids that must stay.

    Returns:
        Session ids in eviction order.

    Raises:
        CapacityError: the request exceeds the pool or the evictable entries cannot
            cover it.
    """
    if bytes_needed <= 0:
        return []
    if bytes_needed > worker.kv_capacity_bytes:
        raise CapacityError(f"{bytes_needed} bytes exceed KV capacity {worker.kv_capacity_bytes}",
                            worker_id=worker.worker_id, bytes_needed=bytes_needed)

    weights = weights or EvictionWeights()
    skip = set(exclude)
    candidates = [e for sid, e in worker.resident.items() if sid not in skip and not e.pinned]
    ordered = _order(candidates, policy, now, weights, scale)

    unprotected = [e for e in ordered if not e.protected(now)]
    victims = _prefix(unprotected, bytes_needed)
    if victims is not None:
        return victims

    # hard pressure: protected entries yield, still in policy order
    protected = [e for e in ordered if e.protected(now)]
    victims = _prefix(unprotected + protected, bytes_needed)
    if victims is None:
        raise CapacityError(f"cannot free {bytes_needed} bytes from {len(candidates)} evictable entries",
                            worker_id=worker.worker_id, bytes_needed=bytes_needed)
    LOG.debug(f"Worker {worker.worker_id}: TTL protection overridden for {len(victims)} victims")
    return victims
