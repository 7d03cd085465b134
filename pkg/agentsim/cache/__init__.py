"""KV-cache management: eviction, TTLs, prefetching and the offline oracle."""

from agentsim.cache.eviction import EvictionPolicy, EvictionWeights, ScoreScale, eviction_score, select_victims
from agentsim.cache.oracle import (
    CacheAccess,
    CacheAccessTrace,
    belady_replay,
    build_access_trace,
    compare_policies,
    competitive_ratio,
    observation_chain_trace,
    peak_working_set,
    replay_policy,
)
from agentsim.cache.prefetch import prefetch_target
from agentsim.cache.ttl import LatencyHistory, TtlConfig, TtlEstimator, compute_ttl, memory_pressure, ttl_coverage
