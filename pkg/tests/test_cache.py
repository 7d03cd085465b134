#!/usr/bin/env python3
"""
Tests for KV-cache policies: eviction scoring and victim choice, TTLs, memory pressure
and prefetch targets.
"""

import os
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from agentsim.aeg.builder import AegHint, HintStep, build_from_hints
from agentsim.cache.eviction import EvictionPolicy, EvictionWeights, eviction_score, select_victims
from agentsim.cache.prefetch import prefetch_target, reload_start_ms
from agentsim.cache.ttl import LatencyHistory, TtlConfig, TtlEstimator, compute_ttl, memory_pressure, ttl_coverage
from agentsim.core.errors import CapacityError, ConfigError
from agentsim.core.model import CacheEntry, LatencyDistribution, Task, ToolType, WorkerState
from agentsim.sim.tools import default_tools


def create_test_worker(entries, capacity=100):
    """Worker with 1-byte tokens holding (session, tokens, last_access, reuse_prob) entries."""
    w = WorkerState(worker_id=0, kv_capacity_bytes=capacity)
    for sid, tokens, last, reuse in entries:
        w.add_entry(CacheEntry(sid, 0, tokens, bytes_per_token=1, last_access=last, reuse_prob=reuse))
    return w


# ---------------------------------------------------------------- eviction_score

def test_score_fresh_reused_tiny_entry_is_zero():
    entry = CacheEntry(1, 0, 0, bytes_per_token=1, last_access=100.0, reuse_prob=1.0)

    assert eviction_score(entry, 100.0, 50.0, 1000, EvictionWeights()) == 0.0


def test_score_hand_evaluation():
    """R=0.5, P=0.6, S=0.25 with default weights: 0.15 + 0.20 + 0.05."""
    entry = CacheEntry(1, 0, 25, bytes_per_token=1, last_access=50.0, reuse_prob=0.6)

    assert eviction_score(entry, 100.0, 100.0, 100, EvictionWeights()) == pytest.approx(0.40)


def test_score_worst_entry_is_one():
    entry = CacheEntry(1, 0, 100, bytes_per_token=1, last_access=0.0, reuse_prob=0.0)

    assert eviction_score(entry, 100.0, 100.0, 100, EvictionWeights()) == pytest.approx(1.0)


def test_weights_are_normalized():
    w = EvictionWeights(3, 5, 2)

    assert (w.alpha, w.beta, w.gamma) == pytest.approx((0.3, 0.5, 0.2))


def test_negative_weights_rejected():
    with pytest.raises(ConfigError):
        EvictionWeights(-0.1, 0.5, 0.2)


@settings(deadline=None, max_examples=200)
@given(st.floats(0, 1e6), st.floats(0, 1), st.integers(0, 10_000), st.floats(0, 1e6), st.integers(0, 10_000),
       st.floats(0.01, 1), st.floats(0.01, 1), st.floats(0.01, 1))
def test_score_stays_in_unit_interval(age, reuse, tokens, tau_max, size_max, a, b, g):
    entry = CacheEntry(1, 0, tokens, bytes_per_token=1, last_access=0.0, reuse_prob=reuse)

    score = eviction_score(entry, age, tau_max, size_max, EvictionWeights(a, b, g))

    assert 0.0 <= score <= 1.0 + 1e-12


# ---------------------------------------------------------------- select_victims

def test_select_nothing_needed():
    w = create_test_worker([(1, 50, 0.0, 0.0)])

    assert select_victims(w, 0, EvictionPolicy.WA_LRU, 10.0) == []


def test_select_highest_score_first():
    """Either entry frees enough; the one scoring higher goes."""
    w = create_test_worker([(1, 40, 0.0, 0.0), (2, 40, 90.0, 1.0)])

    assert select_victims(w, 30, EvictionPolicy.WA_LRU, 100.0) == [1]


def test_lru_ignores_reuse_and_wa_lru_does_not():
    """A is older but will be reused; B is newer and will not."""
    entries = [(1, 40, 0.0, 1.0), (2, 40, 100.0, 0.0)]

    assert select_victims(create_test_worker(entries), 30, EvictionPolicy.LRU, 100.0) == [1]
    assert select_victims(create_test_worker(entries), 30, EvictionPolicy.WA_LRU, 100.0) == [2]


def test_select_skips_pinned_and_excluded():
    w = create_test_worker([(1, 40, 0.0, 0.0), (2, 40, 0.0, 0.0), (3, 20, 0.0, 0.0)])
    w.resident[1].pinned = True

    assert select_victims(w, 20, EvictionPolicy.LRU, 10.0, exclude=(2,)) == [3]
    with pytest.raises(CapacityError):
        select_victims(w, 30, EvictionPolicy.LRU, 10.0, exclude=(2,))


def test_select_prefers_unprotected_entries():
    """An entry under TTL only goes when the rest cannot cover the need."""
    w = create_test_worker([(1, 40, 0.0, 0.0), (2, 40, 50.0, 0.0)])
    w.resident[1].set_ttl(0.0, 1000.0)

    assert select_victims(w, 30, EvictionPolicy.LRU, 100.0) == [2]
    assert select_victims(w, 60, EvictionPolicy.LRU, 100.0) == [2, 1]


def test_select_request_above_capacity():
    w = create_test_worker([], capacity=100)

    with pytest.raises(CapacityError):
        select_victims(w, 101, EvictionPolicy.WA_LRU, 0.0)


@settings(deadline=None, max_examples=100)
@given(st.lists(st.tuples(st.integers(1, 30), st.floats(0, 100), st.floats(0, 1)), min_size=1, max_size=8),
       st.integers(1, 100), st.sampled_from(list(EvictionPolicy)))
def test_victims_free_enough_bytes(specs, need, policy):
    entries = [(i, tokens, last, reuse) for i, (tokens, last, reuse) in enumerate(specs)]
    w = create_test_worker(entries, capacity=300)
    total = sum(tokens for _, tokens, _, _ in entries)
    if need > total:
        with pytest.raises(CapacityError):
            select_victims(w, need, policy, 100.0)
        return

    victims = select_victims(w, need, policy, 100.0)

    assert len(set(victims)) == len(victims)
    assert sum(w.resident[v].bytes for v in victims) >= need
    # minimal prefix: dropping the last victim would not be enough
    assert sum(w.resident[v].bytes for v in victims[:-1]) < need


# ---------------------------------------------------------------- TTL / pressure

def test_ttl_uses_history_percentile():
    tool = default_tools()["code_execution"]
    history = [2400.0] * 20

    assert compute_ttl(tool, history, TtlConfig(), 0.0) == pytest.approx(2400.0)
    assert compute_ttl(tool, history, TtlConfig(), 1.0) == pytest.approx(1200.0)


def test_ttl_capped_at_max():
    tool = default_tools()["web_api"]

    assert compute_ttl(tool, [900_000.0], TtlConfig(), 0.0) == 300_000.0


def test_ttl_falls_back_to_tool_distribution():
    tool = default_tools()["code_execution"]

    assert compute_ttl(tool, [], TtlConfig(), 0.0) == pytest.approx(2400.0, rel=1e-6)


def test_ttl_lognormal_estimator_uses_fit():
    tool = ToolType("sampled", LatencyDistribution.constant(1.0))
    fit = LatencyDistribution.from_quantiles(100.0, 500.0)
    cfg = TtlConfig(estimator=TtlEstimator.LOGNORMAL)

    assert compute_ttl(tool, [1.0, 2.0], cfg, 0.0, fit=fit) == pytest.approx(500.0, rel=1e-6)


def test_ttl_config_validation():
    with pytest.raises(ConfigError):
        TtlConfig(low=0.9, high=0.7)


@pytest.mark.parametrize("used,expected", [(70, 0.0), (80, 0.5), (95, 1.0), (10, 0.0)])
def test_memory_pressure(used, expected):
    assert memory_pressure(used, 100) == pytest.approx(expected)


def test_latency_history_window_is_bounded():
    history = LatencyHistory(TtlConfig(window=3))
    for x in (1.0, 2.0, 3.0, 4.0):
        history.observe("db", x)

    assert list(history.samples("db")) == [2.0, 3.0, 4.0]
    assert history.fit("db") is not None
    assert history.fit("other") is None


@pytest.mark.parametrize("cv", [1.0, 3.0])
def test_ttl_coverage_holds_across_variance(cv):
    """The windowed p95 TTL covers at least 90% of calls however heavy the tail."""
    dist = LatencyDistribution.from_mean_cv(1200.0, cv)

    assert ttl_coverage(dist, 3000, TtlConfig(), seed=0) >= 0.90


def test_ttl_coverage_degrades_with_variance():
    """A moment-fitted log-normal loses coverage as tool latency gets heavier-tailed."""
    cfg = TtlConfig(estimator=TtlEstimator.LOGNORMAL)
    low = np.mean([ttl_coverage(LatencyDistribution.from_mean_cv(1200.0, 1.0), 3000, cfg, seed=s) for s in range(3)])
    high = np.mean([ttl_coverage(LatencyDistribution.from_mean_cv(1200.0, 3.0), 3000, cfg, seed=s) for s in range(3)])

    assert high < low


# ---------------------------------------------------------------- prefetch

def create_branch_task(p1, p2):
    steps = (HintStep("web_api", branches=((1, p1), (2, p2))), HintStep(None, 0.0), HintStep(None, 0.0))
    graph = build_from_hints(AegHint(steps=steps))
    return Task(task_id=0, tenant_id="t0", aeg=graph, current_node=0, submit_time=0.0), graph


def test_prefetch_most_likely_successor():
    task, graph = create_branch_task(0.4, 0.6)

    assert prefetch_target(task, graph) == 2


def test_prefetch_tie_goes_to_lower_node():
    task, graph = create_branch_task(0.5, 0.5)

    assert prefetch_target(task, graph) == 1


def test_prefetch_terminal_is_none():
    task, graph = create_branch_task(0.5, 0.5)
    task.current_node = 2

    assert prefetch_target(task, graph) is None


def test_reload_lands_at_predicted_return():
    assert reload_start_ms(1000.0, 800.0, 300.0, now_ms=1100.0) == 1500.0
    assert reload_start_ms(1000.0, 100.0, 300.0, now_ms=1100.0) == 1100.0
