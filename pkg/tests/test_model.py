#!/usr/bin/env python3
"""
Tests for the shared domain types: expected durations, latency models and serialization.
"""

import math
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from agentsim.aeg.builder import AegHint, HintStep, build_from_hints
from agentsim.core.errors import CapacityError, ConfigError
from agentsim.core.model import (
    CacheEntry,
    CostModel,
    LatencyDistribution,
    LatencyFamily,
    StepPlan,
    Task,
    WorkerState,
    expected_duration,
)


def create_test_task(steps, task_id=0):
    """Task over a hinted graph; ``steps`` are HintStep objects."""
    graph = build_from_hints(AegHint(steps=tuple(steps)))
    return Task(task_id=task_id, tenant_id="t0", aeg=graph, current_node=0, submit_time=0.0)


def test_expected_duration_single_node():
    """A one-step chain costs its prefill plus its decode."""
    cost = CostModel()
    task = create_test_task([HintStep(tool=None, continue_prob=0.0, tokens=(1000, 100))])

    assert expected_duration(task, cost) == pytest.approx(cost.prefill_ms(1000) + cost.decode_ms(100))
    assert expected_duration(task, cost) == pytest.approx(200.0 + 100 / 30 * 1000)


def test_expected_duration_linear_chain_adds_tool_medians():
    """Three certain steps with file_ops between them add two tool medians."""
    cost = CostModel()
    steps = [HintStep("file_ops", 1.0, tokens=(1000, 100)),
             HintStep("file_ops", 1.0, tokens=(1000, 100)),
             HintStep(None, 0.0, tokens=(1000, 100))]
    task = create_test_task(steps)

    per_step = cost.prefill_ms(1000) + cost.decode_ms(100)
    assert cost.tool_median_ms["file_ops"] == 45.0
    assert expected_duration(task, cost) == pytest.approx(3 * per_step + 2 * 45.0)


def test_expected_duration_immediate_termination():
    """A node that always terminates contributes only itself."""
    cost = CostModel()
    steps = [HintStep("file_ops", 0.0, tokens=(1000, 100)), HintStep(None, 0.0, tokens=(5000, 500))]
    task = create_test_task(steps)

    assert expected_duration(task, cost) == pytest.approx(cost.prefill_ms(1000) + cost.decode_ms(100))


def test_expected_duration_empty_graph():
    from agentsim.core.model import AgentExecutionGraph

    task = Task(task_id=1, tenant_id="t0", aeg=AgentExecutionGraph(nodes=()), current_node=0, submit_time=0.0)
    assert expected_duration(task, CostModel()) == 0.0


def test_expected_duration_with_retry_edge():
    """A retry back-edge makes the expectation a geometric sum."""
    cost = CostModel(prefill_rate=1000, decode_rate=1000, tool_median_ms={})
    steps = [HintStep(None, 0.0, retry_to=0, retry_prob=0.5, tokens=(100, 0))]
    task = create_test_task(steps)

    # 100 ms per visit, expected visits 1 / (1 - 0.5)
    assert expected_duration(task, cost) == pytest.approx(200.0)


def test_latency_from_quantiles_matches_table():
    dist = LatencyDistribution.from_quantiles(180.0, 2400.0)

    assert dist.median() == pytest.approx(180.0)
    assert dist.quantile(0.95) == pytest.approx(2400.0, rel=1e-6)


def test_latency_mean_cv_roundtrip():
    dist = LatencyDistribution.from_mean_cv(1200.0, 1.0)

    assert dist.mean() == pytest.approx(1200.0)
    assert math.sqrt(math.exp(dist.sigma ** 2) - 1) == pytest.approx(1.0)


def test_degenerate_latency_is_constant():
    """sigma = 0 always returns the median."""
    dist = LatencyDistribution(mu=math.log(500.0), sigma=0.0)
    rng = np.random.default_rng(7)

    assert {round(dist.sample(rng), 9) for _ in range(20)} == {500.0}


def test_empirical_latency_draws_from_samples():
    dist = LatencyDistribution(family=LatencyFamily.EMPIRICAL, samples=(10.0, 20.0, 30.0))
    rng = np.random.default_rng(1)

    assert {dist.sample(rng) for _ in range(200)} <= {10.0, 20.0, 30.0}


def test_invalid_latency_raises_config_error():
    with pytest.raises(ConfigError):
        LatencyDistribution(sigma=-1.0)
    with pytest.raises(ConfigError):
        LatencyDistribution(family=LatencyFamily.EMPIRICAL, samples=())


def test_task_dict_roundtrip_keeps_trajectory():
    task = create_test_task([HintStep("web_api", 0.9, tokens=(100, 10)), HintStep(None, 0.0, tokens=(50, 5))])
    task.trajectory = [StepPlan(0, "web_api", 120, 11, 812.5), StepPlan(1, None, 40, 6)]
    task.deadline = 1234.5

    back = Task.from_dict(task.to_dict())

    assert back.trajectory == task.trajectory
    assert back.aeg.edges == task.aeg.edges
    assert back.deadline == 1234.5


def test_worker_rejects_overfill():
    w = WorkerState(worker_id=2, kv_capacity_bytes=100)
    w.add_entry(CacheEntry(1, 2, 60, bytes_per_token=1))

    with pytest.raises(CapacityError) as exc:
        w.add_entry(CacheEntry(2, 2, 50, bytes_per_token=1))

    assert exc.value.worker_id == 2
    assert w.used_bytes == 60


def test_context_cannot_shrink():
    task = create_test_task([HintStep(None, 0.0)])
    task.advance_context(500)

    with pytest.raises(ValueError):
        task.advance_context(400)
