#!/usr/bin/env python3
"""
Tests for the simulation engine, the step cost model and synthetic workloads.
"""

import os
import sys
from collections import Counter

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from agentsim.aeg.builder import AegHint, build_from_hints
from agentsim.core.events import EventKind, EventLog, SimEvent
from agentsim.core.model import CostModel, StepPlan, Task
from agentsim.settings import SimConfig, apply_strategy, config_from_dict
from agentsim.sim.audit import audit_log, check_conservation, check_token_accounting
from agentsim.sim.costs import step_cost
from agentsim.sim.engine import run
from agentsim.sim.tools import default_tools, sample_tool_latency, tools_with_cv
from agentsim.sim.workload import (
    WorkloadSpec,
    generate_workload,
    geometric_p_for_mean,
    offered_load,
    read_workload,
    write_workload,
)


def create_test_config(**overrides):
    return config_from_dict(overrides)


def create_test_workload(kind="swebench", n_tasks=12, seed=0, cfg=None, **spec_overrides):
    cfg = cfg or SimConfig()
    spec = WorkloadSpec.for_kind(kind, n_tasks=n_tasks, **spec_overrides)
    return generate_workload(spec, seed=seed, tools=cfg.tools, cost_model=cfg.cost)


def assert_clean_audit(result, cfg):
    problems = audit_log(result.log, cfg.cluster.kv_capacity_bytes)
    assert problems == {"causality": [], "capacity": [], "conservation": [],
                        "token_accounting": [], "anti_thrash": []}


# ---------------------------------------------------------------- step_cost

def test_step_cost_cold_prompt():
    prefill, decode, regen = step_cost(1000, 0, 100, CostModel())

    assert prefill == pytest.approx(200.0)
    assert decode == pytest.approx(100 / 30 * 1000)
    assert regen == 1000


def test_step_cost_partial_hit():
    prefill, _decode, regen = step_cost(1000, 400, 0, CostModel())

    assert regen == 600
    assert prefill == pytest.approx(120.0)


def test_step_cost_rejects_impossible_counts():
    with pytest.raises(ValueError):
        step_cost(100, 200, 10, CostModel())
    with pytest.raises(ValueError):
        step_cost(100, -1, 10, CostModel())


# ---------------------------------------------------------------- tools

def test_sample_tool_latency_is_rounded_and_positive():
    rng = np.random.default_rng(4)
    tool = default_tools()["web_api"]

    draws = [sample_tool_latency(tool, rng) for _ in range(4000)]

    assert all(x > 0 and round(x, 3) == x for x in draws)
    assert np.median(draws) == pytest.approx(850.0, rel=0.1)


def test_tools_with_cv_share_one_distribution():
    tools = tools_with_cv(1200.0, 2.0)

    assert set(tools) == {"code_execution", "file_ops", "web_api", "database"}
    assert {t.latency for t in tools.values()} == {tools["file_ops"].latency}
    assert tools["file_ops"].latency.mean() == pytest.approx(1200.0)


# ---------------------------------------------------------------- workloads

def test_swebench_step_counts():
    tasks = create_test_workload("swebench", n_tasks=2000, seed=11)
    steps = np.array([len(t.trajectory) for t in tasks])

    assert steps.mean() == pytest.approx(37, abs=3)
    assert steps.min() >= 1 and steps.max() <= 150
    assert all(t.trajectory[-1].tool is None for t in tasks)


def test_geometric_mean_inversion():
    p = geometric_p_for_mean(37, 150)
    k = np.arange(1, 151)
    w = (1 - p) ** (k - 1)

    assert float(np.sum(k * w) / np.sum(w)) == pytest.approx(37, rel=1e-6)


def test_multitenant_heavy_arrival_rate():
    """Heavy tenants submit 16 tasks a minute each."""
    cfg = SimConfig()
    spec = WorkloadSpec.for_kind("multitenant", horizon_ms=600_000)
    tasks = generate_workload(spec, seed=2, tools=cfg.tools, cost_model=cfg.cost)

    counts = Counter(t.tenant_id for t in tasks)

    for i in range(3):
        assert abs(counts[f"heavy-{i}"] - 160) <= 50
    assert all(len(t.trajectory) == 100 for t in tasks if t.tenant_id.startswith("heavy"))
    assert all(t.deadline > t.submit_time for t in tasks)


def test_workload_file_roundtrip(tmp_path):
    spec = WorkloadSpec.for_kind("webarena", n_tasks=5)
    cfg = SimConfig()
    tasks = generate_workload(spec, seed=1, tools=cfg.tools, cost_model=cfg.cost)

    header, back = read_workload(write_workload(tasks, spec, 1, tmp_path / "w.ndjson", "v-test"))

    assert header["seed"] == 1 and header["version"] == "v-test"
    assert WorkloadSpec.from_dict(header["spec"]) == spec
    assert [t.trajectory for t in back] == [t.trajectory for t in tasks]


def test_offered_load_scales_with_rate():
    spec = WorkloadSpec.for_kind("swebench")
    base = offered_load(spec, CostModel(), 64)

    assert offered_load(spec.scaled(2.0), CostModel(), 64) == pytest.approx(2 * base)


# ---------------------------------------------------------------- engine

def test_empty_workload():
    result = run(SimConfig(), [])

    assert len(result.log) == 0
    assert result.metrics.tasks_total == 0
    assert result.metrics.tct_mean_ms == 0.0


def test_single_task_completion_time():
    """prefill 200 + decode 3333.333, tool 45 after 1us, then 100 + 1666.667 with 1100 tokens cached."""
    cfg = create_test_config(cluster={"workers": 1}, policy={"prefix_fraction": 0.0})
    task = Task(task_id=0, tenant_id="solo", aeg=build_from_hints(AegHint.react(["file_ops", None], 0.9)),
                current_node=0, submit_time=0.0,
                trajectory=[StepPlan(0, "file_ops", 1000, 100, 45.0), StepPlan(1, None, 500, 50)])

    result = run(cfg, [task])

    done = result.tasks[0]
    assert done.finish_time == pytest.approx(5345.001)
    assert [r.cached_tokens for r in done.records] == [0, 1100]
    assert result.metrics.recomputed_tokens == 0
    kinds = [e.kind for e in result.log if e.task_id == 0]
    assert kinds == [EventKind.TASK_ARRIVE, EventKind.STEP_START_PREFILL, EventKind.STEP_START_DECODE,
                     EventKind.STEP_DONE, EventKind.TOOL_START, EventKind.TOOL_DONE,
                     EventKind.STEP_START_PREFILL, EventKind.STEP_START_DECODE, EventKind.STEP_DONE,
                     EventKind.TASK_FINISH]
    assert_clean_audit(result, cfg)


def test_runs_are_deterministic():
    cfg = create_test_config(cluster={"workers": 2, "lanes_per_worker": 2})
    tasks = create_test_workload("webarena", n_tasks=10, seed=5)

    first = run(cfg, tasks, seed=9)
    second = run(cfg, tasks, seed=9)

    assert [e.to_dict() for e in first.log] == [e.to_dict() for e in second.log]
    assert first.metrics.to_dict() == second.metrics.to_dict()


def test_replay_leaves_input_tasks_untouched():
    tasks = create_test_workload("triage", n_tasks=4)

    run(SimConfig(), tasks)

    assert all(t.finish_time is None and not t.records for t in tasks)


def test_token_accounting_flags_lost_tokens():
    log = EventLog([
        SimEvent(0, EventKind.STEP_START_PREFILL, 1, {"worker": 0, "step": 0, "prompt": 4000, "cached": 0,
                                                      "regen": 4000, "bytes": 4000}),
        SimEvent(10, EventKind.STEP_START_PREFILL, 1, {"worker": 0, "step": 1, "prompt": 4000, "cached": 3500,
                                                       "regen": 400, "bytes": 4000}),
    ])

    problems = check_token_accounting(log)

    assert len(problems) == 1
    assert "step 1" in problems[0]


def test_conservation_flags_session_on_two_workers():
    log = EventLog([
        SimEvent(0, EventKind.STEP_START_PREFILL, 7, {"worker": 0, "step": 0, "bytes": 100}),
        SimEvent(5, EventKind.PREFETCH_START, 7, {"worker": 1, "bytes": 100}),
    ])

    assert len(check_conservation(log)) == 1


def create_test_reload_pair(prefetch):
    """Session 0 waits on a 5 s tool; session 1 arrives meanwhile and pushes it out of a 2048-token worker."""
    cfg = create_test_config(cluster={"workers": 1, "kv_capacity_gb": 2.0}, cost={"bytes_per_token": 2**20},
                             policy={"prefix_fraction": 0.0, "prefetch": prefetch, "stealing": False})
    paused = Task(task_id=0, tenant_id="solo", aeg=build_from_hints(AegHint.react(["file_ops", None], 0.9)),
                  current_node=0, submit_time=0.0,
                  trajectory=[StepPlan(0, "file_ops", 800, 100, 5000.0), StepPlan(1, None, 100, 10)])
    intruder = Task(task_id=1, tenant_id="solo", aeg=build_from_hints(AegHint.react([None], 0.9)),
                    current_node=0, submit_time=4000.0, trajectory=[StepPlan(0, None, 1500, 100)])
    return cfg, [paused, intruder]


def test_prefetch_reloads_predicted_session_before_tool_returns():
    cfg, tasks = create_test_reload_pair(prefetch=True)

    result = run(cfg, tasks)

    log = [e for e in result.log if e.task_id == 0]
    kinds = [e.kind for e in log]
    assert EventKind.EVICT in kinds
    assert kinds.index(EventKind.PREFETCH_START) < kinds.index(EventKind.TOOL_DONE)
    reload_at = next(e.time_us for e in log if e.kind == EventKind.PREFETCH_START)
    assert reload_at > 7_633_334  # only once session 1 finished and its entry became evictable
    assert result.metrics.prefetch_tokens == 900
    assert [r.cached_tokens for r in result.tasks[0].records] == [0, 900]
    assert result.metrics.recomputed_tokens == 0
    assert_clean_audit(result, cfg)


def test_without_prefetch_evicted_session_recomputes():
    cfg, tasks = create_test_reload_pair(prefetch=False)

    result = run(cfg, tasks)

    assert not result.log.of_kind(EventKind.PREFETCH_START)
    assert [r.cached_tokens for r in result.tasks[0].records] == [0, 0]
    assert result.metrics.recomputed_tokens == 900


@pytest.mark.slow
def test_audit_clean_under_memory_pressure():
    cfg = create_test_config(cluster={"workers": 2, "lanes_per_worker": 4, "kv_capacity_gb": 8.0},
                             max_context_tokens=8192)
    tasks = create_test_workload("swebench", n_tasks=16, seed=3, batch=True)

    result = run(cfg, tasks)

    assert result.metrics.evictions > 0
    assert result.metrics.tasks_unfinished == 0
    assert_clean_audit(result, cfg)


@pytest.mark.slow
def test_stealing_relieves_hot_worker():
    """Every hotcold task starts on worker 0; idle worker 1 steals from it."""
    on = create_test_config(cluster={"workers": 2, "lanes_per_worker": 4})
    off = create_test_config(cluster={"workers": 2, "lanes_per_worker": 4}, policy={"stealing": False})

    for seed in range(3):
        tasks = create_test_workload("hotcold", n_tasks=40, seed=seed)
        with_steal = run(on, tasks)
        without = run(off, tasks)

        assert with_steal.metrics.steals > 0
        assert without.metrics.steals == 0
        assert with_steal.metrics.steals_per_task == pytest.approx(with_steal.metrics.steals / len(tasks))
        assert without.metrics.steals_per_task == 0.0
        assert len(with_steal.log.of_kind(EventKind.STEAL)) == with_steal.metrics.steals
        assert_clean_audit(with_steal, on)


def utilization_spread(metrics):
    return max(metrics.worker_utilization) - min(metrics.worker_utilization)


@pytest.mark.slow
def test_stealing_evens_out_worker_utilization():
    """Affinity never lets go (theta above any load) and preemption is off, so only steals move work."""
    base = {"cluster": {"workers": 2, "lanes_per_worker": 4}, "fairness": {"preemption": False}}
    on = create_test_config(policy={"theta": 2.0}, **base)
    off = create_test_config(policy={"theta": 2.0, "stealing": False}, **base)

    for seed in range(3):
        tasks = create_test_workload("hotcold", n_tasks=12, seed=seed)
        with_steal = run(on, tasks).metrics
        without = run(off, tasks).metrics

        assert with_steal.worker_utilization[1] > 0.0
        assert utilization_spread(with_steal) < utilization_spread(without)


@pytest.mark.slow
def test_dfs_strategy_completes_workload():
    cfg = apply_strategy(create_test_config(cluster={"workers": 2, "lanes_per_worker": 2}), "dfs")
    tasks = create_test_workload("triage", n_tasks=10, seed=1)

    result = run(cfg, tasks)

    assert result.metrics.tasks_unfinished == 0
    assert_clean_audit(result, cfg)


def create_test_batch(n_tasks=12):
    """Three-step tasks, all at t=0, whose tool calls last about three times a step's compute."""
    hint = AegHint.react(["web_api", "web_api", None], 1.0, tokens=[(200, 100)] * 3)
    return [Task(task_id=i, tenant_id="batch", aeg=build_from_hints(hint), current_node=0, submit_time=0.0,
                 trajectory=[StepPlan(0, "web_api", 200, 100, 8000.0 + 500 * (i % 4)),
                             StepPlan(1, "web_api", 200, 100, 8000.0 + 500 * ((i + 1) % 4)),
                             StepPlan(2, None, 200, 100)])
            for i in range(n_tasks)]


@pytest.mark.slow
def test_strategies_trade_throughput_for_evictions():
    """
    One worker, two lanes, room for 2048 tokens. Hybrid reserves 450 tokens a task and
    admits four at a time, leaving lanes idle during tool calls; bfs admits all twelve
    and thrashes; dfs runs one task at a time.
    """
    base = create_test_config(cluster={"workers": 1, "lanes_per_worker": 2, "kv_capacity_gb": 2.0},
                              cost={"bytes_per_token": 2**20}, warmup_ms=0.0)
    tasks = create_test_batch()

    metrics = {s: run(apply_strategy(base, s), tasks).metrics for s in ("bfs", "hybrid", "dfs")}

    assert all(m.tasks_unfinished == 0 for m in metrics.values())
    assert metrics["bfs"].throughput_per_min > metrics["hybrid"].throughput_per_min > metrics["dfs"].throughput_per_min
    assert metrics["bfs"].evict_rate > metrics["hybrid"].evict_rate > metrics["dfs"].evict_rate
    assert metrics["dfs"].evict_rate == 0.0


def test_afs_history_is_recorded_on_request():
    cfg = create_test_config(cluster={"workers": 1})
    tasks = create_test_workload("triage", n_tasks=3)

    result = run(cfg, tasks, record_afs=True)

    assert result.afs_history
    assert {"epoch", "tenant", "urgency", "allocation", "service_ms"} <= set(result.afs_history[0])
