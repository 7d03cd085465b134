#!/usr/bin/env python3
"""
Tests for cache-affinity routing, work stealing and KV-cache migration.
"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from agentsim.core.errors import ConfigError
from agentsim.core.events import EventKind
from agentsim.core.model import CacheEntry, LatencyDistribution, Request
from agentsim.scheduler.routing import ClusterState, least_loaded, route, route_round_robin
from agentsim.scheduler.stealing import (
    MigrationModel,
    StealAction,
    StealConfig,
    complete_migration,
    execute_migration,
    load_ratio,
    maybe_steal,
    migration_latency_ms,
)


def create_test_cluster(loads, capacity=10_000):
    cluster = ClusterState.build(len(loads), capacity, lanes=1, seed=0)
    for w, load in zip(cluster.workers, loads):
        w.load = load
    return cluster


def create_test_request(session_id, est_ms=500.0):
    return Request(session_id=session_id, tenant_id="t0", step_index=1, enqueued_ms=0.0, est_ms=est_ms)


def cache_session(cluster, worker_id, session_id, tokens=1000):
    cluster.workers[worker_id].add_entry(CacheEntry(session_id, worker_id, tokens, bytes_per_token=1))
    cluster.session_affinity[session_id] = worker_id


def always_room(worker, nbytes):
    return True


# ---------------------------------------------------------------- route

def test_route_keeps_cached_session_home():
    cluster = create_test_cluster([0.5, 0.1])
    cache_session(cluster, 0, 7)

    assert route((7, 1200), cluster) == 0


def test_route_leaves_overloaded_home():
    cluster = create_test_cluster([0.9, 0.1, 0.3])
    cache_session(cluster, 0, 7)

    assert route((7, 1200), cluster) == 1
    assert cluster.session_affinity[7] == 1


def test_route_new_session_ties_go_to_lowest_id():
    cluster = create_test_cluster([0.2, 0.0, 0.0])

    assert route((1, 100), cluster) == 1


def test_route_ignores_affinity_without_cache():
    cluster = create_test_cluster([0.1, 0.0])
    cluster.session_affinity[3] = 0

    assert route((3, 100), cluster) == 1


def test_route_ignores_cache_in_flight():
    cluster = create_test_cluster([0.1, 0.0])
    cache_session(cluster, 0, 3)
    cluster.workers[0].resident[3].migrating_to = 1

    assert route((3, 100), cluster) == 1


def test_route_theta_is_configurable():
    cluster = create_test_cluster([0.5, 0.0])
    cache_session(cluster, 0, 7)

    assert route((7, 100), cluster, theta=0.4) == 1


def test_round_robin_cycles():
    cluster = create_test_cluster([0.0, 0.0, 0.0])

    assert [route_round_robin(cluster) for _ in range(5)] == [0, 1, 2, 0, 1]


def test_least_loaded_with_nothing_left():
    with pytest.raises(ValueError):
        least_loaded(create_test_cluster([0.0]), exclude=[0])


def test_loads_follow_queued_work():
    cluster = create_test_cluster([0.0, 0.0])
    cluster.workers[0].queue.append(create_test_request(1, est_ms=5000.0))

    cluster.recompute_loads(window_ms=10_000)

    assert [w.load for w in cluster.workers] == [0.5, 0.0]


# ---------------------------------------------------------------- maybe_steal

def test_load_ratio_edge_cases():
    assert load_ratio(create_test_cluster([0.0, 0.0])) == 1.0
    assert load_ratio(create_test_cluster([0.8, 0.2])) == pytest.approx(4.0)
    assert load_ratio(create_test_cluster([0.5, 0.0])) == float("inf")


def test_steal_from_busy_worker_to_idle_one():
    cluster = create_test_cluster([0.9, 0.0])
    cluster.workers[0].queue.append(create_test_request(11))
    cluster.workers[0].idle_since = None

    action = maybe_steal(cluster, StealConfig(), now=120.0)

    assert action == StealAction(thief=1, victim=0, session_id=11)


def test_no_steal_when_balanced():
    cluster = create_test_cluster([0.6, 0.4])
    cluster.workers[0].queue.append(create_test_request(11))
    cluster.workers[0].idle_since = None

    assert maybe_steal(cluster, StealConfig(), now=120.0) is None


def test_no_steal_before_idle_threshold():
    cluster = create_test_cluster([0.9, 0.0])
    cluster.workers[0].queue.append(create_test_request(11))
    cluster.workers[0].idle_since = None

    assert maybe_steal(cluster, StealConfig(), now=50.0) is None


def test_steal_takes_oldest_eligible_request():
    cluster = create_test_cluster([0.9, 0.0])
    stolen = create_test_request(11)
    stolen.stolen = True
    cluster.workers[0].queue.extend([stolen, create_test_request(12), create_test_request(13)])
    cluster.workers[0].idle_since = None

    assert maybe_steal(cluster, StealConfig(), now=200.0).session_id == 12


def test_steal_config_validation():
    with pytest.raises(ConfigError):
        StealConfig(r_max=0.5)
    with pytest.raises(ConfigError):
        StealConfig(t_idle_ms=-1)


# ---------------------------------------------------------------- migration

def test_execute_migration_moves_request_and_cache():
    cfg = StealConfig(latency=LatencyDistribution.constant(230.0))
    cluster = create_test_cluster([0.9, 0.0])
    cache_session(cluster, 0, 11, tokens=1000)
    cluster.workers[0].queue.append(create_test_request(11))

    event = execute_migration(StealAction(thief=1, victim=0, session_id=11), cluster, now=120.0, cfg=cfg)

    assert event.kind == EventKind.MIGRATE_DONE
    assert event.time_us == 350_000
    assert event.payload == {"src": 0, "dst": 1, "bytes": 1000, "reason": "steal"}
    assert cluster.workers[0].queue == []
    moved = cluster.workers[1].queue[0]
    assert moved.stolen and moved.blocked
    assert cluster.workers[1].idle_since is None
    assert cluster.workers[0].resident[11].migrating_to == 1

    assert complete_migration(cluster, event, always_room)
    assert 11 in cluster.workers[1].resident and 11 not in cluster.workers[0].resident
    assert cluster.session_affinity[11] == 1
    assert cluster.workers[1].used_bytes == 1000


def test_stale_steal_is_rejected():
    cluster = create_test_cluster([0.9, 0.0, 0.0])
    cluster.workers[0].queue.append(create_test_request(11))
    action = StealAction(thief=1, victim=0, session_id=11)

    assert execute_migration(action, cluster, now=120.0) is not None
    assert execute_migration(action, cluster, now=121.0) is None
    assert execute_migration(StealAction(thief=2, victim=1, session_id=11), cluster, now=122.0) is None


def test_steal_rejected_once_loads_even_out():
    cluster = create_test_cluster([0.9, 0.0])
    cluster.workers[0].queue.append(create_test_request(11))
    action = maybe_steal(cluster, StealConfig(), now=120.0)
    cluster.workers[1].load = 0.6  # thief picked up routed work between proposal and execution

    assert execute_migration(action, cluster, now=120.0) is None
    assert [r.session_id for r in cluster.workers[0].queue] == [11]
    assert not cluster.workers[0].queue[0].stolen


def test_steal_rejected_when_thief_is_busy():
    cluster = create_test_cluster([0.9, 0.0])
    cluster.workers[0].queue.append(create_test_request(11))
    action = maybe_steal(cluster, StealConfig(), now=120.0)
    cluster.workers[1].running[12] = create_test_request(12)

    assert execute_migration(action, cluster, now=120.0) is None
    assert cluster.workers[1].queue == []


def test_steal_without_cache_is_not_blocked():
    cluster = create_test_cluster([0.9, 0.0])
    cluster.workers[0].queue.append(create_test_request(11))

    execute_migration(StealAction(thief=1, victim=0, session_id=11), cluster, now=120.0)

    assert not cluster.workers[1].queue[0].blocked
    assert cluster.session_affinity[11] == 1


def test_migration_aborts_when_entry_evicted_in_flight():
    cluster = create_test_cluster([0.9, 0.0])
    cache_session(cluster, 0, 11)
    cluster.workers[0].queue.append(create_test_request(11))
    event = execute_migration(StealAction(thief=1, victim=0, session_id=11), cluster, now=120.0)

    cluster.workers[0].remove_entry(11)

    assert not complete_migration(cluster, event, always_room)
    assert 11 not in cluster.workers[1].resident


def test_migration_aborts_without_room():
    cluster = create_test_cluster([0.9, 0.0], capacity=1500)
    cache_session(cluster, 0, 11, tokens=1000)
    cluster.workers[1].add_entry(CacheEntry(99, 1, 1000, bytes_per_token=1))
    cluster.workers[0].queue.append(create_test_request(11))
    event = execute_migration(StealAction(thief=1, victim=0, session_id=11), cluster, now=120.0)

    assert not complete_migration(cluster, event, lambda worker, nbytes: False)
    assert cluster.workers[0].resident[11].migrating_to is None


def test_bandwidth_migration_latency():
    cfg = StealConfig(model=MigrationModel.BANDWIDTH, bandwidth_gbps=10.0, fixed_ms=5.0)

    assert migration_latency_ms(cfg, 1_000_000_000, np.random.default_rng(0)) == pytest.approx(105.0)
