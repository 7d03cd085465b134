"""stealing.py : Work stealing and KV-cache migration between workers."""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Optional

import numpy as np

from agentsim import config
from agentsim.core.errors import ConfigError
from agentsim.core.events import EventKind, SimEvent
from agentsim.core.model import LatencyDistribution, Request, WorkerState
from agentsim.scheduler.routing import ClusterState

LOG = logging.getLogger(__name__)


class MigrationModel(str, Enum):
    SAMPLED = "sampled"  # log-normal latency fit to mean and P95
    BANDWIDTH = "bandwidth"  # fixed overhead plus bytes over link bandwidth


@dataclass(frozen=True)
class StealConfig:
    t_idle_ms: float = config.T_IDLE_MS
    r_max: float = config.R_MAX
    model: MigrationModel = MigrationModel.SAMPLED
    latency: LatencyDistribution = field(
        default_factory=lambda: LatencyDistribution.from_mean_p95(config.MIGRATE_MEAN_MS, config.MIGRATE_P95_MS))
    bandwidth_gbps: float = config.MIGRATE_BANDWIDTH_GBPS
    fixed_ms: float = config.MIGRATE_FIXED_MS

    def __post_init__(self):
        issues = []
        if self.t_idle_ms < 0:
            issues.append(("steal.t_idle_ms", "must be >= 0"))
        if self.r_max < 1:
            issues.append(("steal.r_max", f"must be >= 1, got {self.r_max}"))
        if self.bandwidth_gbps <= 0:
            issues.append(("steal.bandwidth_gbps", "must be > 0"))
        if issues:
            raise ConfigError(issues)

    def to_dict(self):
        return {"t_idle_ms": self.t_idle_ms, "r_max": self.r_max, "model": self.model.value,
                "latency": self.latency.to_dict(), "bandwidth_gbps": self.bandwidth_gbps,
                "fixed_ms": self.fixed_ms}


@dataclass(frozen=True)
class StealAction:
    thief: int
    victim: int
    session_id: int


def load_ratio(cluster: ClusterState) -> float:
    """max/min load; an idle worker next to a loaded one counts as infinite imbalance."""
    loads = [w.load for w in cluster.workers]
    hi, lo = max(loads), min(loads)
    if lo > 0:
        return hi / lo
    return math.inf if hi > 0 else 1.0


def _eligible(w: WorkerState) -> Optional[Request]:
    for r in w.queue:  # queue is in enqueue order
        if not r.stolen and not r.blocked:
            return r
    return None


def maybe_steal(cluster: ClusterState, cfg: StealConfig, now: float,
                exclude_thieves: Iterable[int] = ()) -> Optional[StealAction]:
    """
    Propose one steal, or None.

    A thief is a worker whose queue has been empty for at least ``t_idle_ms`` (the one
    idle longest goes first). A steal happens only when the cluster's max/min load
    ratio exceeds ``r_max``; the victim is drawn uniformly from workers whose load is
    above ``r_max`` times the minimum and which hold an eligible request. The oldest
    eligible request of the victim is taken; requests already stolen once are not
    eligible until served.
    """
    skip = set(exclude_thieves)
    idle = [w for w in cluster.workers
            if w.worker_id not in skip and not w.queue and w.idle_since is not None
            and now - w.idle_since >= cfg.t_idle_ms]
    if not idle or load_ratio(cluster) <= cfg.r_max:
        return None
    thief = min(idle, key=lambda w: (w.idle_since, w.worker_id))
    floor = min(w.load for w in cluster.workers)
    overloaded = [w for w in cluster.workers
                  if w.worker_id != thief.worker_id and w.load > cfg.r_max * floor and _eligible(w)]
    if not overloaded:
        return None
    victim = overloaded[int(cluster.rng.integers(len(overloaded)))]
    req = _eligible(victim)
    return StealAction(thief=thief.worker_id, victim=victim.worker_id, session_id=req.session_id)


def migration_latency_ms(cfg: StealConfig, nbytes: int, rng: np.random.Generator) -> float:
    if cfg.model == MigrationModel.BANDWIDTH:
        return cfg.fixed_ms + 1000.0 * nbytes / (cfg.bandwidth_gbps * 1e9)
    return cfg.latency.sample(rng)


def start_migration(cluster: ClusterState, session_id: int, src: int, dst: int, now: float,
                    cfg: StealConfig, reason: str) -> SimEvent:
    """Flag the session's entry on ``src`` as moving and return its MigrateDone event."""
    entry = cluster.workers[src].resident.get(session_id)
    nbytes = entry.bytes if entry is not None else 0
    latency = migration_latency_ms(cfg, nbytes, cluster.rng) if entry is not None else 0.0
    if entry is not None:
        entry.migrating_to = dst
    done_us = int(round(now * config.US_PER_MS)) + max(config.MIN_PHASE_US, int(round(latency * config.US_PER_MS)))
    return SimEvent(time_us=done_us, kind=EventKind.MIGRATE_DONE, task_id=session_id,
                    payload={"src": src, "dst": dst, "bytes": nbytes, "reason": reason})


def execute_migration(action: StealAction, cluster: ClusterState, now: float,
                      cfg: StealConfig = StealConfig()) -> Optional[SimEvent]:
    """
    Accept a proposed steal and start moving the session.

    The request moves from the victim's queue to the thief's, flagged stolen and
    blocked until its cache arrives. Stale proposals are rejected: the request left the
    victim's queue, the thief has work again or no free lane, or the imbalance that
    justified the steal is gone (max/min load back within ``r_max``).

    Returns:
        The MigrateDone event to schedule, or None when rejected.
    """
    victim = cluster.workers[action.victim]
    thief = cluster.workers[action.thief]
    req = next((r for r in victim.queue if r.session_id == action.session_id), None)
    if req is None or req.stolen or thief.queue or thief.free_lanes == 0 or load_ratio(cluster) <= cfg.r_max:
        LOG.debug(f"Rejected stale steal of session {action.session_id} by worker {action.thief}")
        return None
    victim.queue.remove(req)
    cluster.note_dequeued(action.victim, req.est_ms)
    req.stolen = True
    src = cluster.locate(action.session_id)
    req.blocked = src is not None
    thief.queue.append(req)
    thief.idle_since = None
    cluster.note_enqueued(action.thief, req.est_ms)
    if src is None:
        cluster.session_affinity[action.session_id] = action.thief
        src = action.victim
    return start_migration(cluster, action.session_id, src, action.thief, now, cfg, "steal")


def complete_migration(cluster: ClusterState, event: SimEvent,
                       make_room: Callable[[WorkerState, int], bool]) -> bool:
    """
    Finish a migration: move the entry and the affinity to the destination.

    ``make_room(worker, nbytes)`` must free ``nbytes`` on the destination or return
    False. The move aborts when the entry was evicted in flight, its migration was
    cancelled, or no room can be made; the session then re-prefills wherever it runs.

    Returns:
        True when the entry moved.
    """
    sid = event.task_id
    src = cluster.workers[event.payload["src"]]
    dst = cluster.workers[event.payload["dst"]]
    entry = src.resident.get(sid)
    if entry is None or entry.migrating_to != dst.worker_id:
        return False
    entry.migrating_to = None
    if dst.free_bytes < entry.bytes and not make_room(dst, entry.bytes - dst.free_bytes):
        return False
    src.remove_entry(sid)
    dst.add_entry(entry)
    cluster.session_affinity[sid] = dst.worker_id
    return True
