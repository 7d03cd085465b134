"""preemption.py : Move low-urgency caches out of the way of blocked urgent work."""

import logging
from dataclasses import dataclass
from typing import List, Mapping

from agentsim import config
from agentsim.scheduler.routing import ClusterState

LOG = logging.getLogger(__name__)


@dataclass(frozen=True)
class PreemptAction:
    worker: int
    session_id: int  # the preempted blocker
    destination: int
    blocked_session: int


def maybe_preempt(cluster: ClusterState, urgency: Mapping[int, float], now: float,
                  block_threshold: float = config.BLOCK_THRESHOLD_MS) -> List[PreemptAction]:
    """
    Find blockers to preempt this epoch, at most one per worker.

    A request is blocked once it has waited ``block_threshold`` ms in a worker's queue.
    For the most urgent blocked request, the least urgent session holding cache on that
    worker (not running, not already moving) is the blocker; its cache is sent to the
    least-loaded other worker with room for it. Workers with no such destination are
    skipped.

    Args:
        cluster: current cluster.
        urgency: urgency per session id (sessions of one tenant share its urgency).
        now: current time in ms.
        block_threshold: minimum queueing time before preempting.

    Returns:
        Actions in worker order.
    """
    actions: List[PreemptAction] = []
    for w in cluster.workers:
        waiting = [r for r in w.queue if not r.blocked and now - r.enqueued_ms >= block_threshold]
        if not waiting:
            continue
        top = max(waiting, key=lambda r: (urgency.get(r.session_id, 0.0), -r.enqueued_ms, -r.session_id))
        u_top = urgency.get(top.session_id, 0.0)
        blockers = [e for sid, e in w.resident.items()
                    if sid != top.session_id and not e.pinned and e.migrating_to is None
                    and sid not in w.running and urgency.get(sid, 0.0) < u_top]
        if not blockers:
            continue
        blocker = min(blockers, key=lambda e: (urgency.get(e.session_id, 0.0), -e.bytes, e.session_id))
        dests = [d for d in cluster.workers
                 if d.worker_id != w.worker_id and d.free_bytes >= blocker.bytes]
        if not dests:
            LOG.debug(f"Worker {w.worker_id}: no destination for session {blocker.session_id}")
            continue
        dest = min(dests, key=lambda d: (d.load, d.worker_id))
        actions.append(PreemptAction(w.worker_id, blocker.session_id, dest.worker_id, top.session_id))
    return actions
