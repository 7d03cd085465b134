"""routing.py : Cluster state and session-affinity routing."""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from agentsim import config
from agentsim.core.model import WorkerState
from agentsim.core.utils import clamp

LOG = logging.getLogger(__name__)


@dataclass
class ClusterState:
    """Workers plus the session-to-worker affinity map.

    ``rng`` is the cluster's own random stream (victim choice when stealing).
    """

    workers: List[WorkerState]
    session_affinity: Dict[int, int] = field(default_factory=dict)
    epoch_counter: int = 0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    rr_next: int = 0

    @classmethod
    def build(cls, num_workers: int, kv_capacity_bytes: int, lanes: int = 1,
              seed: int = 0) -> "ClusterState":
        workers = [WorkerState(worker_id=i, kv_capacity_bytes=kv_capacity_bytes, lanes=lanes)
                   for i in range(num_workers)]
        return cls(workers=workers, rng=np.random.default_rng(seed))

    def cached(self, worker_id: int, session_id: int) -> bool:
        entry = self.workers[worker_id].resident.get(session_id)
        return entry is not None and entry.migrating_to is None

    def locate(self, session_id: int) -> Optional[int]:
        """Worker currently holding the session's cache, if any."""
        for w in self.workers:
            if session_id in w.resident:
                return w.worker_id
        return None

    def recompute_loads(self, window_ms: float = config.LOAD_WINDOW_MS) -> None:
        for w in self.workers:
            w.load = clamp(w.queued_work_ms() / (w.lanes * window_ms))

    def note_enqueued(self, worker_id: int, est_ms: float, window_ms: float = config.LOAD_WINDOW_MS) -> None:
        w = self.workers[worker_id]
        w.load = clamp(w.load + est_ms / (w.lanes * window_ms))

    def note_dequeued(self, worker_id: int, est_ms: float, window_ms: float = config.LOAD_WINDOW_MS) -> None:
        w = self.workers[worker_id]
        w.load = clamp(w.load - est_ms / (w.lanes * window_ms))


def least_loaded(cluster: ClusterState, exclude: Iterable[int] = ()) -> int:
    """Worker with the lowest load; ties go to the lowest id."""
    skip = set(exclude)
    candidates = [w for w in cluster.workers if w.worker_id not in skip]
    if not candidates:
        raise ValueError("no worker left to route to")
    return min(candidates, key=lambda w: (w.load, w.worker_id)).worker_id


def route(request: Tuple[int, int], cluster: ClusterState, theta: float = config.THETA) -> int:
    """
    Pick the worker for a session's next step.

    Parameters:
    - request (Tuple[int, int]): (session_id, prompt tokens).
    - cluster (ClusterState): workers and affinity map; the affinity is updated.
    - theta (float): load above which a cached worker is passed over.

    Returns:
    - int: the worker holding the session's cache if its load is below ``theta``,
      otherwise the least-loaded worker.
    """
    session_id, _tokens = request
    home = cluster.session_affinity.get(session_id)
    if home is not None and cluster.cached(home, session_id) and cluster.workers[home].load < theta:
        chosen = home
    else:
        chosen = least_loaded(cluster)
        if home is not None and chosen != home:
            LOG.debug(f"Session {session_id} leaves worker {home} for {chosen}")
    cluster.session_affinity[session_id] = chosen
    return chosen


def route_round_robin(cluster: ClusterState) -> int:
    chosen = cluster.rr_next % len(cluster.workers)
    cluster.rr_next += 1
    return chosen
