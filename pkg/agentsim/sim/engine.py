"""engine.py : Discrete-event simulation of agent tasks on a GPU cluster.

One ``Simulator`` run replays a workload against a cluster configuration. Events sit
in a heap keyed by (time in integer microseconds, event-kind rank, task id, sequence)
so simultaneous events always resolve the same way. Handlers log the events they
process into an ``EventLog``; follow-up events (evictions, steals, preemptions, task
completions) are logged at the instant they happen.
"""

import heapq
import itertools
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from agentsim import config
from agentsim.aeg.inference import PatternModel, infer_pattern, node_of_tool
from agentsim.aeg.reuse import ObservationEma, reuse_probability
from agentsim.cache.eviction import EvictionPolicy, ScoreScale, select_victims
from agentsim.cache.prefetch import prefetch_target, reload_start_ms
from agentsim.cache.ttl import LatencyHistory, TtlEstimator, compute_ttl, memory_pressure
from agentsim.core.errors import CapacityError
from agentsim.core.events import EventKind, EventLog, SimEvent
from agentsim.core.model import (
    AgentExecutionGraph,
    CacheEntry,
    LatencyDistribution,
    Request,
    StepRecord,
    Task,
    Tenant,
    TenantClass,
    ToolType,
    WorkerState,
)
from agentsim.fairness.afs import AfsState, afs_score, task_urgency
from agentsim.fairness.preemption import PreemptAction, maybe_preempt
from agentsim.scheduler.routing import ClusterState, least_loaded, route, route_round_robin
from agentsim.scheduler.stealing import complete_migration, execute_migration, maybe_steal, start_migration
from agentsim.settings import AegMode, FairnessPolicy, SimConfig, Strategy
from agentsim.sim.costs import step_cost
from agentsim.sim.metrics import MetricsReport, RunCounters, build_metrics

LOG = logging.getLogger(__name__)

_PREFETCH_CHECK = "prefetch-check"  # internal timer, never logged
_TIMER_RANK = len(EventKind)


def _us(ms: float) -> int:
    return int(round(ms * config.US_PER_MS))


@dataclass
class _Pause:
    """A session waiting on a tool call."""

    ident: int
    start_us: int
    tool: Optional[str]
    latency_ms: float
    ttl_ms: Optional[float] = None
    predicted: Optional[int] = None
    graph: Optional[AgentExecutionGraph] = None
    done: bool = False
    worker: Optional[int] = None
    check_pending: bool = False
    reloaded: bool = False


@dataclass
class SimResult:
    log: EventLog
    metrics: MetricsReport
    tasks: List[Task]
    afs_history: List[Dict[str, Any]] = field(default_factory=list)
    seed: int = 0


class Simulator:
    """
    Event loop plus the policy glue between routing, caching, stealing and fairness.

    Parameters:
    - cfg (SimConfig): validated configuration.
    - tasks (Sequence[Task]): workload; copied, so the same list can be replayed.
    - seed (int): overrides ``cfg.seed`` when given.
    - record_afs (bool): keep per-epoch AFS rows (needed for dumps and deviation).
    """

    def __init__(self, cfg: SimConfig, tasks: Sequence[Task], seed: Optional[int] = None,
                 record_afs: bool = False):
        self.cfg = cfg.validate()
        self.seed = cfg.seed if seed is None else seed
        self.rng = np.random.default_rng([self.seed, 0])
        c = cfg.cluster
        self.cluster = ClusterState.build(c.workers, c.kv_capacity_bytes, c.lanes_per_worker,
                                          seed=int(np.random.default_rng([self.seed, 1]).integers(2**31)))
        self.tasks: Dict[int, Task] = {
            t.task_id: replace(t, records=[StepRecord(**r.__dict__) for r in t.records], trajectory=list(t.trajectory))
            for t in tasks}
        self.tenants = self._tenants()
        self.log = EventLog()
        self.counters = RunCounters()
        self.afs = AfsState(epoch_ms=cfg.epoch_ms, block_threshold_ms=cfg.fairness.block_threshold_ms,
                            record_history=record_afs)
        self.history = LatencyHistory(cfg.ttl)
        self.obs = ObservationEma()
        self.scale = ScoreScale()
        self.patterns: Dict[str, PatternModel] = {}
        self._inferred: Dict[str, AgentExecutionGraph] = {}

        self.now_us = 0
        self.end_us = 0
        self._heap: List[Tuple] = []
        self._seq = itertools.count()
        self._pause_ids = itertools.count()
        self._owner: Dict[int, int] = {}
        self._pauses: Dict[int, _Pause] = {}
        self._prefetching: Dict[int, Tuple[int, int]] = {}
        self._prefetched: Set[int] = set()
        self._admitted: Dict[int, int] = {}
        self._backlog: List[int] = []
        self._active: Set[int] = set()
        self._unfinished = len(self.tasks)
        self._tenant_running: Counter = Counter()
        self._tenant_urgency: Dict[str, float] = {}
        self._urgency_memo: Dict[int, float] = {}
        self._segments: Dict[Tuple[int, int], Tuple[int, int]] = {}

        self._handlers = {
            EventKind.TASK_ARRIVE: self._on_arrive,
            EventKind.STEP_START_DECODE: self._on_decode,
            EventKind.STEP_DONE: self._on_step_done,
            EventKind.TOOL_START: self._on_tool_start,
            EventKind.TOOL_DONE: self._on_tool_done,
            EventKind.PREFETCH_DONE: self._on_prefetch_done,
            EventKind.MIGRATE_DONE: self._on_migrate_done,
            EventKind.EPOCH_TICK: self._on_epoch,
            _PREFETCH_CHECK: self._on_prefetch_check,
        }

    # ------------------------------------------------------------------ plumbing

    @property
    def now_ms(self) -> float:
        return self.now_us / config.US_PER_MS

    def _tenants(self) -> Dict[str, Tenant]:
        counts = Counter(t.tenant_id for t in self.tasks.values())
        minutes = self.cfg.horizon_ms / 60_000.0
        out = {}
        for t in sorted(self.tasks.values(), key=lambda t: t.task_id):
            if t.tenant_id not in out:
                rate = max(counts[t.tenant_id] / minutes, 1e-9)
                out[t.tenant_id] = Tenant(t.tenant_id, t.tenant_class or TenantClass.MEDIUM, rate)
        return out

    def _push(self, time_us: int, kind, task_id: int = -1, payload: Optional[Dict[str, Any]] = None) -> None:
        rank = kind.ordinal if isinstance(kind, EventKind) else _TIMER_RANK
        heapq.heappush(self._heap, (time_us, rank, task_id, next(self._seq), kind, payload or {}))

    def _push_event(self, ev: SimEvent) -> None:
        self._push(ev.time_us, ev.kind, ev.task_id, ev.payload)

    def _log(self, kind: EventKind, task_id: int = -1, payload: Optional[Dict[str, Any]] = None) -> None:
        self.log.append(SimEvent(self.now_us, kind, task_id, payload or {}))

    # ------------------------------------------------------------------ main loop

    def run(self) -> SimResult:
        horizon_us = _us(self.cfg.horizon_ms)
        LOG.info(f"Simulating {len(self.tasks)} tasks on {len(self.cluster.workers)} workers "
                 f"(seed {self.seed}, horizon {self.cfg.horizon_ms / 60_000:.1f} min)")
        for task in sorted(self.tasks.values(), key=lambda t: (t.submit_time, t.task_id)):
            self._push(_us(task.submit_time), EventKind.TASK_ARRIVE, task.task_id)
        if self.tasks:
            self._push(_us(self.cfg.epoch_ms), EventKind.EPOCH_TICK)

        cut = False
        while self._heap:
            time_us, _, task_id, _, kind, payload = heapq.heappop(self._heap)
            if time_us > horizon_us:
                cut = True
                break
            self.now_us = time_us
            self._handlers[kind](task_id, payload)

        self.end_us = horizon_us if cut else self.now_us
        self._finalize()
        metrics = build_metrics(self)
        LOG.info(f"Finished: {metrics.tasks_finished}/{metrics.tasks_total} tasks, "
                 f"mean TCT {metrics.tct_mean_ms:.0f} ms")
        return SimResult(log=self.log, metrics=metrics,
                         tasks=[self.tasks[k] for k in sorted(self.tasks)],
                         afs_history=self.afs.history, seed=self.seed)

    def _finalize(self) -> None:
        self.now_us = self.end_us
        end_ms = self.end_us / config.US_PER_MS
        for w in self.cluster.workers:
            for sid in w.running:
                w.busy_ms += max(0.0, end_ms - self.tasks[sid].records[-1].start_ms)
        for key in list(self._segments):
            self._close_segment(*key, useful=False)

    # ------------------------------------------------------------------ residency ledger

    def _open_segment(self, wid: int, sid: int, nbytes: int) -> None:
        self._segments[(wid, sid)] = (self.now_us, nbytes)

    def _close_segment(self, wid: int, sid: int, useful: bool) -> None:
        seg = self._segments.pop((wid, sid), None)
        if seg is not None and useful:
            start, nbytes = seg
            self.counters.useful_byte_us += nbytes * (self.now_us - start)

    def _add_entry(self, w: WorkerState, entry: CacheEntry) -> None:
        if entry.session_id in self._owner:
            raise RuntimeError(f"session {entry.session_id} already resident on worker "
                               f"{self._owner[entry.session_id]}")
        w.add_entry(entry)
        self._owner[entry.session_id] = w.worker_id
        self._open_segment(w.worker_id, entry.session_id, entry.bytes)

    def _evict(self, w: WorkerState, sid: int, reason: str) -> None:
        entry = w.remove_entry(sid)
        self._owner.pop(sid, None)
        self._prefetched.discard(sid)
        self._prefetching.pop(sid, None)
        self._close_segment(w.worker_id, sid, useful=False)
        self.counters.evictions += 1
        self._log(EventKind.EVICT, sid, {"worker": w.worker_id, "tokens": entry.tokens, "bytes": entry.bytes,
                                         "reason": reason})
        pause = self._pauses.get(sid)
        if (pause is not None and not pause.done and pause.predicted is not None
                and not pause.check_pending and not pause.reloaded):
            self._schedule_prefetch(sid, pause)

    def _make_room(self, w: WorkerState, nbytes: int, exclude: Sequence[int], unprotected_only: bool = False,
                   reason: str = "pressure") -> bool:
        """Evict enough of ``w`` to free ``nbytes``; with ``unprotected_only`` refuse to touch TTL-held entries."""
        try:
            victims = select_victims(w, nbytes, self.cfg.policy.eviction, self.now_ms, self.cfg.policy.weights,
                                     self.scale, exclude=exclude)
        except CapacityError:
            return False
        if unprotected_only and any(w.resident[v].protected(self.now_ms) for v in victims):
            return False
        for v in victims:
            self._evict(w, v, reason)
        return True

    def _refresh_idle(self, w: WorkerState) -> None:
        if not w.queue and w.free_lanes > 0:
            if w.idle_since is None:
                w.idle_since = self.now_ms
        else:
            w.idle_since = None

    # ------------------------------------------------------------------ admission

    def _reservation(self, task: Task) -> int:
        g = task.aeg
        if g.entry is None:
            return 0
        total = g.expected_from(lambda n: sum(g.tokens.get(n, (0, 0))), key=("tokens",))[g.entry]
        tokens = min(self.cfg.max_context_tokens, total) / 2.0
        return int(tokens * self.cfg.cost.bytes_per_token)

    def _admission_worker(self, task: Task) -> Optional[int]:
        need = self._reservation(task)
        limit = self.cfg.ttl.high * self.cfg.cluster.kv_capacity_bytes
        home = task.home_worker
        order = sorted(self.cluster.workers,
                       key=lambda w: (w.worker_id != home, w.load, len(w.reserved), w.worker_id))
        for w in order:
            if not w.reserved:
                return w.worker_id
            if self.cfg.policy.strategy == Strategy.DFS:
                continue
            if sum(w.reserved.values()) + need <= limit:
                return w.worker_id
        return None

    def _admit(self, task: Task, wid: int) -> None:
        self.cluster.workers[wid].reserved[task.task_id] = self._reservation(task)
        self._admitted[task.task_id] = wid
        self._submit(task, 0, worker=wid)

    def _admit_or_backlog(self, task: Task) -> None:
        if self.cfg.policy.strategy == Strategy.BFS:
            self._submit(task, 0)
            return
        wid = self._admission_worker(task)
        if wid is None:
            self._backlog.append(task.task_id)
        else:
            self._admit(task, wid)

    def _release(self, task: Task) -> None:
        wid = self._admitted.pop(task.task_id, None)
        if wid is not None:
            self.cluster.workers[wid].reserved.pop(task.task_id, None)

    def _drain_backlog(self) -> None:
        if not self._backlog:
            return
        fairness = self.cfg.policy.fairness
        order = list(self._backlog)
        if fairness == FairnessPolicy.AFS:
            order.sort(key=lambda tid: (-self._task_urgency(tid), tid))
        elif fairness == FairnessPolicy.UNIFORM:
            order = [order[i] for i in self.rng.permutation(len(order))]
        admitted = set()
        for tid in order:
            wid = self._admission_worker(self.tasks[tid])
            if wid is None:
                continue
            admitted.add(tid)
            self._admit(self.tasks[tid], wid)
        self._backlog = [t for t in self._backlog if t not in admitted]

    # ------------------------------------------------------------------ requests

    def _route(self, task: Task, prompt: int, req: Request) -> int:
        sid = task.task_id
        src = self._owner.get(sid)
        if src is not None:
            entry = self.cluster.workers[src].resident[sid]
            if entry.migrating_to is not None:
                req.blocked = True
                return entry.migrating_to
        policy = self.cfg.policy
        if policy.strategy == Strategy.BFS:
            return route_round_robin(self.cluster)
        if not policy.affinity:
            wid = least_loaded(self.cluster)
            self.cluster.session_affinity[sid] = wid
            return wid
        return route((sid, prompt), self.cluster, policy.theta)

    def _submit(self, task: Task, step_index: int, worker: Optional[int] = None) -> None:
        plan = task.trajectory[step_index]
        task.current_node = plan.node
        task.node_done = False
        cost = self.cfg.cost
        prompt = min(task.context_tokens + plan.new_tokens, self.cfg.max_context_tokens)
        est = cost.prefill_ms(plan.new_tokens) + cost.decode_ms(plan.output_tokens)
        req = Request(task.task_id, task.tenant_id, step_index, self.now_ms, est)
        wid = self._route(task, prompt, req) if worker is None else worker
        w = self.cluster.workers[wid]
        w.queue.append(req)
        self.cluster.note_enqueued(wid, est, self.cfg.cluster.load_window_ms)
        self._refresh_idle(w)
        self._try_dispatch(w)

    def _task_urgency(self, tid: int) -> float:
        if tid not in self._urgency_memo:
            self._urgency_memo[tid] = task_urgency(self.tasks[tid], self.cfg.cost, self.now_ms, self.cfg.epoch_ms)
        return self._urgency_memo[tid]

    def _pick(self, w: WorkerState) -> Optional[Request]:
        eligible = [r for r in w.queue if not r.blocked]
        if not eligible:
            return None
        fairness = self.cfg.policy.fairness
        if fairness == FairnessPolicy.UNIFORM:
            return eligible[int(self.rng.integers(len(eligible)))]
        if fairness == FairnessPolicy.AFS:
            return min(eligible, key=lambda r: (
                self.afs.share_used(r.tenant_id, self._tenant_running[r.tenant_id]),
                -self._task_urgency(r.session_id), r.enqueued_ms, r.session_id))
        return eligible[0]

    def _try_dispatch(self, w: WorkerState) -> None:
        while w.free_lanes > 0:
            req = self._pick(w)
            if req is None or not self._start_step(w, req):
                break
        self._refresh_idle(w)

    def _start_step(self, w: WorkerState, req: Request) -> bool:
        sid = req.session_id
        task = self.tasks[sid]
        plan = task.trajectory[req.step_index]
        cfg = self.cfg
        bpt = cfg.cost.bytes_per_token
        cap = cfg.max_context_tokens

        prompt = min(task.context_tokens + plan.new_tokens, cap)
        reusable = prompt if req.step_index == 0 else max(0, prompt - plan.new_tokens)
        after = min(prompt + plan.output_tokens, cap)
        if after * bpt > w.kv_capacity_bytes:
            raise CapacityError(f"session {sid} needs {after * bpt} bytes of KV cache",
                                worker_id=w.worker_id, bytes_needed=after * bpt)

        other = self._owner.get(sid)
        if other is not None and other != w.worker_id:
            self._evict(self.cluster.workers[other], sid, "relocated")
        entry = w.resident.get(sid)
        if entry is not None:
            entry.migrating_to = None

        need = after * bpt - (entry.bytes if entry is not None else 0)
        if need > w.free_bytes and not self._make_room(w, need - w.free_bytes, exclude=(sid,)):
            return False

        cached_entry = min(entry.tokens, reusable) if entry is not None else 0
        credit = int(cfg.policy.prefix_fraction * prompt) if cfg.policy.eviction.shares_prefix else 0
        cached = max(cached_entry, min(credit, prompt))
        recomputed = max(0, reusable - cached) if req.step_index > 0 else 0

        hit = cached_entry > 0
        if entry is None:
            entry = CacheEntry(sid, w.worker_id, after, bpt, last_access=self.now_ms)
            self._add_entry(w, entry)
        else:
            self._close_segment(w.worker_id, sid, useful=hit)
            w.resize_entry(sid, after)
            self._open_segment(w.worker_id, sid, entry.bytes)
        entry.pinned = True
        entry.last_access = self.now_ms
        entry.ttl_expiry = None

        prefill_ms, decode_ms, regen = step_cost(prompt, cached, plan.output_tokens, cfg.cost)
        extra_us = 0
        inflight = self._prefetching.get(sid)
        if inflight is not None and inflight[0] == w.worker_id:
            extra_us = max(0, inflight[1] - self.now_us)
        if sid in self._prefetched:
            self._prefetched.discard(sid)
            self.counters.prefetch_hits += 1

        pause = self._pauses.pop(sid, None)
        if pause is not None:
            self.counters.pauses += 1
            self.counters.evicted_pauses += recomputed > 0

        prefill_us = max(config.MIN_PHASE_US, _us(prefill_ms)) + extra_us
        decode_us = max(config.MIN_PHASE_US, _us(decode_ms))
        w.queue.remove(req)
        self.cluster.note_dequeued(w.worker_id, req.est_ms, cfg.cluster.load_window_ms)
        w.running[sid] = req
        self._tenant_running[task.tenant_id] += 1
        self.afs.charge(task.tenant_id, prefill_ms + decode_ms)

        prev_tool = task.trajectory[req.step_index - 1].tool_latency_ms if req.step_index > 0 else 0.0
        task.records.append(StepRecord(prompt, plan.output_tokens, cached, regen, recomputed, prev_tool,
                                       w.worker_id, self.now_ms))
        self.counters.regen_tokens += regen
        self.counters.recomputed_tokens += recomputed

        self._log(EventKind.STEP_START_PREFILL, sid, {
            "worker": w.worker_id, "step": req.step_index, "prompt": prompt, "cached": cached,
            "regen": regen, "bytes": entry.bytes})
        step_payload = {"worker": w.worker_id, "step": req.step_index}
        self._push(self.now_us + prefill_us, EventKind.STEP_START_DECODE, sid, step_payload)
        self._push(self.now_us + prefill_us + decode_us, EventKind.STEP_DONE, sid, step_payload)
        return True

    # ------------------------------------------------------------------ handlers

    def _on_arrive(self, tid: int, payload: Dict[str, Any]) -> None:
        task = self.tasks[tid]
        self._active.add(tid)
        out = {"tenant": task.tenant_id, "steps": len(task.trajectory)}
        home = task.home_worker
        if home is not None and 0 <= home < len(self.cluster.workers) and task.trajectory:
            w = self.cluster.workers[home]
            tokens = task.trajectory[0].new_tokens
            nbytes = tokens * self.cfg.cost.bytes_per_token
            if tid not in self._owner and w.free_bytes >= nbytes:
                self._add_entry(w, CacheEntry(tid, home, tokens, self.cfg.cost.bytes_per_token,
                                              last_access=self.now_ms))
                self.cluster.session_affinity[tid] = home
                out["prewarm"] = {"worker": home, "bytes": nbytes}
        self._log(EventKind.TASK_ARRIVE, tid, out)
        if not task.trajectory:
            self._finish(task, None)
            return
        self._admit_or_backlog(task)

    def _on_decode(self, sid: int, payload: Dict[str, Any]) -> None:
        self._log(EventKind.STEP_START_DECODE, sid, dict(payload))

    def _on_step_done(self, sid: int, payload: Dict[str, Any]) -> None:
        w = self.cluster.workers[payload["worker"]]
        w.running.pop(sid)
        task = self.tasks[sid]
        entry = w.resident[sid]
        entry.pinned = sid in self._prefetching
        entry.last_access = self.now_ms
        task.advance_context(entry.tokens)
        task.steps_done += 1
        task.node_done = True
        rec = task.records[-1]
        rec.end_ms = self.now_ms
        w.busy_ms += rec.end_ms - rec.start_ms
        self._tenant_running[task.tenant_id] -= 1
        self._close_segment(w.worker_id, sid, useful=True)
        self._open_segment(w.worker_id, sid, entry.bytes)

        self._log(EventKind.STEP_DONE, sid, {"worker": w.worker_id, "step": payload["step"],
                                             "context": entry.tokens})
        if task.steps_done >= len(task.trajectory):
            self._finish(task, w)
        else:
            self._push(self.now_us + config.MIN_PHASE_US, EventKind.TOOL_START, sid, {"worker": w.worker_id})
        self._try_dispatch(w)

    def _finish(self, task: Task, w: Optional[WorkerState]) -> None:
        sid = task.task_id
        task.finish_time = self.now_ms
        if w is not None and sid in w.resident:
            entry = w.resident[sid]
            entry.reuse_prob = 0.0
            entry.ttl_expiry = None
        self._active.discard(sid)
        self._unfinished -= 1
        if self.cfg.policy.aeg_mode == AegMode.INFERRED:
            self._learn(task)
        self._release(task)
        self.cluster.session_affinity.pop(sid, None)
        self._log(EventKind.TASK_FINISH, sid, {"tenant": task.tenant_id,
                                               "tct_ms": task.finish_time - task.submit_time})
        self._drain_backlog()

    def _tool(self, name: Optional[str]) -> ToolType:
        tool = self.cfg.tools.get(name) if name else None
        return tool or ToolType(name or "none", LatencyDistribution.constant(config.TOOL_VARIANCE_MEAN_MS))

    def _on_tool_start(self, sid: int, payload: Dict[str, Any]) -> None:
        task = self.tasks[sid]
        plan = task.trajectory[task.steps_done - 1]
        wid = self._owner.get(sid)
        pause = _Pause(next(self._pause_ids), self.now_us, plan.tool, plan.tool_latency_ms,
                       worker=wid if wid is not None else self.cluster.session_affinity.get(sid))
        self._log(EventKind.TOOL_START, sid, {"tool": plan.tool, "worker": wid})

        policy = self.cfg.policy
        if policy.prefetch:
            pause.graph, pause.predicted = self._predict(task)
        self._pauses[sid] = pause

        if wid is not None:
            w = self.cluster.workers[wid]
            entry = w.resident[sid]
            if policy.eviction == EvictionPolicy.EVICT_ALL:
                self._evict(w, sid, "tool-call")
            else:
                if policy.ttl:
                    m = memory_pressure(w.used_bytes, w.kv_capacity_bytes, self.cfg.ttl)
                    fit = self.history.fit(plan.tool) if self.cfg.ttl.estimator == TtlEstimator.LOGNORMAL else None
                    ttl = compute_ttl(self._tool(plan.tool), self.history.samples(plan.tool), self.cfg.ttl, m, fit)
                    entry.set_ttl(self.now_ms, ttl)
                    pause.ttl_ms = ttl
                entry.reuse_prob = self._reuse_prob(task)
        if pause.predicted is not None and not pause.check_pending:
            self._schedule_prefetch(sid, pause)

        latency_us = max(config.MIN_PHASE_US, _us(plan.tool_latency_ms))
        self._push(self.now_us + latency_us, EventKind.TOOL_DONE, sid,
                   {"tool": plan.tool, "latency_ms": plan.tool_latency_ms})

    def _on_tool_done(self, sid: int, payload: Dict[str, Any]) -> None:
        task = self.tasks[sid]
        pause = self._pauses[sid]
        pause.done = True
        latency = payload["latency_ms"]
        self._log(EventKind.TOOL_DONE, sid, {"tool": pause.tool, "latency_ms": latency})
        nxt = task.trajectory[task.steps_done]
        if pause.tool:
            self.history.observe(pause.tool, latency)
            self.obs.update(pause.tool, nxt.new_tokens)
        if pause.ttl_ms is not None:
            self.counters.ttl_calls += 1
            self.counters.ttl_covered += latency <= pause.ttl_ms
        if pause.predicted is not None:
            actual = nxt.node if pause.graph is task.aeg else node_of_tool(pause.graph, nxt.tool)
            if actual == pause.predicted:
                self.counters.prefetch_correct += 1
            else:
                self.counters.prefetch_mispredictions += 1
        self._submit(task, task.steps_done)

    # ------------------------------------------------------------------ AEG use

    def _graph_and_node(self, task: Task) -> Tuple[Optional[AgentExecutionGraph], Optional[int]]:
        mode = self.cfg.policy.aeg_mode
        if mode == AegMode.HINTS:
            return task.aeg, task.current_node
        if mode == AegMode.INFERRED:
            graph = self._inferred.get(task.agent_type)
            if graph is None:
                return None, None
            tool = task.trajectory[task.steps_done - 1].tool if task.steps_done else None
            return graph, node_of_tool(graph, tool)
        return None, None

    def _positioned(self, task: Task, graph: AgentExecutionGraph, node: int) -> Task:
        if graph is task.aeg:
            return task
        return Task(task.task_id, task.tenant_id, graph, node, task.submit_time,
                    context_tokens=task.context_tokens, node_done=True)

    def _reuse_prob(self, task: Task) -> float:
        graph, node = self._graph_and_node(task)
        if graph is None or node is None:
            return 0.0
        return reuse_probability(self._positioned(task, graph, node), graph, self.obs)

    def _predict(self, task: Task) -> Tuple[Optional[AgentExecutionGraph], Optional[int]]:
        graph, node = self._graph_and_node(task)
        if graph is None or node is None:
            return None, None
        return graph, prefetch_target(self._positioned(task, graph, node), graph)

    def _learn(self, task: Task) -> None:
        agent = task.agent_type
        model = self.patterns.setdefault(agent, PatternModel(agent, theta_conf=self.cfg.policy.theta_conf))
        trace = [s.tool for s in task.trajectory if s.tool]
        graph = infer_pattern(model, [trace])
        if graph:
            self._inferred[agent] = graph

    # ------------------------------------------------------------------ prefetch

    def _schedule_prefetch(self, sid: int, pause: _Pause) -> None:
        """Arm a reload check for the paused session at the tool-latency reload time."""
        pause.check_pending = True
        tokens = self.tasks[sid].context_tokens
        predicted = self.history.median(pause.tool, self._tool(pause.tool)) if pause.tool else 0.0
        reload_ms = self.cfg.cost.prefill_ms(tokens)
        at_ms = reload_start_ms(pause.start_us / config.US_PER_MS, predicted, reload_ms, self.now_ms)
        self._push(max(self.now_us + config.MIN_PHASE_US, _us(at_ms)), _PREFETCH_CHECK, sid,
                   {"pause": pause.ident})

    def _on_prefetch_check(self, sid: int, payload: Dict[str, Any]) -> None:
        pause = self._pauses.get(sid)
        if pause is None or pause.done or pause.ident != payload["pause"]:
            return
        pause.check_pending = False
        if pause.reloaded or sid in self._owner or pause.worker is None:
            return
        w = self.cluster.workers[pause.worker]
        tokens = self.tasks[sid].context_tokens
        nbytes = tokens * self.cfg.cost.bytes_per_token
        if nbytes > w.kv_capacity_bytes:
            return
        # prefetch only uses memory nobody is protecting; retry next epoch otherwise
        if w.free_bytes < nbytes and not self._make_room(w, nbytes - w.free_bytes, exclude=(sid,),
                                                         unprotected_only=True, reason="prefetch"):
            pause.check_pending = True
            self._push(self.now_us + _us(self.cfg.epoch_ms), _PREFETCH_CHECK, sid, {"pause": pause.ident})
            return
        pause.reloaded = True
        entry = CacheEntry(sid, w.worker_id, tokens, self.cfg.cost.bytes_per_token, last_access=self.now_ms,
                           pinned=True)
        self._add_entry(w, entry)
        self.cluster.session_affinity[sid] = w.worker_id
        reload_us = max(config.MIN_PHASE_US, _us(self.cfg.cost.prefill_ms(tokens)))
        self._prefetching[sid] = (w.worker_id, self.now_us + reload_us)
        self._prefetched.add(sid)
        self.counters.prefetch_loads += 1
        self.counters.prefetch_tokens += tokens
        self._log(EventKind.PREFETCH_START, sid, {"worker": w.worker_id, "tokens": tokens, "bytes": nbytes})
        self._push(self.now_us + reload_us, EventKind.PREFETCH_DONE, sid, {"worker": w.worker_id})

    def _on_prefetch_done(self, sid: int, payload: Dict[str, Any]) -> None:
        self._prefetching.pop(sid, None)
        w = self.cluster.workers[payload["worker"]]
        entry = w.resident.get(sid)
        if entry is not None and sid not in w.running:
            entry.pinned = False
            entry.last_access = self.now_ms
            pause = self._pauses.get(sid)
            if pause is not None and not pause.done:
                entry.reuse_prob = self._reuse_prob(self.tasks[sid])
                if pause.ttl_ms is not None:
                    expiry = pause.start_us / config.US_PER_MS + pause.ttl_ms
                    entry.set_ttl(self.now_ms, max(0.0, expiry - self.now_ms))
        self._log(EventKind.PREFETCH_DONE, sid, {"worker": w.worker_id})

    # ------------------------------------------------------------------ epochs

    def _on_epoch(self, _tid: int, payload: Dict[str, Any]) -> None:
        self.cluster.epoch_counter += 1
        epoch = self.cluster.epoch_counter
        self._log(EventKind.EPOCH_TICK, -1, {"epoch": epoch})
        self.cluster.recompute_loads(self.cfg.cluster.load_window_ms)
        self.scale.reset()
        self._urgency_memo.clear()
        for w in self.cluster.workers:
            self._refresh_idle(w)

        self._fairness_epoch(epoch)
        if self.cfg.policy.stealing:
            self._steal_round()
        self._drain_backlog()
        for w in self.cluster.workers:
            self._try_dispatch(w)
        if self._unfinished > 0:
            self._push(self.now_us + _us(self.cfg.epoch_ms), EventKind.EPOCH_TICK)

    def _fairness_epoch(self, epoch: int) -> None:
        capacity = self.cfg.cluster.total_lanes * self.cfg.epoch_ms
        if self.cfg.policy.fairness != FairnessPolicy.AFS:
            self.afs.start_epoch(epoch, {}, capacity)
            return
        by_tenant: Dict[str, List[Task]] = defaultdict(list)
        for tid in sorted(self._active):
            by_tenant[self.tasks[tid].tenant_id].append(self.tasks[tid])
        self._tenant_urgency = {
            name: afs_score(self.tenants[name], tasks, self.now_ms, self.cfg.cost, self.cfg.epoch_ms)
            for name, tasks in sorted(by_tenant.items())}
        self.afs.start_epoch(epoch, self._tenant_urgency, capacity)
        if not self.cfg.fairness.preemption:
            return
        session_urgency = {tid: self._tenant_urgency.get(self.tasks[tid].tenant_id, 0.0) for tid in self._active}
        for action in maybe_preempt(self.cluster, session_urgency, self.now_ms, self.cfg.fairness.block_threshold_ms):
            self._preempt(action)

    def _preempt(self, action: PreemptAction) -> None:
        src = self.cluster.workers[action.worker]
        dst = self.cluster.workers[action.destination]
        sid = action.session_id
        self._log(EventKind.PREEMPT, sid, {"worker": action.worker, "destination": action.destination,
                                           "blocked": action.blocked_session})
        req = next((r for r in src.queue if r.session_id == sid), None)
        if req is not None:
            src.queue.remove(req)
            self.cluster.note_dequeued(src.worker_id, req.est_ms, self.cfg.cluster.load_window_ms)
            req.blocked = True
            dst.queue.append(req)
            self.cluster.note_enqueued(dst.worker_id, req.est_ms, self.cfg.cluster.load_window_ms)
            self._refresh_idle(src)
            self._refresh_idle(dst)
        self.counters.preemptions += 1
        LOG.debug(f"Preempted session {sid}: worker {action.worker} -> {action.destination}")
        self._push_event(start_migration(self.cluster, sid, action.worker, action.destination, self.now_ms,
                                         self.cfg.steal, "preempt"))

    def _steal_round(self) -> None:
        used: Set[int] = set()
        while True:
            action = maybe_steal(self.cluster, self.cfg.steal, self.now_ms, exclude_thieves=used)
            if action is None:
                break
            used.add(action.thief)
            ev = execute_migration(action, self.cluster, self.now_ms, self.cfg.steal)
            if ev is None:
                continue
            self.counters.steals += 1
            self._log(EventKind.STEAL, action.session_id, {"thief": action.thief, "victim": action.victim})
            LOG.debug(f"Worker {action.thief} stole session {action.session_id} from {action.victim}")
            self._refresh_idle(self.cluster.workers[action.victim])
            self._refresh_idle(self.cluster.workers[action.thief])
            self._push_event(ev)

    def _on_migrate_done(self, sid: int, payload: Dict[str, Any]) -> None:
        src_id, dst_id = payload["src"], payload["dst"]
        src, dst = self.cluster.workers[src_id], self.cluster.workers[dst_id]
        out = dict(payload)
        if payload["bytes"] == 0:
            out["moved"] = False
            self._log(EventKind.MIGRATE_DONE, sid, out)
            self._try_dispatch(dst)
            return

        ev = SimEvent(self.now_us, EventKind.MIGRATE_DONE, sid, payload)
        moved = complete_migration(self.cluster, ev, lambda w, n: self._make_room(w, n, exclude=(sid,)))
        req = next((r for r in dst.queue if r.session_id == sid), None)
        if moved:
            self._owner[sid] = dst_id
            self._close_segment(src_id, sid, useful=True)
            self._open_segment(dst_id, sid, dst.resident[sid].bytes)
            self.counters.migrations += 1
        else:
            self.counters.migrations_aborted += 1
            LOG.debug(f"Migration of session {sid} to worker {dst_id} aborted")
            if req is not None:
                self.cluster.session_affinity[sid] = dst_id
        if self._admitted.get(sid) == src_id and sid in src.reserved:
            dst.reserved[sid] = src.reserved.pop(sid)
            self._admitted[sid] = dst_id
        if req is not None:
            req.blocked = False
        out["moved"] = moved
        self._log(EventKind.MIGRATE_DONE, sid, out)
        self._try_dispatch(dst)
        self._try_dispatch(src)


def run(cfg: SimConfig, tasks: Sequence[Task], seed: Optional[int] = None, record_afs: bool = False) -> SimResult:
    """Run one simulation and return its event log, metrics and final task states."""
    return Simulator(cfg, tasks, seed=seed, record_afs=record_afs).run()
