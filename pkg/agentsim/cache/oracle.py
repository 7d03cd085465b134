"""oracle.py : Offline cache-access traces, Belady replay and competitive ratios.

A trace is one single-worker cache: every access is an inference step of a session
that needs ``tokens_required`` prompt tokens, of which ``tokens_cached`` are reusable
if the session's entry is still resident. After the access the entry holds
``tokens_after`` tokens. The step computes for ``busy_ms`` and then waits on its tool
call, so the entry goes idle at ``time_ms + busy_ms`` and its TTL runs from there. The
replay cost of an access is the number of prompt tokens that must be prefilled; with a
``prefix_fraction`` the shared prefix of every prompt is free for prefix-sharing
policies and for the optimum.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

from agentsim import config
from agentsim.aeg.reuse import ObservationEma, reuse_probability
from agentsim.cache.eviction import EvictionPolicy, EvictionWeights, select_victims
from agentsim.cache.ttl import TtlConfig, compute_ttl
from agentsim.core.errors import CapacityError
from agentsim.core.model import CacheEntry, CostModel, Task, ToolType, WorkerState
from agentsim.core.utils import dumps_canonical

LOG = logging.getLogger(__name__)


@dataclass(frozen=True)
class CacheAccess:
    time_ms: float
    session_id: int
    tokens_required: int
    tokens_cached: int
    tokens_after: int
    reuse_prob: float = 0.0
    ttl_ms: float = 0.0
    busy_ms: float = 0.0

    @property
    def idle_ms(self) -> float:
        return self.time_ms + self.busy_ms


@dataclass
class CacheAccessTrace:
    accesses: List[CacheAccess]
    bytes_per_token: int = 1
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        for prev, cur in zip(self.accesses, self.accesses[1:]):
            if cur.time_ms < prev.time_ms:
                raise ValueError(f"accesses must be time-ordered ({cur.time_ms} after {prev.time_ms})")
        for a in self.accesses:
            if not 0 <= a.tokens_cached <= a.tokens_required:
                raise ValueError(f"session {a.session_id}: tokens_cached must be within [0, tokens_required]")

    def __len__(self) -> int:
        return len(self.accesses)

    def to_ndjson(self) -> str:
        header = {"kind": "access-trace", "bytes_per_token": self.bytes_per_token, "meta": self.meta}
        lines = [dumps_canonical(header)] + [dumps_canonical(asdict(a)) for a in self.accesses]
        return "\n".join(lines) + "\n"

    def write(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_ndjson(), encoding="utf-8")
        return path

    @classmethod
    def read(cls, path: Path) -> "CacheAccessTrace":
        try:
            lines = [json.loads(x) for x in Path(path).read_text(encoding="utf-8").splitlines() if x.strip()]
        except (OSError, json.JSONDecodeError) as e:
            raise RuntimeError(f"Error reading access trace {path}: {e}") from e
        header = lines[0] if lines and lines[0].get("kind") == "access-trace" else {}
        body = lines[1:] if header else lines
        return cls(accesses=[CacheAccess(**d) for d in body],
                   bytes_per_token=int(header.get("bytes_per_token", 1)), meta=dict(header.get("meta", {})))


def _access_cost(access: CacheAccess, resident: bool, prefix_fraction: float = 0.0) -> int:
    cached = access.tokens_cached if resident else 0
    shared = min(int(prefix_fraction * access.tokens_required), access.tokens_required)
    return access.tokens_required - max(cached, shared)


def belady_replay(trace: CacheAccessTrace, capacity: int, prefix_fraction: float = 0.0) -> int:
    """
    Replay with clairvoyant farthest-next-use eviction and return total prefill tokens.

    Entries never used again go first; ties evict the larger entry, then the lower
    session id. Exact optimum when all entries are the same size. ``prefix_fraction``
    prices misses the way prefix-sharing policies pay them.

    Raises:
        CapacityError: a single access needs more than ``capacity`` bytes.
    """
    accesses = trace.accesses
    bpt = trace.bytes_per_token
    next_use: List[float] = [math.inf] * len(accesses)
    last_seen: Dict[int, int] = {}
    for i in range(len(accesses) - 1, -1, -1):
        sid = accesses[i].session_id
        next_use[i] = last_seen.get(sid, math.inf)
        last_seen[sid] = i

    size: Dict[int, int] = {}
    upcoming: Dict[int, float] = {}
    used = 0
    cost = 0
    for i, a in enumerate(accesses):
        sid = a.session_id
        cost += _access_cost(a, sid in size, prefix_fraction)
        new_bytes = a.tokens_after * bpt
        if new_bytes > capacity:
            raise CapacityError(f"access {i} needs {new_bytes} bytes, capacity is {capacity}",
                                bytes_needed=new_bytes)
        used -= size.pop(sid, 0)
        upcoming.pop(sid, None)
        while used + new_bytes > capacity:
            victim = max(size, key=lambda s: (upcoming[s], size[s], -s))
            used -= size.pop(victim)
            upcoming.pop(victim)
        size[sid] = new_bytes
        upcoming[sid] = next_use[i]
        used += new_bytes
    return cost


def replay_policy(trace: CacheAccessTrace, capacity: int, policy: EvictionPolicy,
                  weights: Optional[EvictionWeights] = None,
                  prefix_fraction: float = config.PREFIX_FRACTION) -> int:
    """
    Replay an online eviction policy on one pool and return total prefill tokens.

    Entries are stamped with the time their step goes idle, so a session that is still
    computing counts as the most recently used. WA-LRU entries get their TTL once the
    step ends and the tool call starts, as the simulator sets it.
    """
    pool = WorkerState(worker_id=0, kv_capacity_bytes=capacity)
    bpt = trace.bytes_per_token
    shared = prefix_fraction if policy.shares_prefix else 0.0
    pending_ttl: Dict[int, CacheAccess] = {}
    cost = 0
    for i, a in enumerate(trace.accesses):
        sid = a.session_id
        cost += _access_cost(a, sid in pool.resident, shared)
        new_bytes = a.tokens_after * bpt
        if new_bytes > capacity:
            raise CapacityError(f"access {i} needs {new_bytes} bytes, capacity is {capacity}",
                                worker_id=0, bytes_needed=new_bytes)
        if sid in pool.resident:
            pool.remove_entry(sid)
        pending_ttl.pop(sid, None)
        if policy == EvictionPolicy.EVICT_ALL:
            continue
        for other, started in list(pending_ttl.items()):
            if started.idle_ms <= a.time_ms:
                if other in pool.resident:
                    pool.resident[other].set_ttl(started.idle_ms, started.ttl_ms)
                del pending_ttl[other]
        for victim in select_victims(pool, new_bytes - pool.free_bytes, policy, a.time_ms, weights):
            pool.remove_entry(victim)
        pool.add_entry(CacheEntry(sid, 0, a.tokens_after, bytes_per_token=bpt, last_access=a.idle_ms,
                                  reuse_prob=a.reuse_prob))
        if policy == EvictionPolicy.WA_LRU and a.ttl_ms > 0:
            pending_ttl[sid] = a
    return cost


def competitive_ratio(policy_cost: float, opt_cost: float) -> float:
    """policy/opt; 1.0 when both are 0, inf when only the optimum is 0."""
    if opt_cost == 0:
        if policy_cost == 0:
            return 1.0
        LOG.warning(f"Optimal replay cost is 0 while the policy paid {policy_cost}; ratio is infinite")
        return math.inf
    return policy_cost / opt_cost


def peak_working_set(trace: CacheAccessTrace) -> int:
    """Largest total bytes of sessions between their first and last access."""
    last = {a.session_id: i for i, a in enumerate(trace.accesses)}
    live: Dict[int, int] = {}
    total = peak = 0
    for i, a in enumerate(trace.accesses):
        new_bytes = a.tokens_after * trace.bytes_per_token
        total += new_bytes - live.get(a.session_id, 0)
        live[a.session_id] = new_bytes
        peak = max(peak, total)
        if last[a.session_id] == i:
            total -= live.pop(a.session_id)
    return peak


def compare_policies(trace: CacheAccessTrace, capacity: int,
                     policies: Sequence[EvictionPolicy] = tuple(EvictionPolicy),
                     weights: Optional[EvictionWeights] = None,
                     prefix_fraction: float = config.PREFIX_FRACTION) -> List[Dict[str, Any]]:
    """One row per policy: replay cost, Belady cost and competitive ratio.

    The optimum is priced with the shared prefix free, like the prefix-sharing policies.
    """
    opt = belady_replay(trace, capacity, prefix_fraction)
    rows = []
    for policy in policies:
        cost = replay_policy(trace, capacity, policy, weights, prefix_fraction)
        ratio = competitive_ratio(cost, opt)
        rows.append({"policy": policy.value, "cost": cost, "opt_cost": opt, "ratio": ratio,
                     "degenerate": opt == 0, "capacity": capacity, "accesses": len(trace)})
    return rows


def build_access_trace(tasks: Sequence[Task], cost_model: CostModel, tools: Mapping[str, ToolType],
                       ttl_cfg: TtlConfig = TtlConfig(), max_context: int = config.MAX_CONTEXT_TOKENS,
                       perfect: bool = False) -> CacheAccessTrace:
    """
    Contention-free access trace of the given tasks.

    Steps run back to back with their tool latencies in between, as if every cache hit.
    Each access records its step's compute time as ``busy_ms``. With ``perfect`` the
    reuse probability is 1 for every non-final step and the TTL covers the actual tool
    call; otherwise both come from each task's hinted graph and the tool's latency
    percentile.
    """
    obs = ObservationEma()
    accesses: List[CacheAccess] = []
    for task in tasks:
        t = task.submit_time
        context = 0
        n = len(task.trajectory)
        for j, step in enumerate(task.trajectory):
            prompt = min(context + step.new_tokens, max_context)
            reusable = max(0, min(context, prompt - step.new_tokens))
            after = min(prompt + step.output_tokens, max_context)
            compute = cost_model.prefill_ms(prompt - reusable) + cost_model.decode_ms(step.output_tokens)
            last = j == n - 1
            if perfect:
                reuse = 0.0 if last else 1.0
                ttl = 0.0 if last else step.tool_latency_ms + 1.0
            else:
                at_step = Task(task.task_id, task.tenant_id, task.aeg, step.node, task.submit_time,
                               context_tokens=after)
                reuse = reuse_probability(at_step, task.aeg, obs)
                tool = tools.get(step.tool) if step.tool else None
                ttl = compute_ttl(tool, (), ttl_cfg, 0.0) if tool else 0.0
            accesses.append(CacheAccess(t, task.task_id, prompt, reusable, after, reuse, ttl, compute))
            if not last and step.tool:
                obs.update(step.tool, task.trajectory[j + 1].new_tokens)
            t += compute + (0.0 if last else step.tool_latency_ms)
            context = after
    accesses.sort(key=lambda a: (a.time_ms, a.session_id))
    return CacheAccessTrace(accesses=accesses, bytes_per_token=cost_model.bytes_per_token,
                            meta={"tasks": len(tasks), "perfect": perfect})


def observation_chain_trace(k: int, c: int, bytes_per_token: int = 1) -> CacheAccessTrace:
    """A single session whose j-th step reads j*c tokens, fully reusable after the first."""
    accesses = [CacheAccess(float(j), 0, j * c, 0 if j == 1 else j * c, j * c)
                for j in range(1, k + 1)]
    return CacheAccessTrace(accesses=accesses, bytes_per_token=bytes_per_token,
                            meta={"k": k, "c": c})
