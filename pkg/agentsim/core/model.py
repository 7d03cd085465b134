"""model.py : Shared domain types for the agent-workflow simulator.

Every other module speaks in these types: agent execution graphs, tasks and their
realized trajectories, per-session KV-cache entries, worker state and the cost model.
All of them serialize to plain JSON-compatible dicts via ``to_dict``/``from_dict``.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from agentsim import config
from agentsim.core.errors import CapacityError, ConfigError

NodeId = int


class LatencyFamily(str, Enum):
    LOGNORMAL = "lognormal"
    EMPIRICAL = "empirical"


def nearest_rank(samples: Sequence[float], p: float) -> float:
    """Nearest-rank percentile (p in (0, 100]) of a non-empty sample."""
    ordered = np.sort(np.asarray(samples, dtype=float))
    rank = max(1, math.ceil(p / 100.0 * len(ordered)))
    return float(ordered[rank - 1])


@dataclass(frozen=True)
class LatencyDistribution:
    """A latency model in milliseconds.

    ``mu``/``sigma`` are the parameters of the log of the latency in ms. The empirical
    family draws uniformly from ``samples``.
    """

    family: LatencyFamily = LatencyFamily.LOGNORMAL
    mu: float = 0.0
    sigma: float = 0.0
    samples: Tuple[float, ...] = ()

    def __post_init__(self):
        issues = []
        if self.sigma < 0:
            issues.append(("sigma", f"must be >= 0, got {self.sigma}"))
        if self.family == LatencyFamily.EMPIRICAL and not self.samples:
            issues.append(("samples", "empirical distribution needs at least one sample"))
        if issues:
            raise ConfigError(issues)

    @classmethod
    def from_quantiles(cls, p50: float, p95: float) -> "LatencyDistribution":
        """Fit a log-normal whose median and 95th percentile match."""
        z95 = float(stats.norm.ppf(0.95))
        return cls(mu=math.log(p50), sigma=max(0.0, math.log(p95 / p50) / z95))

    @classmethod
    def from_mean_p95(cls, mean: float, p95: float) -> "LatencyDistribution":
        """Fit a log-normal to a mean and a 95th percentile.

        Solves sigma^2/2 - z*sigma + ln(p95/mean) = 0 for the smaller root; when no real
        root exists the closest fit, sigma = z, is used.
        """
        z95 = float(stats.norm.ppf(0.95))
        disc = z95 * z95 - 2.0 * math.log(p95 / mean)
        sigma = z95 - math.sqrt(disc) if disc > 0 else z95
        return cls(mu=math.log(mean) - sigma * sigma / 2.0, sigma=sigma)

    @classmethod
    def from_mean_cv(cls, mean: float, cv: float) -> "LatencyDistribution":
        """Log-normal with the given mean and coefficient of variation."""
        sigma2 = math.log1p(cv * cv)
        return cls(mu=math.log(mean) - sigma2 / 2.0, sigma=math.sqrt(sigma2))

    @classmethod
    def constant(cls, ms: float) -> "LatencyDistribution":
        return cls(family=LatencyFamily.EMPIRICAL, samples=(float(ms),))

    def quantile(self, q: float) -> float:
        """Latency at probability ``q`` in (0, 1)."""
        if self.family == LatencyFamily.EMPIRICAL:
            return nearest_rank(self.samples, q * 100.0)
        return math.exp(self.mu + self.sigma * float(stats.norm.ppf(q)))

    def median(self) -> float:
        return self.quantile(0.5)

    def mean(self) -> float:
        if self.family == LatencyFamily.EMPIRICAL:
            return float(np.mean(self.samples))
        return math.exp(self.mu + self.sigma * self.sigma / 2.0)

    def sample(self, rng: np.random.Generator) -> float:
        if self.family == LatencyFamily.EMPIRICAL:
            return float(self.samples[int(rng.integers(len(self.samples)))])
        if self.sigma == 0:
            return math.exp(self.mu)
        return float(rng.lognormal(self.mu, self.sigma))

    def to_dict(self) -> Dict[str, Any]:
        return {"family": self.family.value, "mu": self.mu, "sigma": self.sigma,
                "samples": list(self.samples)}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "LatencyDistribution":
        return cls(family=LatencyFamily(d.get("family", "lognormal")), mu=float(d.get("mu", 0.0)),
                   sigma=float(d.get("sigma", 0.0)), samples=tuple(float(x) for x in d.get("samples", ())))


@dataclass(frozen=True)
class ToolType:
    name: str
    latency: LatencyDistribution

    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "latency": self.latency.to_dict()}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ToolType":
        return cls(name=d["name"], latency=LatencyDistribution.from_dict(d["latency"]))


@dataclass(frozen=True)
class Edge:
    src: NodeId
    dst: NodeId
    prob: float
    retry: bool = False


@dataclass(frozen=True)
class AgentExecutionGraph:
    """Probabilistic graph of an agent's inference steps.

    ``tokens`` holds the expected (new prompt tokens, output tokens) of each node and is
    what duration and remaining-work estimates are computed from. ``shared_prefix`` maps
    a branch child to the prefix length it shares with its parent. The first node is the
    entry node.
    """

    nodes: Tuple[NodeId, ...]
    edges: Tuple[Edge, ...] = ()
    tool_of: Mapping[NodeId, Optional[str]] = field(default_factory=dict)
    terminal: FrozenSet[NodeId] = frozenset()
    tokens: Mapping[NodeId, Tuple[int, int]] = field(default_factory=dict)
    shared_prefix: Mapping[NodeId, int] = field(default_factory=dict)
    _memo: Dict[Any, Any] = field(default_factory=dict, compare=False, repr=False, hash=False)

    def __post_init__(self):
        out: Dict[NodeId, List[Edge]] = {n: [] for n in self.nodes}
        for e in self.edges:
            out.setdefault(e.src, []).append(e)
        for n in out:
            out[n].sort(key=lambda e: e.dst)
        object.__setattr__(self, "_out", out)

    @property
    def entry(self) -> Optional[NodeId]:
        return self.nodes[0] if self.nodes else None

    def successors(self, node: NodeId) -> List[Edge]:
        return self._out.get(node, [])

    def continue_prob(self, node: NodeId) -> float:
        return min(1.0, sum(e.prob for e in self.successors(node)))

    def termination_prob(self, node: NodeId) -> float:
        return max(0.0, 1.0 - self.continue_prob(node))

    def validate(self) -> List[Tuple[str, str]]:
        """Return every structural problem as (field path, message)."""
        issues: List[Tuple[str, str]] = []
        node_set = set(self.nodes)
        if len(node_set) != len(self.nodes):
            issues.append(("nodes", "duplicate node ids"))
        for i, e in enumerate(self.edges):
            if not 0.0 <= e.prob <= 1.0:
                issues.append((f"edges[{i}].prob", f"{e.prob} outside [0, 1]"))
            if e.src not in node_set or e.dst not in node_set:
                issues.append((f"edges[{i}]", f"references unknown node ({e.src}->{e.dst})"))
        for n in self.nodes:
            total = sum(e.prob for e in self.successors(n))
            if total > 1.0 + 1e-9:
                issues.append((f"nodes[{n}]", f"outgoing probabilities sum to {total:.4f} > 1"))
        if self._forward_order() is None:
            issues.append(("edges", "cycle formed by edges not marked as retry"))
        for i, e in enumerate(self.edges):
            if e.retry and e.dst not in self._ancestors(e.src) | {e.src}:
                issues.append((f"edges[{i}]", "retry edge must target an ancestor"))
        return issues

    def _forward_order(self) -> Optional[List[NodeId]]:
        """Topological order over non-retry edges, or None if they contain a cycle."""
        indeg = {n: 0 for n in self.nodes}
        for e in self.edges:
            if not e.retry and e.dst in indeg:
                indeg[e.dst] += 1
        ready = sorted(n for n, d in indeg.items() if d == 0)
        order: List[NodeId] = []
        while ready:
            n = ready.pop(0)
            order.append(n)
            for e in self.successors(n):
                if e.retry or e.dst not in indeg:
                    continue
                indeg[e.dst] -= 1
                if indeg[e.dst] == 0:
                    ready.append(e.dst)
        return order if len(order) == len(self.nodes) else None

    def _ancestors(self, node: NodeId) -> set:
        parents: Dict[NodeId, List[NodeId]] = {}
        for e in self.edges:
            if not e.retry:
                parents.setdefault(e.dst, []).append(e.src)
        seen, stack = set(), [node]
        while stack:
            for p in parents.get(stack.pop(), []):
                if p not in seen:
                    seen.add(p)
                    stack.append(p)
        return seen

    def expected_from(self, cost: Callable[[NodeId], float], key: Any = None) -> Dict[NodeId, float]:
        """Expected accumulated cost from each node onward (the node itself included).

        Solves x = c + P x. Pure DAGs are folded in reverse topological order; graphs
        with retry back-edges go through a linear solve. Results are memoized per ``key``.
        """
        if key is not None and key in self._memo:
            return self._memo[key]
        c = {n: float(cost(n)) for n in self.nodes}
        has_retry = any(e.retry for e in self.edges)
        order = None if has_retry else self._forward_order()
        if order is not None:
            x: Dict[NodeId, float] = {}
            for n in reversed(order):
                x[n] = c[n] + sum(e.prob * x[e.dst] for e in self.successors(n))
        else:
            index = {n: i for i, n in enumerate(self.nodes)}
            q = np.zeros((len(self.nodes), len(self.nodes)))
            for e in self.edges:
                q[index[e.src], index[e.dst]] += e.prob
            try:
                sol = np.linalg.solve(np.eye(len(self.nodes)) - q, np.array([c[n] for n in self.nodes]))
            except np.linalg.LinAlgError as e:
                raise ConfigError([("edges", f"graph never terminates: {e}")]) from e
            x = {n: float(sol[index[n]]) for n in self.nodes}
        if key is not None:
            self._memo[key] = x
        return x

    def to_dict(self) -> Dict[str, Any]:
        return {
            "nodes": list(self.nodes),
            "edges": [[e.src, e.dst, e.prob, e.retry] for e in self.edges],
            "tool_of": {str(k): v for k, v in sorted(self.tool_of.items())},
            "terminal": sorted(self.terminal),
            "tokens": {str(k): list(v) for k, v in sorted(self.tokens.items())},
            "shared_prefix": {str(k): v for k, v in sorted(self.shared_prefix.items())},
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "AgentExecutionGraph":
        return cls(
            nodes=tuple(int(n) for n in d["nodes"]),
            edges=tuple(Edge(int(s), int(t), float(p), bool(r)) for s, t, p, r in d.get("edges", [])),
            tool_of={int(k): v for k, v in d.get("tool_of", {}).items()},
            terminal=frozenset(int(n) for n in d.get("terminal", [])),
            tokens={int(k): (int(v[0]), int(v[1])) for k, v in d.get("tokens", {}).items()},
            shared_prefix={int(k): int(v) for k, v in d.get("shared_prefix", {}).items()},
        )


@dataclass(frozen=True)
class CostModel:
    prefill_rate: float = config.PREFILL_RATE
    decode_rate: float = config.DECODE_RATE
    instances_per_node: int = config.LANES_PER_WORKER
    bytes_per_token: int = config.BYTES_PER_TOKEN
    tool_median_ms: Mapping[str, float] = field(
        default_factory=lambda: {name: q[0] for name, q in config.TOOL_LATENCY_TABLE.items()})

    def __post_init__(self):
        issues = []
        if self.prefill_rate <= 0:
            issues.append(("cost.prefill_rate", "must be > 0"))
        if self.decode_rate <= 0:
            issues.append(("cost.decode_rate", "must be > 0"))
        if self.instances_per_node < 1:
            issues.append(("cost.instances_per_node", "must be >= 1"))
        if self.bytes_per_token < 1:
            issues.append(("cost.bytes_per_token", "must be >= 1"))
        if issues:
            raise ConfigError(issues)

    def prefill_ms(self, tokens: int) -> float:
        return 1000.0 * tokens / self.prefill_rate

    def decode_ms(self, tokens: int) -> float:
        return 1000.0 * tokens / self.decode_rate

    def node_compute_ms(self, graph: AgentExecutionGraph, node: NodeId) -> float:
        prompt, output = graph.tokens.get(node, (0, 0))
        return self.prefill_ms(prompt) + self.decode_ms(output)

    def key(self) -> Tuple:
        return (self.prefill_rate, self.decode_rate, tuple(sorted(self.tool_median_ms.items())))


class TenantClass(str, Enum):
    HEAVY = "heavy"
    MEDIUM = "medium"
    LIGHT = "light"


@dataclass
class Tenant:
    tenant_id: str
    tenant_class: TenantClass
    arrival_rate: float
    active_tasks: set = field(default_factory=set)

    def __post_init__(self):
        if self.arrival_rate <= 0:
            raise ConfigError([(f"tenants[{self.tenant_id}].arrival_rate", "must be > 0")])

    def to_dict(self) -> Dict[str, Any]:
        return {"tenant_id": self.tenant_id, "tenant_class": self.tenant_class.value,
                "arrival_rate": self.arrival_rate, "active_tasks": sorted(self.active_tasks)}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Tenant":
        return cls(tenant_id=d["tenant_id"], tenant_class=TenantClass(d["tenant_class"]),
                   arrival_rate=float(d["arrival_rate"]), active_tasks=set(d.get("active_tasks", [])))


@dataclass(frozen=True)
class StepPlan:
    """One realized step of a task, fixed at generation time."""

    node: NodeId
    tool: Optional[str]
    new_tokens: int
    output_tokens: int
    tool_latency_ms: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {"node": self.node, "tool": self.tool, "new_tokens": self.new_tokens,
                "output_tokens": self.output_tokens, "tool_latency_ms": self.tool_latency_ms}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "StepPlan":
        return cls(node=int(d["node"]), tool=d.get("tool"), new_tokens=int(d["new_tokens"]),
                   output_tokens=int(d["output_tokens"]), tool_latency_ms=float(d.get("tool_latency_ms", 0.0)))


@dataclass
class StepRecord:
    prompt_tokens: int
    output_tokens: int
    cached_tokens: int = 0
    regen_tokens: int = 0
    recomputed_tokens: int = 0
    tool_wait_ms: float = 0.0
    worker_id: int = -1
    start_ms: float = 0.0
    end_ms: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "StepRecord":
        return cls(**d)


@dataclass
class Task:
    """An agent task instance.

    ``current_node`` is the node of the step being executed or about to execute;
    ``node_done`` flips to True once that step finished and the task is in a tool call.
    """

    task_id: int
    tenant_id: str
    aeg: AgentExecutionGraph
    current_node: NodeId
    submit_time: float
    deadline: float = math.inf
    context_tokens: int = 0
    steps_done: int = 0
    records: List[StepRecord] = field(default_factory=list)
    trajectory: List[StepPlan] = field(default_factory=list)
    agent_type: str = "default"
    tenant_class: Optional[TenantClass] = None
    home_worker: Optional[int] = None
    node_done: bool = False
    finish_time: Optional[float] = None

    @property
    def finished(self) -> bool:
        return self.finish_time is not None

    def advance_context(self, tokens: int) -> None:
        if tokens < self.context_tokens:
            raise ValueError(f"task {self.task_id}: context cannot shrink ({self.context_tokens} -> {tokens})")
        self.context_tokens = tokens

    def to_dict(self) -> Dict[str, Any]:
        return {
            "task_id": self.task_id,
            "tenant_id": self.tenant_id,
            "aeg": self.aeg.to_dict(),
            "current_node": self.current_node,
            "submit_time": self.submit_time,
            "deadline": self.deadline if math.isfinite(self.deadline) else None,
            "context_tokens": self.context_tokens,
            "steps_done": self.steps_done,
            "records": [r.to_dict() for r in self.records],
            "trajectory": [s.to_dict() for s in self.trajectory],
            "agent_type": self.agent_type,
            "tenant_class": self.tenant_class.value if self.tenant_class else None,
            "home_worker": self.home_worker,
            "node_done": self.node_done,
            "finish_time": self.finish_time,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Task":
        deadline = d.get("deadline")
        return cls(
            task_id=int(d["task_id"]),
            tenant_id=d["tenant_id"],
            aeg=AgentExecutionGraph.from_dict(d["aeg"]),
            current_node=int(d["current_node"]),
            submit_time=float(d["submit_time"]),
            deadline=math.inf if deadline is None else float(deadline),
            context_tokens=int(d.get("context_tokens", 0)),
            steps_done=int(d.get("steps_done", 0)),
            records=[StepRecord.from_dict(r) for r in d.get("records", [])],
            trajectory=[StepPlan.from_dict(s) for s in d.get("trajectory", [])],
            agent_type=d.get("agent_type", "default"),
            tenant_class=TenantClass(d["tenant_class"]) if d.get("tenant_class") else None,
            home_worker=d.get("home_worker"),
            node_done=bool(d.get("node_done", False)),
            finish_time=d.get("finish_time"),
        )


@dataclass
class CacheEntry:
    session_id: int
    worker_id: int
    tokens: int
    bytes_per_token: int = config.BYTES_PER_TOKEN
    last_access: float = 0.0
    ttl_expiry: Optional[float] = None
    reuse_prob: float = 0.0
    pinned: bool = False
    migrating_to: Optional[int] = None
    bytes: int = field(init=False)

    def __post_init__(self):
        self.bytes = self.tokens * self.bytes_per_token

    def resize(self, tokens: int) -> None:
        self.tokens = tokens
        self.bytes = tokens * self.bytes_per_token

    def set_ttl(self, now: float, ttl_ms: float) -> None:
        self.ttl_expiry = now + max(0.0, ttl_ms)

    def protected(self, now: float) -> bool:
        return self.ttl_expiry is not None and self.ttl_expiry > now

    def to_dict(self) -> Dict[str, Any]:
        return {"session_id": self.session_id, "worker_id": self.worker_id, "tokens": self.tokens,
                "bytes_per_token": self.bytes_per_token, "bytes": self.bytes,
                "last_access": self.last_access, "ttl_expiry": self.ttl_expiry,
                "reuse_prob": self.reuse_prob, "pinned": self.pinned, "migrating_to": self.migrating_to}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "CacheEntry":
        return cls(session_id=int(d["session_id"]), worker_id=int(d["worker_id"]), tokens=int(d["tokens"]),
                   bytes_per_token=int(d.get("bytes_per_token", config.BYTES_PER_TOKEN)),
                   last_access=float(d.get("last_access", 0.0)), ttl_expiry=d.get("ttl_expiry"),
                   reuse_prob=float(d.get("reuse_prob", 0.0)), pinned=bool(d.get("pinned", False)),
                   migrating_to=d.get("migrating_to"))


@dataclass
class Request:
    """A queued inference step of one session."""

    session_id: int
    tenant_id: str
    step_index: int
    enqueued_ms: float
    est_ms: float
    stolen: bool = False
    blocked: bool = False


@dataclass
class WorkerState:
    worker_id: int
    kv_capacity_bytes: int
    lanes: int = 1
    resident: Dict[int, CacheEntry] = field(default_factory=dict)
    queue: List[Request] = field(default_factory=list)
    running: Dict[int, Request] = field(default_factory=dict)
    load: float = 0.0
    busy_ms: float = 0.0
    idle_since: Optional[float] = 0.0
    used_bytes: int = 0
    reserved: Dict[int, int] = field(default_factory=dict)

    @property
    def free_bytes(self) -> int:
        return self.kv_capacity_bytes - self.used_bytes

    @property
    def free_lanes(self) -> int:
        return self.lanes - len(self.running)

    def add_entry(self, entry: CacheEntry) -> None:
        if entry.session_id in self.resident:
            raise ValueError(f"worker {self.worker_id}: session {entry.session_id} already resident")
        if self.used_bytes + entry.bytes > self.kv_capacity_bytes:
            raise CapacityError(f"adding session {entry.session_id} exceeds KV capacity",
                                worker_id=self.worker_id, bytes_needed=entry.bytes)
        entry.worker_id = self.worker_id
        self.resident[entry.session_id] = entry
        self.used_bytes += entry.bytes

    def remove_entry(self, session_id: int) -> CacheEntry:
        entry = self.resident.pop(session_id)
        self.used_bytes -= entry.bytes
        return entry

    def resize_entry(self, session_id: int, tokens: int) -> None:
        entry = self.resident[session_id]
        delta = tokens * entry.bytes_per_token - entry.bytes
        if self.used_bytes + delta > self.kv_capacity_bytes:
            raise CapacityError(f"growing session {session_id} exceeds KV capacity",
                                worker_id=self.worker_id, bytes_needed=delta)
        entry.resize(tokens)
        self.used_bytes += delta

    def queued_work_ms(self) -> float:
        return sum(r.est_ms for r in self.queue)


def expected_duration(task: Task, cost_model: CostModel) -> float:
    """
    Expected end-to-end duration of a task along its AEG, in ms.

    Each node contributes its prefill of the expected new prompt tokens plus decode of
    the expected output; each transition to a further step adds the median latency of
    the node's tool. Node visits are weighted by their probability along the graph, so
    retry edges and early termination shorten or lengthen the expectation.

    Parameters:
    - task (Task): task whose ``aeg`` is evaluated from its entry node.
    - cost_model (CostModel): token rates and per-tool median latencies.

    Returns:
    - float: expected duration in ms (0 for an empty graph).
    """
    graph = task.aeg
    if graph.entry is None:
        return 0.0

    def node_ms(node: NodeId) -> float:
        tool = graph.tool_of.get(node)
        tool_ms = cost_model.tool_median_ms.get(tool, 0.0) if tool else 0.0
        return cost_model.node_compute_ms(graph, node) + graph.continue_prob(node) * tool_ms

    return graph.expected_from(node_ms, key=("duration",) + cost_model.key())[graph.entry]
