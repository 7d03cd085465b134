"""afs.py : Agent Fair Share urgency and per-epoch capacity allocation."""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional

from agentsim import config
from agentsim.core.model import AgentExecutionGraph, CostModel, Task, Tenant

LOG = logging.getLogger(__name__)


def work_remain(task: Task, graph: Optional[AgentExecutionGraph], cost_model: CostModel) -> float:
    """
    Expected GPU-ms of prefill and decode the task still needs.

    Parameters:
    - task (Task): the task; ``current_node``/``node_done`` mark its position.
    - graph (AgentExecutionGraph): graph to walk, normally ``task.aeg``.
    - cost_model (CostModel): token rates.

    Returns:
    - float: probability-weighted compute of the pending nodes; 0 once finished.
    """
    if task.finished:
        return 0.0
    graph = graph if graph is not None else task.aeg
    if task.current_node not in graph.nodes:
        return 0.0
    x = graph.expected_from(lambda n: cost_model.node_compute_ms(graph, n), key=("work",) + cost_model.key())
    if not task.node_done:
        return x[task.current_node]
    return sum(e.prob * x[e.dst] for e in graph.successors(task.current_node))


def task_urgency(task: Task, cost_model: CostModel, now: float, floor_ms: float = config.EPOCH_MS) -> float:
    """Remaining work over time to deadline; past-deadline tasks divide by ``floor_ms``."""
    if math.isinf(task.deadline):
        return 0.0
    return work_remain(task, task.aeg, cost_model) / max(task.deadline - now, floor_ms)


def afs_score(tenant: Tenant, tasks: Iterable[Task], now: float, cost_model: CostModel,
              floor_ms: float = config.EPOCH_MS) -> float:
    """Tenant urgency: the sum of its active tasks' urgencies."""
    return sum(task_urgency(t, cost_model, now, floor_ms)
               for t in tasks if t.tenant_id == tenant.tenant_id and not t.finished)


def allocate_epoch(afs: Mapping[str, float], capacity: float) -> Dict[str, int]:
    """
    Split ``capacity`` GPU-ms among tenants in proportion to urgency.

    Allocations are whole GPU-ms and sum to ``capacity`` exactly. Shares are floored
    and the units left over go to the largest fractional remainders, ties broken by
    tenant order. A tenant with nonzero urgency that rounds down to nothing then gets
    one unit from the largest allocation, as long as one can spare it. All-zero
    urgencies split evenly.

    Raises:
        ValueError: if capacity is not positive.
    """
    if capacity <= 0:
        raise ValueError(f"capacity must be > 0, got {capacity}")
    units = int(round(capacity))
    names = list(afs)
    if not names:
        return {}
    weight = {n: max(0.0, afs[n]) for n in names}
    total = sum(weight.values())
    if total <= 0:
        base, extra = divmod(units, len(names))
        return {n: base + (1 if i < extra else 0) for i, n in enumerate(names)}

    quota = {n: weight[n] / total * units for n in names}
    alloc = {n: math.floor(quota[n]) for n in names}
    by_remainder = sorted(names, key=lambda n: (-(quota[n] - alloc[n]), names.index(n)))
    for i in range(units - sum(alloc.values())):
        alloc[by_remainder[i % len(names)]] += 1

    for n in names:
        if weight[n] > 0 and alloc[n] == 0:
            donor = max(names, key=lambda k: (alloc[k], -names.index(k)))
            if alloc[donor] <= 1:
                break
            alloc[donor] -= 1
            alloc[n] = 1
    return alloc


@dataclass
class AfsState:
    """Per-tenant urgency, allocation and cumulative service, epoch by epoch."""

    epoch_ms: float = config.EPOCH_MS
    block_threshold_ms: float = config.BLOCK_THRESHOLD_MS
    urgency: Dict[str, float] = field(default_factory=dict)
    allocation: Dict[str, int] = field(default_factory=dict)
    service_ms: Dict[str, float] = field(default_factory=dict)
    history: List[Dict] = field(default_factory=list)
    record_history: bool = True

    def start_epoch(self, epoch: int, urgencies: Mapping[str, float], capacity: float) -> Dict[str, int]:
        self.urgency = dict(urgencies)
        self.allocation = allocate_epoch(self.urgency, capacity) if self.urgency else {}
        for tenant in self.urgency:
            self.service_ms.setdefault(tenant, 0.0)
        if self.record_history:
            for tenant in sorted(self.service_ms):
                self.history.append({
                    "epoch": epoch,
                    "tenant": tenant,
                    "urgency": self.urgency.get(tenant, 0.0),
                    "allocation": self.allocation.get(tenant, 0),
                    "service_ms": self.service_ms[tenant],
                })
        return self.allocation

    def charge(self, tenant: str, ms: float) -> None:
        self.service_ms[tenant] = self.service_ms.get(tenant, 0.0) + ms

    def budget_lanes(self, tenant: str) -> float:
        return self.allocation.get(tenant, 0) / self.epoch_ms

    def share_used(self, tenant: str, running_lanes: int) -> float:
        """Running lanes over budgeted lanes; an unbudgeted idle tenant counts as 0."""
        budget = self.budget_lanes(tenant)
        if budget > 0:
            return running_lanes / budget
        return 0.0 if running_lanes == 0 else math.inf
