"""Infer tool-level execution graphs from completed tasks when no hints are given."""

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

from agentsim import config
from agentsim.core.model import AgentExecutionGraph, Edge

LOG = logging.getLogger(__name__)

TERMINAL = "<end>"


class NotReady:
    """Returned while fewer tasks than the cold-start threshold have completed."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "NotReady"

    def __bool__(self) -> bool:
        return False


NOT_READY = NotReady()


@dataclass
class PatternModel:
    """Bigram transition counts over tool types for one agent type."""

    agent_type: str = "default"
    theta_conf: float = config.THETA_CONF
    cold_start: int = config.COLD_START_TASKS
    counts: Counter = field(default_factory=Counter)
    first_seen: Dict[str, Tuple[int, str]] = field(default_factory=dict)
    tasks_observed: int = 0

    @property
    def ready(self) -> bool:
        return self.tasks_observed >= self.cold_start

    def observe(self, trace: Sequence[str]) -> None:
        """Record one completed task's tool sequence."""
        self.tasks_observed += 1
        for pos, tool in enumerate(trace):
            rank = (pos, tool)
            if tool not in self.first_seen or rank < self.first_seen[tool]:
                self.first_seen[tool] = rank
        for a, b in zip(trace, list(trace[1:]) + [TERMINAL]):
            self.counts[(a, b)] += 1

    def transition_probs(self) -> Dict[str, Dict[str, float]]:
        totals: Counter = Counter()
        for (a, _), n in self.counts.items():
            totals[a] += n
        probs: Dict[str, Dict[str, float]] = {}
        for (a, b), n in sorted(self.counts.items()):
            probs.setdefault(a, {})[b] = n / totals[a]
        return probs

    def tool_order(self) -> List[str]:
        return sorted(self.first_seen, key=lambda t: self.first_seen[t])


PatternResult = Union[AgentExecutionGraph, NotReady]


def infer_pattern(model: PatternModel, completed_traces: Sequence[Sequence[str]] = ()) -> PatternResult:
    """
    Fold ``completed_traces`` into ``model`` and return its current graph.

    Nodes are tool types in first-appearance order. An edge is kept when its empirical
    transition probability reaches ``theta_conf``; edges that point back to an earlier
    tool are marked as retries.

    Returns:
        The inferred graph, or NOT_READY below the cold-start threshold.
    """
    for trace in completed_traces:
        model.observe(trace)
    if not model.ready:
        return NOT_READY

    tools = model.tool_order()
    ids = {t: i for i, t in enumerate(tools)}
    edges: List[Edge] = []
    for a, succ in model.transition_probs().items():
        for b, p in succ.items():
            if b == TERMINAL or p < model.theta_conf:
                continue
            edges.append(Edge(ids[a], ids[b], p, retry=ids[b] <= ids[a]))

    has_out = {e.src for e in edges}
    graph = AgentExecutionGraph(
        nodes=tuple(range(len(tools))),
        edges=tuple(edges),
        tool_of={i: t for t, i in ids.items()},
        terminal=frozenset(i for i in range(len(tools)) if i not in has_out),
    )
    LOG.debug(f"Inferred {len(edges)} edges over {len(tools)} tools for {model.agent_type}")
    return graph


def node_of_tool(graph: AgentExecutionGraph, tool: Optional[str]) -> Optional[int]:
    for node, name in graph.tool_of.items():
        if name == tool:
            return node
    return None


def predict_next(graph: AgentExecutionGraph, tool: str) -> str:
    """Most likely next tool after ``tool``, or TERMINAL."""
    node = node_of_tool(graph, tool)
    if node is None:
        return TERMINAL
    succ = graph.successors(node)
    if not succ:
        return TERMINAL
    best = max(succ, key=lambda e: (e.prob, -e.dst))
    if best.prob >= graph.termination_prob(node):
        return graph.tool_of[best.dst]
    return TERMINAL


def prediction_accuracy(graph: AgentExecutionGraph, traces: Sequence[Sequence[str]]) -> float:
    """Share of transitions (end of trace included) predicted correctly by ``graph``."""
    correct = total = 0
    for trace in traces:
        for i, tool in enumerate(trace):
            actual = trace[i + 1] if i + 1 < len(trace) else TERMINAL
            correct += predict_next(graph, tool) == actual
            total += 1
    return correct / total if total else 0.0
