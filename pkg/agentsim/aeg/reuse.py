"""Reuse probability of a paused session's KV cache."""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional

from agentsim import config
from agentsim.core.model import AgentExecutionGraph, Task

LOG = logging.getLogger(__name__)


def overlap(context_tokens: int, expected_obs_tokens: float) -> float:
    """Fraction of the next prompt that is already in the cached context."""
    if expected_obs_tokens <= 0:
        return 1.0
    if context_tokens <= 0:
        return 0.0
    return context_tokens / (context_tokens + expected_obs_tokens)


@dataclass
class ObservationEma:
    """Per-tool exponential moving average of observation length in tokens."""

    smoothing: float = config.EMA_SMOOTHING
    default_tokens: float = config.DEFAULT_OBS_TOKENS
    _means: Dict[str, float] = field(default_factory=dict)

    def update(self, tool: str, tokens: float) -> None:
        prev = self._means.get(tool)
        self._means[tool] = float(tokens) if prev is None else (
            (1.0 - self.smoothing) * prev + self.smoothing * float(tokens))

    def expected(self, tool: Optional[str]) -> float:
        if tool is None:
            return self.default_tokens
        return self._means.get(tool, self.default_tokens)


def reuse_probability(task: Task, graph: AgentExecutionGraph, obs_len_model: ObservationEma) -> float:
    """
    Probability that the task's cached context is reused by its next step.

    Sums, over the successors of the current node, the edge probability times the
    fraction of the next prompt covered by the cache. Branch children that declare a
    shared prefix use that prefix instead of the observation model.

    Args:
        task: paused task; ``current_node`` is the node that just ran and
            ``context_tokens`` its cached context.
        graph: graph to evaluate (the task's own AEG or an inferred one).
        obs_len_model: expected observation length per tool.

    Returns:
        A value in [0, 1]; 0 at terminal nodes.

    Raises:
        ValueError: if the current node is not in the graph.
    """
    node = task.current_node
    if node not in graph.nodes:
        raise ValueError(f"task {task.task_id}: node {node} not in graph")

    obs = obs_len_model.expected(graph.tool_of.get(node))
    total = 0.0
    for edge in graph.successors(node):
        shared = graph.shared_prefix.get(edge.dst)
        if shared is not None and task.context_tokens > 0:
            o = min(1.0, shared / task.context_tokens)
        else:
            o = overlap(task.context_tokens, obs)
        total += edge.prob * o
    return min(1.0, max(0.0, total))
