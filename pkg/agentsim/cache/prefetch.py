"""Pick the step to prefetch a paused session's cache for."""

from typing import Optional

from agentsim.core.model import AgentExecutionGraph, NodeId, Task


def prefetch_target(task: Task, graph: AgentExecutionGraph) -> Optional[NodeId]:
    """Most probable successor of the current node (lowest id on ties), None when terminal."""
    succ = graph.successors(task.current_node) if task.current_node in graph.nodes else []
    if not succ:
        return None
    return max(succ, key=lambda e: (e.prob, -e.dst)).dst


def reload_start_ms(pause_start_ms: float, predicted_latency_ms: float, reload_ms: float,
                    now_ms: float) -> float:
    """When to start a reload so it lands as the tool call is predicted to return."""
    return max(now_ms, pause_start_ms + predicted_latency_ms - reload_ms)
