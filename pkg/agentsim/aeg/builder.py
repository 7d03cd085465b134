"""Build agent execution graphs from structured orchestration hints."""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from agentsim.core.errors import HintError
from agentsim.core.model import AgentExecutionGraph, Edge


@dataclass(frozen=True)
class HintStep:
    """
    One step of a hint.

    ``continue_prob`` is the probability of moving on to the next step. ``branches``
    (child index, probability) replaces it for tree-shaped agents. ``retry_to`` names an
    earlier step the agent may jump back to with ``retry_prob``. ``shared_prefix_tokens``
    is the prefix a branch child shares with its parent.
    """

    tool: Optional[str]
    continue_prob: float = 1.0
    branches: Tuple[Tuple[int, float], ...] = ()
    retry_to: Optional[int] = None
    retry_prob: float = 0.0
    tokens: Tuple[int, int] = (0, 0)
    shared_prefix_tokens: Optional[int] = None


@dataclass(frozen=True)
class AegHint:
    steps: Tuple[HintStep, ...]

    @classmethod
    def react(cls, tools: Sequence[Optional[str]], continue_prob: float,
              tokens: Sequence[Tuple[int, int]] = ()) -> "AegHint":
        """Linear ReAct-style hint: every step continues with ``continue_prob``."""
        steps = []
        for i, tool in enumerate(tools):
            last = i == len(tools) - 1
            steps.append(HintStep(
                tool=tool,
                continue_prob=0.0 if last else continue_prob,
                tokens=tuple(tokens[i]) if i < len(tokens) else (0, 0),
            ))
        return cls(steps=tuple(steps))


def _check_prob(issues: List[Tuple[str, str]], path: str, p: float) -> None:
    if not 0.0 <= p <= 1.0:
        issues.append((path, f"probability {p} outside [0, 1]"))


def build_from_hints(hint: AegHint) -> AgentExecutionGraph:
    """
    Turn a hint into an AgentExecutionGraph.

    Args:
        hint: ordered steps; step i becomes node i.

    Returns:
        A chain (or tree, when branches are given) whose edge probabilities equal the
        hint's. Residual mass at each node is its termination probability.

    Raises:
        HintError: empty hint, probabilities outside [0, 1], outgoing mass above 1,
            branches or retries pointing at invalid steps.
    """
    if not hint.steps:
        raise HintError([("steps", "hint must contain at least one step")])

    n = len(hint.steps)
    issues: List[Tuple[str, str]] = []
    edges: List[Edge] = []
    for i, step in enumerate(hint.steps):
        path = f"steps[{i}]"
        out = 0.0
        if step.branches:
            for j, (child, p) in enumerate(step.branches):
                _check_prob(issues, f"{path}.branches[{j}]", p)
                if not i < child < n:
                    issues.append((f"{path}.branches[{j}]", f"child {child} must be a later step"))
                    continue
                edges.append(Edge(i, child, p))
                out += p
        elif i < n - 1 and step.continue_prob > 0:
            _check_prob(issues, f"{path}.continue_prob", step.continue_prob)
            edges.append(Edge(i, i + 1, step.continue_prob))
            out += step.continue_prob
        if step.retry_to is not None and step.retry_prob > 0:
            _check_prob(issues, f"{path}.retry_prob", step.retry_prob)
            if not 0 <= step.retry_to <= i:
                issues.append((f"{path}.retry_to", f"retry target {step.retry_to} must be an earlier step"))
            else:
                edges.append(Edge(i, step.retry_to, step.retry_prob, retry=True))
                out += step.retry_prob
        if out > 1.0 + 1e-9:
            issues.append((path, f"outgoing probabilities sum to {out:.4f} > 1"))

    if issues:
        raise HintError(issues)

    nodes = tuple(range(n))
    has_out = {e.src for e in edges}
    graph = AgentExecutionGraph(
        nodes=nodes,
        edges=tuple(edges),
        tool_of={i: s.tool for i, s in enumerate(hint.steps)},
        terminal=frozenset(i for i in nodes if i not in has_out),
        tokens={i: tuple(s.tokens) for i, s in enumerate(hint.steps)},
        shared_prefix={i: s.shared_prefix_tokens for i, s in enumerate(hint.steps)
                       if s.shared_prefix_tokens is not None},
    )
    structural = graph.validate()
    if structural:
        raise HintError(structural)
    return graph


def edge_set(graph: AgentExecutionGraph) -> Dict[Tuple[str, str], float]:
    """Edges keyed by (source tool, destination tool), for comparing tool-level graphs."""
    return {(graph.tool_of[e.src], graph.tool_of[e.dst]): e.prob for e in graph.edges}
