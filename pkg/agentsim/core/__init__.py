"""Domain types, events, errors and shared helpers."""

from agentsim.core.errors import CapacityError, ConfigError, HintError
from agentsim.core.events import EventKind, EventLog, SimEvent
from agentsim.core.model import (
    AgentExecutionGraph,
    CacheEntry,
    CostModel,
    Edge,
    LatencyDistribution,
    Request,
    StepPlan,
    StepRecord,
    Task,
    Tenant,
    TenantClass,
    ToolType,
    WorkerState,
    expected_duration,
)

__all__ = [
    "CapacityError",
    "ConfigError",
    "HintError",
    "EventKind",
    "EventLog",
    "SimEvent",
    "AgentExecutionGraph",
    "CacheEntry",
    "CostModel",
    "Edge",
    "LatencyDistribution",
    "Request",
    "StepPlan",
    "StepRecord",
    "Task",
    "Tenant",
    "TenantClass",
    "ToolType",
    "WorkerState",
    "expected_duration",
]
